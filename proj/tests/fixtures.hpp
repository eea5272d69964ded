#pragma once

// Seeded data generators and brute-force references shared by the unit and
// acceptance suites.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "psym/eval.hpp"
#include "psym/synthdata.hpp"

namespace fixtures {

/// 0.8 N(2, 0.25) + 0.2 N(8, 1).
inline std::vector<double> planted_mixture(std::uint64_t seed, std::size_t n) {
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution high(0.2);
  std::normal_distribution<double> low_d(2.0, 0.5), high_d(8.0, 1.0);
  std::vector<double> v(n);
  for (auto& x : v) x = high(rng) ? high_d(rng) : low_d(rng);
  return v;
}

/// Uniform, exponential, bimodal or few-level data of random size.
inline std::vector<double> fuzzed_dataset(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> size(4, 300);
  std::uniform_int_distribution<int> kind(0, 3);
  std::uniform_real_distribution<double> u(0.0, 10.0);
  std::vector<double> v(static_cast<std::size_t>(size(rng)));
  switch (kind(rng)) {
    case 0:
      for (auto& x : v) x = u(rng);
      break;
    case 1: {
      std::exponential_distribution<double> e(0.7);
      for (auto& x : v) x = e(rng);
      break;
    }
    case 2: {
      std::normal_distribution<double> a(u(rng), 0.3 + u(rng) / 5), b(u(rng), 0.1 + u(rng) / 10);
      std::bernoulli_distribution pick(0.1 + u(rng) / 12.5);
      for (auto& x : v) x = std::abs(pick(rng) ? a(rng) : b(rng));
      break;
    }
    default: {
      std::uniform_int_distribution<int> level(0, 3);
      for (auto& x : v) x = static_cast<double>(level(rng));
    }
  }
  return v;
}

/// Pair-counting AUC with ties as 1/2.
inline double brute_force_auc(const std::vector<double>& s, const std::vector<int>& y) {
  double wins = 0.0, n = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[i] != 1 || y[j] != 0) continue;
      n += 1.0;
      wins += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
    }
  return wins / n;
}

/// Both classes present; coarse sets have many ties.
inline psym::eval::ScoredSet random_scored_set(std::mt19937_64& rng, bool coarse) {
  std::uniform_int_distribution<int> size(2, 120);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  psym::eval::ScoredSet s;
  const int n = size(rng);
  for (int i = 0; i < n; ++i) {
    const int y = i < 2 ? i : (u(rng) < 0.4 ? 1 : 0);
    const double v = u(rng) + 0.3 * y;
    s.scores.push_back(coarse ? std::round(v * 5.0) / 5.0 : v);
    s.labels.push_back(y);
  }
  return s;
}

/// Overlap pixel count over the smaller pixel count, on a 64 x 64 grid.
inline double pixel_area(const psym::synth::BBox& a, const psym::synth::BBox& b) {
  long long inter = 0, na = 0, nb = 0;
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 64; ++x) {
      const bool ia = x >= a.x_min && x < a.x_max && y >= a.y_min && y < a.y_max;
      const bool ib = x >= b.x_min && x < b.x_max && y >= b.y_min && y < b.y_max;
      na += ia;
      nb += ib;
      inter += ia && ib;
    }
  return static_cast<double>(inter) / static_cast<double>(std::min(na, nb));
}

inline psym::synth::BBox random_box(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> c(0, 62);
  int x0 = c(rng), x1 = c(rng), y0 = c(rng), y1 = c(rng);
  if (x0 > x1) std::swap(x0, x1);
  if (y0 > y1) std::swap(y0, y1);
  return {x0, x1 + 1, y0, y1 + 1};
}

inline psym::nn::EncoderConfig small_encoder(std::uint64_t seed) {
  psym::nn::EncoderConfig ec;
  ec.input_side = 16;
  ec.channels_per_stage = {4};
  ec.embedding_dim = 4;
  ec.seed = seed;
  return ec;
}

/// 16 x 16 patches; label-1 patches carry a bright central square.
inline std::vector<psym::synth::LabeledPatch> blob_patches(std::uint64_t seed, int per_split) {
  using namespace psym;
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> noise(0.2f, 0.02f);
  std::vector<synth::LabeledPatch> out;
  int id = 0;
  for (auto split : {synth::Split::Train, synth::Split::Test})
    for (int i = 0; i < per_split; ++i) {
      synth::LabeledPatch p;
      p.patch_id = id++;
      p.size = 16;
      p.binary_label = i % 2;
      p.class_label = p.binary_label;
      p.split = split;
      std::vector<float> px(256);
      for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16; ++x) {
          const bool blob = p.binary_label == 1 && std::abs(y - 8) < 4 && std::abs(x - 8) < 4;
          px[static_cast<std::size_t>(y * 16 + x)] = noise(rng) + (blob ? 0.8f : 0.0f);
        }
      p.pixels = nn::Tensor({16, 16}, std::move(px));
      out.push_back(std::move(p));
    }
  return out;
}

/// Two well-separated classes along one embedding axis.
inline psym::eval::EmbeddingSet separable_embeddings(std::mt19937_64& rng, std::size_t n) {
  std::normal_distribution<float> g(0.0f, 0.3f);
  psym::eval::EmbeddingSet s;
  s.dim = 5;
  for (std::size_t i = 0; i < n; ++i) {
    const int y = static_cast<int>(i % 2);
    s.labels.push_back(y);
    for (std::size_t j = 0; j < s.dim; ++j) s.values.push_back(g(rng) + (j == 2 ? (y ? 2.0f : -2.0f) : 0.0f));
  }
  return s;
}

}  // namespace fixtures
