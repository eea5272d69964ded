#pragma once

// Independent scalar reference implementations used as test oracles. They
// read parameters by name and never call into psym::nn ops.

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "psym/nn/encoder.hpp"
#include "psym/nn/tensor.hpp"

namespace oracle {

struct Map {
  int c = 0, h = 0, w = 0;
  std::vector<double> v;
  double& at(int ch, int y, int x) { return v[(static_cast<std::size_t>(ch) * h + y) * w + x]; }
  double at(int ch, int y, int x) const { return v[(static_cast<std::size_t>(ch) * h + y) * w + x]; }
};

inline Map conv_same(const Map& in, const std::vector<double>& weight, const std::vector<double>& bias, int out_c,
                     int k) {
  Map out{out_c, in.h, in.w, std::vector<double>(static_cast<std::size_t>(out_c) * in.h * in.w)};
  const int r = k / 2;
  for (int o = 0; o < out_c; ++o)
    for (int y = 0; y < in.h; ++y)
      for (int x = 0; x < in.w; ++x) {
        double acc = bias.empty() ? 0.0 : bias[o];
        for (int c = 0; c < in.c; ++c)
          for (int dy = 0; dy < k; ++dy)
            for (int dx = 0; dx < k; ++dx) {
              const int yy = y + dy - r, xx = x + dx - r;
              if (yy < 0 || yy >= in.h || xx < 0 || xx >= in.w) continue;
              acc += weight[((static_cast<std::size_t>(o) * in.c + c) * k + dy) * k + dx] * in.at(c, yy, xx);
            }
        out.at(o, y, x) = acc;
      }
  return out;
}

inline void batch_norm_eval(Map& m, const std::vector<double>& gamma, const std::vector<double>& beta,
                            const std::vector<double>& mean, const std::vector<double>& var) {
  for (int c = 0; c < m.c; ++c)
    for (int y = 0; y < m.h; ++y)
      for (int x = 0; x < m.w; ++x)
        m.at(c, y, x) = gamma[c] * (m.at(c, y, x) - mean[c]) / std::sqrt(var[c] + 1e-5) + beta[c];
}

inline void relu(Map& m) {
  for (auto& x : m.v) x = std::max(0.0, x);
}

inline Map mean_pool2(const Map& in) {
  Map out{in.c, in.h / 2, in.w / 2, std::vector<double>(static_cast<std::size_t>(in.c) * (in.h / 2) * (in.w / 2))};
  for (int c = 0; c < in.c; ++c)
    for (int y = 0; y < out.h; ++y)
      for (int x = 0; x < out.w; ++x)
        out.at(c, y, x) = 0.25 * (in.at(c, 2 * y, 2 * x) + in.at(c, 2 * y, 2 * x + 1) + in.at(c, 2 * y + 1, 2 * x) +
                                  in.at(c, 2 * y + 1, 2 * x + 1));
  return out;
}

template <typename T>
std::map<std::string, std::vector<double>> parameter_values(const psym::nn::Encoder<T>& enc) {
  std::map<std::string, std::vector<double>> out;
  for (const auto& p : enc.named_parameters("")) {
    auto d = p.tensor.data();
    out[p.name] = std::vector<double>(d.begin(), d.end());
  }
  return out;
}

/// Evaluation-mode embedding of one [s, s] patch.
template <typename T>
std::vector<double> encoder_forward(const psym::nn::Encoder<T>& enc, const std::vector<double>& patch) {
  const auto& cfg = enc.config();
  auto params = parameter_values(enc);
  const int s = static_cast<int>(cfg.input_side);
  Map x{1, s, s, patch};
  auto layer = [&](const std::string& base, int out_c) {
    const int k = 3;
    if (cfg.batch_norm) {
      x = conv_same(x, params.at(base + ".weight"), {}, out_c, k);
      batch_norm_eval(x, params.at(base + ".bn.gamma"), params.at(base + ".bn.beta"), params.at(base + ".bn.running_mean"),
                      params.at(base + ".bn.running_var"));
    } else {
      x = conv_same(x, params.at(base + ".weight"), params.at(base + ".bias"), out_c, k);
    }
    relu(x);
  };
  for (std::size_t i = 0; i < cfg.channels_per_stage.size(); ++i) {
    layer("stage" + std::to_string(i), static_cast<int>(cfg.channels_per_stage[i]));
    x = mean_pool2(x);
  }
  layer("embed", static_cast<int>(cfg.embedding_dim));
  std::vector<double> e(cfg.embedding_dim);
  const std::size_t hw = static_cast<std::size_t>(x.h) * x.w;
  for (int c = 0; c < x.c; ++c) {
    const auto first = x.v.begin() + static_cast<std::ptrdiff_t>(c * hw);
    const auto last = first + static_cast<std::ptrdiff_t>(hw);
    e[c] = cfg.pooling == "max" ? *std::max_element(first, last)
                                : std::accumulate(first, last, 0.0) / static_cast<double>(hw);
  }
  return e;
}

inline double distance(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

/// Largest |analytic - numeric| / max(|analytic|, |numeric|, floor) over
/// every element of every tensor, using central differences of step h.
inline double max_fd_error(const std::function<double()>& loss, std::vector<psym::nn::Tensor64> tensors,
                           const std::vector<std::vector<double>>& analytic, double h, double floor = 1e-3) {
  double worst = 0.0;
  for (std::size_t t = 0; t < tensors.size(); ++t) {
    auto w = tensors[t].data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double orig = w[i];
      w[i] = orig + h;
      const double lp = loss();
      w[i] = orig - h;
      const double lm = loss();
      w[i] = orig;
      const double fd = (lp - lm) / (2.0 * h);
      const double a = analytic[t][i];
      worst = std::max(worst, std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), floor}));
    }
  }
  return worst;
}

inline std::vector<double> uniform_values(std::size_t n, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

}  // namespace oracle
