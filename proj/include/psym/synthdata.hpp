#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "psym/nn/tensor.hpp"

namespace psym::synth {

inline constexpr int kDatasetFormatVersion = 1;

enum class Side { Left, Right };
enum class Split { Train, Val, Test };

std::string to_string(Side s);
std::string to_string(Split s);
Side side_from_string(const std::string& s);
Split split_from_string(const std::string& s);

/// Half-open integer pixel rectangle [x_min, x_max) x [y_min, y_max).
struct BBox {
  int x_min = 0;
  int x_max = 0;
  int y_min = 0;
  int y_max = 0;

  long long area() const { return static_cast<long long>(x_max - x_min) * (y_max - y_min); }
  bool valid() const { return x_min < x_max && y_min < y_max; }
  bool operator==(const BBox&) const = default;
};

void to_json(nlohmann::json& j, const BBox& b);
void from_json(const nlohmann::json& j, BBox& b);

/// Overlap of a patch and an ROI divided by the smaller of the two areas.
/// 0 unless both overlap extents are positive. Throws ArgumentError for
/// degenerate rectangles.
double abnormal_area(const BBox& patch, const BBox& roi);

/// Single-channel image, row-major, values in [0, 1]; 0 is background.
struct Image {
  int height = 0;
  int width = 0;
  std::vector<float> pixels;

  Image() = default;
  Image(int h, int w, float fill = 0.0f) : height(h), width(w), pixels(static_cast<std::size_t>(h) * w, fill) {}
  float& at(int y, int x) { return pixels[static_cast<std::size_t>(y) * width + x]; }
  float at(int y, int x) const { return pixels[static_cast<std::size_t>(y) * width + x]; }
  bool operator==(const Image&) const = default;
};

Image flip_horizontal(const Image& img);

struct Lesion {
  Side side = Side::Left;
  BBox box;
  double contrast = 0.0;
  /// 1 = low-contrast grade, 2 = high-contrast grade.
  int grade = 1;
};

struct PhantomConfig {
  int height = 256;
  int width = 192;
  double lesion_probability = 0.5;
  int max_lesions = 2;
  int lesion_radius_min = 5;
  int lesion_radius_max = 12;
  double lesion_contrast = 0.35;
  double noise_level = 0.02;
  /// Amplitudes of the shared fine (radius 3) and coarse (radius 12) tissue texture.
  double fine_texture = 0.03;
  double coarse_texture = 0.06;
  /// Amplitude of independent smooth per-side tissue variation.
  double asymmetry = 0.02;
  int max_planted_shift = 3;
  int max_search_shift = 8;
  /// False fills the whole image with tissue (no background).
  bool breast_mask = true;

  void validate() const;
};

void to_json(nlohmann::json& j, const PhantomConfig& c);
void from_json(const nlohmann::json& j, PhantomConfig& c);

struct PhantomCase {
  int case_id = 0;
  Image left;
  Image right;
  std::vector<Lesion> lesions;
  /// Displacement of the flipped right image content relative to the left.
  int planted_dx = 0;
  int planted_dy = 0;

  bool has_lesions() const { return !lesions.empty(); }
  /// Side holding the lesions (Left when there are none).
  Side lesion_side() const { return lesions.empty() ? Side::Left : lesions.front().side; }
};

/// Deterministic phantom for (seed, config).
PhantomCase generate_case(std::uint64_t seed, const PhantomConfig& config, int case_id = 0);

struct Registration {
  int dx = 0;
  int dy = 0;
  double ncc = 0.0;
  /// flip(moving) resampled so that aligned(x, y) = flip(moving)(x + dx, y + dy); 0 outside.
  Image aligned;
};

/// Flips `moving` horizontally and finds the integer shift in
/// [-max_shift, max_shift]^2 maximizing normalized cross-correlation over the
/// fixed image's nonzero (breast) pixels. Ties go to the smallest |(dx,dy)|,
/// then lexicographically smallest (dx, dy).
Registration register_pair(const Image& fixed, const Image& moving, int max_shift = 8);

/// A case after registration: both images in the frame of the fixed
/// (lesion-bearing, or left) image.
struct RegisteredCase {
  int case_id = 0;
  Side fixed_side = Side::Left;
  Image left;
  Image right;
  std::vector<Lesion> lesions;
  int dx = 0;
  int dy = 0;
};

RegisteredCase register_case(const PhantomCase& c, int max_shift);

struct PatchPair {
  int pair_id = 0;
  int case_id = 0;
  int row = 0;
  int col = 0;
  int x = 0;
  int y = 0;
  int size = 0;
  nn::Tensor p1;  // [s, s], from the left image
  nn::Tensor p2;  // [s, s], from the right image
  double area = 0.0;  // abnormal area A
  Split split = Split::Train;

  BBox box() const { return {x, x + size, y, y + size}; }
};

struct SamplingRules {
  double max_background_fraction = 0.5;
  double max_mask_disagreement = 0.25;
};

/// Non-overlapping grid tiles surviving the background and border filters.
/// pair_id is left at 0; the caller numbers pairs.
std::vector<PatchPair> sample_pairs(const RegisteredCase& c, int patch_size, const SamplingRules& rules = {});

double tile_area(const std::vector<Lesion>& lesions, const BBox& tile);

struct LabeledPatch {
  int patch_id = 0;
  int case_id = 0;
  Side side = Side::Left;
  int x = 0;
  int y = 0;
  int size = 0;
  int binary_label = 0;  // 1 abnormal
  int class_label = 0;   // 0 background, 1 low-contrast lesion, 2 high-contrast lesion
  Split split = Split::Train;
  nn::Tensor pixels;  // [s, s]
};

struct SplitOptions {
  std::uint64_t seed = 0;
  /// Downstream patches inherit their case's split instead of a patch-level shuffle.
  bool leakage_guard = true;
};

struct CaseRecord {
  int case_id = 0;
  Split split = Split::Train;
  Side fixed_side = Side::Left;
  int planted_dx = 0;
  int planted_dy = 0;
  int dx = 0;
  int dy = 0;
  std::vector<Lesion> lesions;
};

struct DataConfig {
  PhantomConfig phantom;
  int n_cases = 200;
  int patch_size = 32;
  std::uint64_t seed = 17;
  bool leakage_guard = true;

  void validate() const;
};

void to_json(nlohmann::json& j, const DataConfig& c);
void from_json(const nlohmann::json& j, DataConfig& c);

/// In-memory dataset: per-case metadata, registered images, pairs and the
/// labeled downstream patches (all with materialized pixels).
struct Dataset {
  DataConfig config;
  std::vector<CaseRecord> cases;
  std::vector<RegisteredCase> images;
  std::vector<PatchPair> pairs;
  std::vector<LabeledPatch> labeled;

  std::vector<PatchPair> pairs_in(Split s) const;
  std::vector<LabeledPatch> labeled_in(Split s) const;
};

/// Patient-level 8:1:1 split of case ids by seeded shuffle. Requires >= 10 cases.
std::vector<Split> make_case_splits(int n_cases, std::uint64_t seed);

/// Assigns case splits, propagates them to pairs and builds the labeled
/// downstream set (lesion-centred abnormal patches plus the contralateral
/// patch at the same location).
void make_splits(Dataset& ds, const SplitOptions& options);

/// Generates, registers, samples and splits a full dataset.
Dataset build_dataset(const DataConfig& config);

/// Writes manifest.json plus one f32 blob per registered image.
void write_dataset(const Dataset& ds, const std::filesystem::path& dir, const nlohmann::json& config_echo);
/// Loads the manifest and re-materializes patches from the image blobs.
Dataset load_dataset(const std::filesystem::path& dir);

/// Crop [y, y+s) x [x, x+s) as a [s, s] tensor.
nn::Tensor crop(const Image& img, int x, int y, int size);

}  // namespace psym::synth
