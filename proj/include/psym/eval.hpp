#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "psym/nn/encoder.hpp"
#include "psym/synthdata.hpp"

namespace psym::eval {

inline constexpr int kReportFormatVersion = 1;
inline constexpr std::size_t kDefaultCutoffs = 100;

struct ScoredSet {
  std::vector<double> scores;
  std::vector<int> labels;  // 0 or 1
  std::vector<double> areas;  // optional, per item

  void validate() const;
};

/// Mann-Whitney AUC with ties counted as 1/2. Throws UndefinedMetricError
/// unless both classes are present.
double auc(std::span<const double> scores, std::span<const int> labels);
inline double auc(const ScoredSet& s) { return auc(s.scores, s.labels); }

struct CutoffSweep {
  double mean_auc = 0.0;
  std::vector<double> cutoffs;
  /// AUC per cutoff; NaN where the cutoff left a single class.
  std::vector<double> aucs;
  std::size_t evaluated = 0;
  std::size_t skipped = 0;
};

/// Labels an item abnormal iff A >= c for c_i = i / (n + 1), i = 1..n, and
/// averages AUC over the cutoffs that yield both classes.
CutoffSweep average_auc_over_cutoffs(std::span<const double> scores, std::span<const double> areas,
                                     std::size_t n_cutoffs = kDefaultCutoffs);

struct OvrResult {
  std::vector<double> per_class;
  double average = 0.0;
};

/// One-vs-rest AUC for row-major probabilities [N, K].
OvrResult ovr_auc(std::span<const double> probabilities, std::size_t n_classes, std::span<const int> labels);

// ---------------------------------------------------------------------------
// Linear probe

struct ProbeConfig {
  std::size_t epochs = 100;
  std::size_t batch_size = 32;
  double learning_rate = 0.01;
  double weight_decay = 1e-5;
  std::uint64_t seed = 0;

  void validate() const;
};

void to_json(nlohmann::json& j, const ProbeConfig& c);
void from_json(const nlohmann::json& j, ProbeConfig& c);

/// Dense layer from embedding_dim to class logits.
struct ProbeHead {
  nn::Tensor weight;  // [K, d]
  nn::Tensor bias;    // [K]

  std::size_t classes() const { return weight.dim(0); }
  std::size_t input_dim() const { return weight.dim(1); }
};

/// Row-major embeddings [N, d] with their class indices.
struct EmbeddingSet {
  std::vector<float> values;
  std::size_t dim = 0;
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
};

/// Embeds [s, s] patches with a frozen encoder (no gradient recording).
EmbeddingSet embed_patches(const nn::Encoder<float>& encoder, std::span<const synth::LabeledPatch> patches,
                           bool multiclass);

/// Adam-trained softmax-regression head. Throws ConfigError if any class is
/// absent from the training set.
ProbeHead train_linear_probe(const EmbeddingSet& train, std::size_t n_classes, const ProbeConfig& cfg);

/// Softmax probabilities [N, K].
std::vector<double> probe_probabilities(const ProbeHead& head, const EmbeddingSet& set);

/// Mean of the heads' class probabilities; heads[i] scores sets[i].
std::vector<double> ensemble_probabilities(std::span<const ProbeHead> heads, std::span<const EmbeddingSet> sets);

struct ProbeResult {
  std::size_t n_classes = 2;
  std::size_t n_train = 0;
  std::size_t n_test = 0;
  double test_auc = 0.0;  // binary AUC, or OvR average
  std::vector<double> per_class_auc;
  std::vector<double> single_head_auc;  // one entry per encoder
};

/// Trains one head per frozen encoder on training-split patches and scores the
/// test split with the averaged class probabilities. n_classes is 2 (binary
/// labels) or 3 (background / low-contrast / high-contrast).
ProbeResult probe_train_eval(std::span<const nn::Encoder<float>* const> encoders,
                             std::span<const synth::LabeledPatch> patches, std::size_t n_classes,
                             const ProbeConfig& cfg);

/// Order-sensitive checksum of every encoder parameter value.
std::uint64_t parameter_checksum(const nn::Encoder<float>& encoder);

// ---------------------------------------------------------------------------
// Reports and exports

/// "normal" (A = 0), "modest" (0 < A <= 0.5) or "high" (A > 0.5).
std::string area_band(double area);

/// A "# config" comment line, then CSV rows: pair_id, A, band and the
/// 2 x embedding_dim values of E = [g(p1), g(p2)].
void export_embeddings(const nn::Encoder<float>& encoder, std::span<const synth::PatchPair> pairs,
                       const std::filesystem::path& path,
                       const nlohmann::json& config_echo = nlohmann::json::object());

struct EvalReport {
  std::string task;
  nlohmann::json config = nlohmann::json::object();
  nlohmann::json metrics = nlohmann::json::object();
  CutoffSweep sweep;
  bool has_sweep = false;
  std::vector<double> per_class_auc;

  nlohmann::json to_json() const;
  /// metric,value rows followed by per-cutoff rows when a sweep is present.
  std::string to_csv() const;
  void write(const std::filesystem::path& json_path, const std::filesystem::path& csv_path) const;
};

}  // namespace psym::eval
