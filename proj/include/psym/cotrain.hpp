#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "psym/altloss.hpp"
#include "psym/gmm.hpp"
#include "psym/nn/checkpoint.hpp"
#include "psym/nn/encoder.hpp"
#include "psym/nn/optim.hpp"
#include "psym/synthdata.hpp"

namespace psym::cotrain {

enum class LossMode { CrossBce, Triplet, SslMix };
enum class LabelSource { Distance, Logit };
/// Pair abnormality score used for validation AUC: 1 - mean(q), mean(P) or mean(D).
enum class ScoreSource { Q, P, D };

std::string to_string(LossMode m);
std::string to_string(LabelSource s);
std::string to_string(ScoreSource s);
LossMode loss_mode_from_string(const std::string& s);
LabelSource label_source_from_string(const std::string& s);
ScoreSource score_source_from_string(const std::string& s);

struct TrainConfig {
  std::size_t batch_size = 64;
  double learning_rate = 1e-3;
  std::size_t epochs = 50;
  /// Microbatch size for gradient accumulation; 0 disables accumulation.
  std::size_t accumulation_microbatch = 0;
  std::uint64_t seed = 0;
  std::size_t warmup_epochs = 1;
  double momentum = 0.9;
  double weight_decay = 0.0;
  /// False trains a single network on its own soft labels.
  bool dual = true;
  LossMode loss = LossMode::CrossBce;
  LabelSource label_source = LabelSource::Distance;
  ScoreSource score = ScoreSource::Q;
  double triplet_margin = 1.0;
  double head_init_scale = 1.0;
  nn::EncoderConfig encoder;

  /// Anything but the dual cross-BCE setup on distance labels.
  bool experimental() const {
    return !dual || loss != LossMode::CrossBce || label_source != LabelSource::Distance;
  }
  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

/// Shared encoder applied to both patches of a pair, plus a dense head on the
/// concatenated embeddings producing one logit.
template <typename T>
class SiameseNet {
 public:
  /// Head weights are He-uniform scaled by head_init_scale (0 gives a zero head).
  SiameseNet(const nn::EncoderConfig& encoder, std::uint64_t head_seed, double head_init_scale = 1.0);

  struct Output {
    nn::BasicTensor<T> e1;  // [N, d]
    nn::BasicTensor<T> e2;  // [N, d]
    nn::BasicTensor<T> d;   // [N]
    nn::BasicTensor<T> z;   // [N]
    nn::BasicTensor<T> q;   // [N]
  };

  /// p1, p2 are [N, S, S] or [N, 1, S, S]. Training mode puts the encoder's
  /// batch norm on batch statistics.
  Output forward(const nn::BasicTensor<T>& p1, const nn::BasicTensor<T>& p2, bool training = false) const;

  const nn::Encoder<T>& encoder() const { return encoder_; }
  std::vector<nn::ParamGroup<T>> param_groups(const std::string& prefix) const;
  std::vector<nn::NamedParameter<T>> named_parameters(const std::string& prefix) const;

  template <typename U>
  SiameseNet<U> cast() const {
    SiameseNet<U> out(encoder_.config(), 0);
    auto src = named_parameters("");
    auto dst = out.named_parameters("");
    for (std::size_t i = 0; i < src.size(); ++i) {
      auto s = src[i].tensor.data();
      auto d = dst[i].tensor.data();
      for (std::size_t k = 0; k < s.size(); ++k) d[k] = static_cast<U>(s[k]);
    }
    return out;
  }

 private:
  nn::Encoder<T> encoder_;
  nn::BasicTensor<T> head_w_;  // [1, 2d]
  nn::BasicTensor<T> head_b_;  // [1]
};

struct PairForward {
  std::vector<float> e1;
  std::vector<float> e2;
  double D = 0.0;
  double z = 0.0;
  double q = 0.0;
};

/// Single-pair inference (no gradient recording).
PairForward pair_forward(const SiameseNet<float>& net, const synth::PatchPair& pair);

/// -[(1 - P) log q + P log(1 - q)], q clamped to [1e-7, 1 - 1e-7].
double soft_bce_loss(double P, double q);

struct CrossLosses {
  double L1 = 0.0;
  double L2 = 0.0;
  double L = 0.0;
};

/// Each network is supervised by the other's soft labels: L1 uses P2, L2 uses P1.
CrossLosses cross_losses(double P1, double P2, double q1, double q2);

/// Contiguous patch storage for fast batching.
struct PairBank {
  std::size_t side = 0;
  std::vector<float> p1;
  std::vector<float> p2;
  std::vector<double> area;
  std::vector<int> pair_id;

  static PairBank from_pairs(std::span<const synth::PatchPair> pairs);
  std::size_t size() const { return area.size(); }
  /// [n, S, S] tensors for the selected rows.
  std::pair<nn::Tensor, nn::Tensor> batch(std::span<const std::size_t> indices) const;
  std::pair<nn::Tensor, nn::Tensor> range(std::size_t begin, std::size_t end) const;
};

/// Per-pair inference outputs of one network.
struct NetScores {
  std::vector<double> D;
  std::vector<double> z;
  std::vector<double> q;
};

NetScores score_bank(const SiameseNet<float>& net, const PairBank& bank);

struct EpochMetrics {
  std::size_t epoch = 0;  // 1-based
  double loss1 = 0.0;
  double loss2 = 0.0;
  double loss = 0.0;
  double val_avg_auc = 0.0;
  gmm::GmmParams gmm1;
  gmm::GmmParams gmm2;
};

struct CoTrainState {
  explicit CoTrainState(const TrainConfig& config);

  TrainConfig config;
  SiameseNet<float> net1;
  SiameseNet<float> net2;
  gmm::GmmParams gmm1;
  gmm::GmmParams gmm2;
  nn::OptState opt1;
  nn::OptState opt2;
  std::size_t epoch = 0;  // completed epochs
  double best_val_auc = -1.0;
  std::size_t best_epoch = 0;
  std::vector<EpochMetrics> history;
};

struct SoftLabels {
  std::vector<double> P1;
  std::vector<double> P2;
};

/// Fits gmm_k on net_k's training-pair distances (or logits) and returns the
/// per-pair soft labels. Runs without gradient recording.
SoftLabels refit_soft_labels(CoTrainState& state, const PairBank& train);

/// Abnormality score per pair under the configured score source.
std::vector<double> pair_scores(const CoTrainState& state, const PairBank& pairs);

/// Validation average AUC over A cutoffs of pair_scores.
double validation_auc(const CoTrainState& state, const PairBank& val);

struct TrainHooks {
  /// Directory receiving last.psym, best.psym and metrics.csv; empty disables output.
  std::filesystem::path out_dir;
  /// Serialized into every artifact.
  nlohmann::json config_echo = nlohmann::json::object();
  /// Stop after this many completed epochs (simulates an interruption).
  std::optional<std::size_t> stop_after;
  std::function<void(const EpochMetrics&)> on_epoch;
};

/// Runs epochs state.epoch + 1 .. config.epochs. Throws NumericError with
/// epoch and batch context on a non-finite loss.
void train(CoTrainState& state, const PairBank& train_pairs, const PairBank& val_pairs, const TrainHooks& hooks = {});

std::string metrics_csv(const std::vector<EpochMetrics>& history, const nlohmann::json& config_echo);

nn::Checkpoint make_checkpoint(const CoTrainState& state, const nlohmann::json& config_echo);
void save_state(const std::filesystem::path& path, const CoTrainState& state, const nlohmann::json& config_echo);
/// Restores networks, mixtures, optimizer buffers and counters.
CoTrainState load_state(const std::filesystem::path& path);

}  // namespace psym::cotrain
