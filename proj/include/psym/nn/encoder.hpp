#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "psym/nn/tensor.hpp"

namespace psym::nn {

/// Tensors sharing one optimizer treatment.
template <typename T>
struct ParamGroup {
  std::string name;
  std::vector<BasicTensor<T>> tensors;
  bool lars_excluded = false;
};

template <typename T>
struct NamedParameter {
  std::string name;
  BasicTensor<T> tensor;
};

/// Small convolutional encoder: per stage a 3x3 conv, batch norm, ReLU and
/// 2x2 mean pool; then a 3x3 conv to `embedding_dim` channels, batch norm,
/// ReLU and global pooling. The pooled vector is the embedding.
struct EncoderConfig {
  std::size_t input_side = 32;
  std::vector<std::size_t> channels_per_stage{4, 8};
  std::size_t embedding_dim = 16;
  std::uint64_t seed = 0;
  /// Without batch norm the convs carry trainable biases instead.
  bool batch_norm = true;
  /// "max" or "avg".
  std::string pooling = "max";

  void validate() const;
};

void to_json(nlohmann::json& j, const EncoderConfig& c);
void from_json(const nlohmann::json& j, EncoderConfig& c);

template <typename T>
class Encoder {
 public:
  static constexpr std::size_t kKernel = 3;

  explicit Encoder(const EncoderConfig& config);

  const EncoderConfig& config() const { return config_; }

  /// patches [N, 1, S, S] (or [N, S, S]) with S == input_side -> [N, embedding_dim].
  /// Training mode uses batch statistics and updates the running ones.
  BasicTensor<T> forward(const BasicTensor<T>& patches, bool training = false) const;

  /// Conv weights in one LARS-adapted group; biases and batch-norm affine
  /// parameters in an excluded group.
  std::vector<ParamGroup<T>> param_groups(const std::string& prefix) const;
  /// Parameters and batch-norm running statistics in declaration order; used
  /// for checkpoints and casts.
  std::vector<NamedParameter<T>> named_parameters(const std::string& prefix) const;

  template <typename U>
  Encoder<U> cast() const {
    Encoder<U> out(config_);
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
  struct Conv {
    BasicTensor<T> weight;
    BasicTensor<T> bias;
    BasicTensor<T> gamma;
    BasicTensor<T> beta;
    mutable BasicTensor<T> running_mean;
    mutable BasicTensor<T> running_var;
  };

  BasicTensor<T> apply(const Conv& conv, const BasicTensor<T>& x, bool training) const;

  EncoderConfig config_;
  std::vector<Conv> stages_;
  Conv head_;
};

/// He-uniform initial values for a tensor with the given fan-in.
template <typename T, typename Rng>
std::vector<T> he_uniform(std::size_t count, std::size_t fan_in, Rng& rng);

}  // namespace psym::nn
