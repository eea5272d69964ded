#include "psym/nn/encoder.hpp"

#include <cmath>
#include <random>

#include "psym/errors.hpp"
#include "psym/nn/ops.hpp"

namespace psym::nn {

void EncoderConfig::validate() const {
  if (embedding_dim < 2) throw ConfigError("embedding_dim must be >= 2");
  if (channels_per_stage.empty()) throw ConfigError("encoder needs at least one stage");
  for (auto c : channels_per_stage)
    if (c == 0) throw ConfigError("stage channel counts must be positive");
  const std::size_t div = std::size_t{1} << channels_per_stage.size();
  if (input_side == 0 || input_side % div != 0)
    throw ConfigError("input_side " + std::to_string(input_side) + " must be divisible by 2^" +
                      std::to_string(channels_per_stage.size()));
  if (pooling != "max" && pooling != "avg") throw ConfigError("pooling must be 'max' or 'avg', got '" + pooling + "'");
}

void to_json(nlohmann::json& j, const EncoderConfig& c) {
  j = nlohmann::json{{"input_side", c.input_side},
                     {"channels_per_stage", c.channels_per_stage},
                     {"embedding_dim", c.embedding_dim},
                     {"seed", c.seed},
                     {"batch_norm", c.batch_norm},
                     {"pooling", c.pooling}};
}

void from_json(const nlohmann::json& j, EncoderConfig& c) {
  c.input_side = j.value("input_side", c.input_side);
  c.channels_per_stage = j.value("channels_per_stage", c.channels_per_stage);
  c.embedding_dim = j.value("embedding_dim", c.embedding_dim);
  c.seed = j.value("seed", c.seed);
  c.batch_norm = j.value("batch_norm", c.batch_norm);
  c.pooling = j.value("pooling", c.pooling);
}

template <typename T, typename Rng>
std::vector<T> he_uniform(std::size_t count, std::size_t fan_in, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<T> v(count);
  for (auto& x : v) x = static_cast<T>(dist(rng));
  return v;
}

template std::vector<float> he_uniform<float>(std::size_t, std::size_t, std::mt19937_64&);
template std::vector<double> he_uniform<double>(std::size_t, std::size_t, std::mt19937_64&);

template <typename T>
Encoder<T>::Encoder(const EncoderConfig& config) : config_(config) {
  config_.validate();
  std::mt19937_64 rng(config_.seed);
  constexpr std::size_t k = kKernel;
  std::size_t in_c = 1;
  auto make_conv = [&](std::size_t in, std::size_t out) {
    Conv conv;
    conv.weight = BasicTensor<T>::parameter({out, in, k, k}, he_uniform<T>(out * in * k * k, in * k * k, rng));
    if (config_.batch_norm) {
      conv.bias = BasicTensor<T>(Shape{out});
      conv.gamma = BasicTensor<T>::parameter({out}, std::vector<T>(out, T{1}));
      conv.beta = BasicTensor<T>::parameter({out}, std::vector<T>(out, T{0}));
      conv.running_mean = BasicTensor<T>(Shape{out});
      conv.running_var = BasicTensor<T>(Shape{out}, std::vector<T>(out, T{1}));
    } else {
      conv.bias = BasicTensor<T>::parameter({out}, std::vector<T>(out, T{0}));
    }
    return conv;
  };
  for (auto c : config_.channels_per_stage) {
    stages_.push_back(make_conv(in_c, c));
    in_c = c;
  }
  head_ = make_conv(in_c, config_.embedding_dim);
}

template <typename T>
BasicTensor<T> Encoder<T>::apply(const Conv& conv, const BasicTensor<T>& x, bool training) const {
  auto y = conv2d(x, conv.weight, conv.bias);
  if (config_.batch_norm) y = batch_norm2d(y, conv.gamma, conv.beta, conv.running_mean, conv.running_var, training);
  return relu(y);
}

template <typename T>
BasicTensor<T> Encoder<T>::forward(const BasicTensor<T>& patches, bool training) const {
  const std::size_t s = config_.input_side;
  BasicTensor<T> x = patches;
  if (x.rank() == 3) x = x.reshaped({x.dim(0), 1, x.dim(1), x.dim(2)});
  if (x.rank() != 4 || x.dim(1) != 1 || x.dim(2) != s || x.dim(3) != s)
    throw ConfigError("encoder expects patches [N,1," + std::to_string(s) + "," + std::to_string(s) + "], got " +
                      shape_str(patches.shape()));
  for (std::size_t i = 0; i < stages_.size(); ++i) {
    const std::string name = "stage" + std::to_string(i);
    x = apply(stages_[i], x, training);
    check_finite(x, name + ".conv");
    x = mean_pool2(x);
  }
  x = apply(head_, x, training);
  check_finite(x, "embed.conv");
  return config_.pooling == "max" ? global_max_pool(x) : global_avg_pool(x);
}

template <typename T>
std::vector<NamedParameter<T>> Encoder<T>::named_parameters(const std::string& prefix) const {
  std::vector<NamedParameter<T>> out;
  auto add = [&](const std::string& base, const Conv& conv) {
    out.push_back({base + ".weight", conv.weight});
    if (!config_.batch_norm) {
      out.push_back({base + ".bias", conv.bias});
      return;
    }
    out.push_back({base + ".bn.gamma", conv.gamma});
    out.push_back({base + ".bn.beta", conv.beta});
    out.push_back({base + ".bn.running_mean", conv.running_mean});
    out.push_back({base + ".bn.running_var", conv.running_var});
  };
  for (std::size_t i = 0; i < stages_.size(); ++i) add(prefix + "stage" + std::to_string(i), stages_[i]);
  add(prefix + "embed", head_);
  return out;
}

template <typename T>
std::vector<ParamGroup<T>> Encoder<T>::param_groups(const std::string& prefix) const {
  ParamGroup<T> weights{prefix + "encoder.weights", {}, false};
  ParamGroup<T> biases{prefix + "encoder.biases", {}, true};
  auto add = [&](const Conv& conv) {
    weights.tensors.push_back(conv.weight);
    if (config_.batch_norm) {
      biases.tensors.push_back(conv.gamma);
      biases.tensors.push_back(conv.beta);
    } else {
      biases.tensors.push_back(conv.bias);
    }
  };
  for (const auto& conv : stages_) add(conv);
  add(head_);
  return {weights, biases};
}

template class Encoder<float>;
template class Encoder<double>;

}  // namespace psym::nn
