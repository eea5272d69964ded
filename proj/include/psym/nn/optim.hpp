#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "psym/errors.hpp"
#include "psym/nn/encoder.hpp"
#include "psym/nn/ops.hpp"

namespace psym::nn {

enum class OptimizerKind { LarsSgd, Adam };

std::string to_string(OptimizerKind kind);
OptimizerKind optimizer_kind_from_string(const std::string& s);

inline constexpr double kLarsEpsilon = 1e-9;

/// Optimizer hyperparameters plus per-tensor moment buffers.
///
/// Buffers are laid out in the flattened order of the groups passed to the
/// step functions; the same group list must be passed on every step.
struct OptState {
  OptimizerKind kind = OptimizerKind::LarsSgd;
  double base_lr = 1e-3;
  double weight_decay = 0.0;
  double momentum = 0.9;  // LARS
  double beta1 = 0.9;     // Adam
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t step_count = 0;
  std::vector<std::vector<double>> first_moment;   // LARS momentum / Adam m
  std::vector<std::vector<double>> second_moment;  // Adam v

  static OptState lars(double lr, double weight_decay = 0.0, double momentum = 0.9);
  static OptState adam(double lr, double weight_decay = 0.0);
};

/// LARS trust ratio ||w|| / (||g|| + wd ||w|| + eps); 1 when ||w|| == 0.
double lars_trust_ratio(double weight_norm, double grad_norm, double weight_decay);

/// One LARS momentum-SGD step. Non-excluded tensors use
///   v <- m v + lr * ratio * (g + wd w),  w <- w - v.
/// Excluded tensors use ratio 1 and no weight decay. Clears grads.
template <typename T>
void lars_step(OptState& opt, std::span<const ParamGroup<T>> groups);

/// One bias-corrected Adam step with L2 weight decay (g += wd w). Clears grads.
template <typename T>
void adam_step(OptState& opt, std::span<const ParamGroup<T>> groups);

template <typename T>
void zero_grads(std::span<const ParamGroup<T>> groups);

/// Runs `loss_fn` on each microbatch with its loss scaled by
/// size(microbatch) / effective_batch and backpropagates, so the accumulated
/// gradients equal those of one pass over the concatenated batch. Returns the
/// combined (effective-batch) loss value.
///
/// Every microbatch but the last must have the same size; the sizes must sum
/// to effective_batch.
template <typename Batch, typename LossFn>
double accumulate_gradients(std::span<const Batch> microbatches, std::size_t effective_batch, LossFn&& loss_fn) {
  if (microbatches.empty()) throw ConfigError("accumulate_gradients: no microbatches");
  const std::size_t first = microbatches.front().size();
  std::size_t total = 0;
  for (std::size_t i = 0; i < microbatches.size(); ++i) {
    const std::size_t n = microbatches[i].size();
    if (n == 0 || (i + 1 < microbatches.size() && n != first) || n > first)
      throw ConfigError("accumulate_gradients: inconsistent microbatch sizes");
    total += n;
  }
  if (total != effective_batch)
    throw ConfigError("accumulate_gradients: microbatches hold " + std::to_string(total) + " items, expected " +
                      std::to_string(effective_batch));
  double combined = 0.0;
  for (const auto& mb : microbatches) {
    const double weight = static_cast<double>(mb.size()) / static_cast<double>(effective_batch);
    auto loss = loss_fn(mb);
    using T = typename decltype(loss)::value_type;
    auto scaled = scale(loss, static_cast<T>(weight));
    combined += static_cast<double>(scaled.item());
    scaled.backward();
  }
  return combined;
}

void to_json(nlohmann::json& j, const OptState& s);
/// Includes moment buffers (as exact doubles) so resumed runs continue bit-identically.
void from_json(const nlohmann::json& j, OptState& s);

}  // namespace psym::nn
