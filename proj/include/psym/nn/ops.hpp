#pragma once

#include <span>

#include "psym/nn/tensor.hpp"

// Differentiable operations. Each records a GradFn on its output when grad
// mode is on and some input requires grad. Layouts are row-major; images are
// [N, C, H, W].
namespace psym::nn {

// ---- elementwise / reductions ----
template <typename T> BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T> BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T> BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T> BasicTensor<T> scale(const BasicTensor<T>& x, T factor);
template <typename T> BasicTensor<T> add_scalar(const BasicTensor<T>& x, T value);
template <typename T> BasicTensor<T> relu(const BasicTensor<T>& x);
template <typename T> BasicTensor<T> sigmoid(const BasicTensor<T>& x);
template <typename T> BasicTensor<T> sum(const BasicTensor<T>& x);
template <typename T> BasicTensor<T> mean(const BasicTensor<T>& x);
/// Copy with a new shape of equal element count; gradient flows through.
template <typename T> BasicTensor<T> reshape(const BasicTensor<T>& x, Shape shape);

// ---- layers ----
/// Same-padded stride-1 convolution; w is [O, C, K, K] with odd K, b is [O].
template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& x, const BasicTensor<T>& w, const BasicTensor<T>& b);
/// 2x2 mean pooling with stride 2; H and W must be even.
template <typename T> BasicTensor<T> mean_pool2(const BasicTensor<T>& x);
/// [N, C, H, W] -> [N, C].
template <typename T> BasicTensor<T> global_avg_pool(const BasicTensor<T>& x);
/// [N, C, H, W] -> [N, C]; the gradient goes to the first maximal position.
template <typename T> BasicTensor<T> global_max_pool(const BasicTensor<T>& x);

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

/// Per-channel batch normalization of [N, C, H, W] with affine gamma, beta [C].
/// Training mode normalizes with the batch statistics (biased variance) and
/// updates running_mean / running_var in place (unbiased variance, momentum
/// 0.1); evaluation mode normalizes with the running statistics.
template <typename T>
BasicTensor<T> batch_norm2d(const BasicTensor<T>& x, const BasicTensor<T>& gamma, const BasicTensor<T>& beta,
                            BasicTensor<T>& running_mean, BasicTensor<T>& running_var, bool training);
/// x [N, I], w [O, I], b [O] -> [N, O].
template <typename T>
BasicTensor<T> linear(const BasicTensor<T>& x, const BasicTensor<T>& w, const BasicTensor<T>& b);

// ---- batch plumbing ----
/// Rows [begin, end) along the leading (batch) axis.
template <typename T> BasicTensor<T> rows(const BasicTensor<T>& x, std::size_t begin, std::size_t end);
/// [N, d1] ++ [N, d2] -> [N, d1 + d2].
template <typename T> BasicTensor<T> concat_features(const BasicTensor<T>& a, const BasicTensor<T>& b);

// ---- pair geometry ----
/// Row-wise Euclidean distance, [N, d] x [N, d] -> [N]. Gradient at D = 0 is 0.
template <typename T>
BasicTensor<T> euclidean_distance(const BasicTensor<T>& a, const BasicTensor<T>& b);
/// Row-wise x / ||x||, with ||x|| floored at 1e-12.
template <typename T> BasicTensor<T> l2_normalize_rows(const BasicTensor<T>& x);
/// Row-wise mean squared difference, [N, d] x [N, d] -> [N].
template <typename T> BasicTensor<T> mse_rows(const BasicTensor<T>& a, const BasicTensor<T>& b);

// ---- losses ----
inline constexpr double kProbClamp = 1e-7;

/// Per-sample soft-label binary cross entropy on logits z ([N] or [N, 1]).
/// q = sigmoid(z) clamped to [1e-7, 1 - 1e-7];
/// L_i = -[(1 - P_i) log q_i + P_i log(1 - q_i)]. P is a constant.
template <typename T>
BasicTensor<T> soft_bce_with_logits(const BasicTensor<T>& z, std::span<const double> soft_labels);

/// Per-sample softmax cross entropy, logits [N, K] and class indices.
template <typename T>
BasicTensor<T> softmax_cross_entropy(const BasicTensor<T>& logits, std::span<const int> labels);

/// Constant tensor holding `values` (no grad).
template <typename T> BasicTensor<T> constant(Shape shape, std::span<const double> values);

}  // namespace psym::nn
