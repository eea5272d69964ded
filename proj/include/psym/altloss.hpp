#pragma once

#include <functional>
#include <span>

#include "psym/gmm.hpp"
#include "psym/nn/tensor.hpp"

// Alternative pair losses: soft triplet, soft labels from a mixture fit on
// head logits, and a view-combination loss that mixes same-patch and
// cross-patch self-supervised terms.
namespace psym::altloss {

struct TripletConfig {
  double margin = 1.0;

  void validate() const;
};

/// max(0, (1 - P) D - P D + m).
double soft_triplet_loss(double P, double D, const TripletConfig& cfg);

/// Per-sample differentiable form over distances D [N].
template <typename T>
nn::BasicTensor<T> soft_triplet_loss(const nn::BasicTensor<T>& D, std::span<const double> P,
                                     const TripletConfig& cfg);

/// 1 - posterior of the high-mean component at z. A high logit means "normal",
/// so the label is the probability of the low component.
double logit_soft_label(const gmm::GmmParams& params, double z);

/// Losses between the two views of each patch (v11, v12 for patch 1; v21, v22
/// for patch 2) and across patches.
struct ViewLossGrid {
  double l11_12 = 0.0;
  double l21_22 = 0.0;
  double l11_21 = 0.0;
  double l11_22 = 0.0;
  double l12_21 = 0.0;
  double l12_22 = 0.0;

  void validate() const;
};

/// P (l11_12 + l21_22) / 2 + (1 - P) (l11_21 + l11_22 + l12_21 + l12_22) / 4.
double ssl_mix_loss(double P, const ViewLossGrid& grid);

template <typename T>
using ViewLoss = std::function<nn::BasicTensor<T>(const nn::BasicTensor<T>&, const nn::BasicTensor<T>&)>;

/// Row-wise mean squared error between unit-normalized embeddings.
template <typename T>
nn::BasicTensor<T> normalized_mse(const nn::BasicTensor<T>& a, const nn::BasicTensor<T>& b);

template <typename T>
struct ViewEmbeddings {
  nn::BasicTensor<T> v11;
  nn::BasicTensor<T> v12;
  nn::BasicTensor<T> v21;
  nn::BasicTensor<T> v22;
};

/// Per-sample differentiable form; `loss` must map two [N, d] tensors to [N].
template <typename T>
nn::BasicTensor<T> ssl_mix_loss(const ViewEmbeddings<T>& views, std::span<const double> P,
                                const ViewLoss<T>& loss = normalized_mse<T>);

}  // namespace psym::altloss
