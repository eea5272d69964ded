#include "psym/altloss.hpp"

#include <algorithm>
#include <cmath>

#include "psym/errors.hpp"
#include "psym/nn/ops.hpp"

namespace psym::altloss {

void TripletConfig::validate() const {
  if (!std::isfinite(margin) || margin < 0.0) throw ConfigError("triplet margin must be finite and >= 0");
}

double soft_triplet_loss(double P, double D, const TripletConfig& cfg) {
  return std::max(0.0, (1.0 - P) * D - P * D + cfg.margin);
}

template <typename T>
nn::BasicTensor<T> soft_triplet_loss(const nn::BasicTensor<T>& D, std::span<const double> P,
                                     const TripletConfig& cfg) {
  if (D.size() != P.size()) throw ConfigError("soft_triplet_loss: distances and labels differ in length");
  std::vector<double> w(P.size());
  for (std::size_t i = 0; i < P.size(); ++i) w[i] = 1.0 - 2.0 * P[i];
  auto d = nn::reshape(D, {D.size()});
  auto weighted = nn::mul(nn::constant<T>({D.size()}, w), d);
  return nn::relu(nn::add_scalar(weighted, static_cast<T>(cfg.margin)));
}

double logit_soft_label(const gmm::GmmParams& params, double z) { return 1.0 - gmm::posterior_abnormal(params, z); }

void ViewLossGrid::validate() const {
  for (double v : {l11_12, l21_22, l11_21, l11_22, l12_21, l12_22})
    if (!std::isfinite(v) || v < 0.0) throw ArgumentError("view losses must be finite and >= 0");
}

double ssl_mix_loss(double P, const ViewLossGrid& g) {
  const double same = (g.l11_12 + g.l21_22) / 2.0;
  const double cross = (g.l11_21 + g.l11_22 + g.l12_21 + g.l12_22) / 4.0;
  return P * same + (1.0 - P) * cross;
}

template <typename T>
nn::BasicTensor<T> normalized_mse(const nn::BasicTensor<T>& a, const nn::BasicTensor<T>& b) {
  return nn::mse_rows(nn::l2_normalize_rows(a), nn::l2_normalize_rows(b));
}

template <typename T>
nn::BasicTensor<T> ssl_mix_loss(const ViewEmbeddings<T>& v, std::span<const double> P, const ViewLoss<T>& loss) {
  const std::size_t n = P.size();
  if (v.v11.rank() != 2 || v.v11.dim(0) != n) throw ConfigError("ssl_mix_loss: views and labels differ in length");
  std::vector<double> same_w(n), cross_w(n);
  for (std::size_t i = 0; i < n; ++i) {
    same_w[i] = P[i] / 2.0;
    cross_w[i] = (1.0 - P[i]) / 4.0;
  }
  const auto same = nn::add(loss(v.v11, v.v12), loss(v.v21, v.v22));
  const auto cross =
      nn::add(nn::add(loss(v.v11, v.v21), loss(v.v11, v.v22)), nn::add(loss(v.v12, v.v21), loss(v.v12, v.v22)));
  return nn::add(nn::mul(nn::constant<T>({n}, same_w), same), nn::mul(nn::constant<T>({n}, cross_w), cross));
}

#define PSYM_INSTANTIATE_ALTLOSS(T)                                                                          \
  template nn::BasicTensor<T> soft_triplet_loss(const nn::BasicTensor<T>&, std::span<const double>,         \
                                                const TripletConfig&);                                      \
  template nn::BasicTensor<T> normalized_mse(const nn::BasicTensor<T>&, const nn::BasicTensor<T>&);         \
  template nn::BasicTensor<T> ssl_mix_loss(const ViewEmbeddings<T>&, std::span<const double>, const ViewLoss<T>&);

PSYM_INSTANTIATE_ALTLOSS(float)
PSYM_INSTANTIATE_ALTLOSS(double)

}  // namespace psym::altloss
