#include "psym/nn/optim.hpp"

#include <cmath>

namespace psym::nn {

std::string to_string(OptimizerKind kind) { return kind == OptimizerKind::Adam ? "adam" : "lars-sgd"; }

OptimizerKind optimizer_kind_from_string(const std::string& s) {
  if (s == "adam") return OptimizerKind::Adam;
  if (s == "lars-sgd" || s == "lars") return OptimizerKind::LarsSgd;
  throw ConfigError("unknown optimizer kind '" + s + "'");
}

OptState OptState::lars(double lr, double weight_decay, double momentum) {
  OptState s;
  s.kind = OptimizerKind::LarsSgd;
  s.base_lr = lr;
  s.weight_decay = weight_decay;
  s.momentum = momentum;
  return s;
}

OptState OptState::adam(double lr, double weight_decay) {
  OptState s;
  s.kind = OptimizerKind::Adam;
  s.base_lr = lr;
  s.weight_decay = weight_decay;
  return s;
}

double lars_trust_ratio(double weight_norm, double grad_norm, double weight_decay) {
  if (weight_norm == 0.0) return 1.0;
  return weight_norm / (grad_norm + weight_decay * weight_norm + kLarsEpsilon);
}

namespace {

template <typename T>
std::size_t count_tensors(std::span<const ParamGroup<T>> groups) {
  std::size_t n = 0;
  for (const auto& g : groups) n += g.tensors.size();
  return n;
}

template <typename T>
void ensure_buffers(std::vector<std::vector<double>>& buffers, std::span<const ParamGroup<T>> groups) {
  const std::size_t n = count_tensors(groups);
  if (buffers.empty()) {
    for (const auto& g : groups)
      for (const auto& t : g.tensors) buffers.emplace_back(t.size(), 0.0);
    return;
  }
  if (buffers.size() != n) throw StateError("optimizer buffers do not match parameter groups");
  std::size_t i = 0;
  for (const auto& g : groups)
    for (const auto& t : g.tensors)
      if (buffers[i++].size() != t.size()) throw StateError("optimizer buffer shape mismatch");
}

template <typename T>
std::span<const T> grad_or_empty(BasicTensor<T>& t) {
  return t.has_grad() ? std::span<const T>(t.grad()) : std::span<const T>{};
}

}  // namespace

template <typename T>
void lars_step(OptState& opt, std::span<const ParamGroup<T>> groups) {
  ensure_buffers(opt.first_moment, groups);
  std::size_t idx = 0;
  for (const auto& group : groups) {
    for (auto tensor : group.tensors) {
      auto& velocity = opt.first_moment[idx++];
      auto w = tensor.data();
      auto g = grad_or_empty(tensor);
      double ratio = 1.0;
      double wd = 0.0;
      if (!group.lars_excluded) {
        double wn = 0.0, gn = 0.0;
        for (std::size_t i = 0; i < w.size(); ++i) wn += double(w[i]) * double(w[i]);
        for (std::size_t i = 0; i < g.size(); ++i) gn += double(g[i]) * double(g[i]);
        ratio = lars_trust_ratio(std::sqrt(wn), std::sqrt(gn), opt.weight_decay);
        wd = opt.weight_decay;
      }
      const double step = opt.base_lr * ratio;
      for (std::size_t i = 0; i < w.size(); ++i) {
        const double gi = (g.empty() ? 0.0 : double(g[i])) + wd * double(w[i]);
        velocity[i] = opt.momentum * velocity[i] + step * gi;
        w[i] = static_cast<T>(double(w[i]) - velocity[i]);
      }
      if (!g.empty()) tensor.zero_grad();
    }
  }
  ++opt.step_count;
}

template <typename T>
void adam_step(OptState& opt, std::span<const ParamGroup<T>> groups) {
  ensure_buffers(opt.first_moment, groups);
  ensure_buffers(opt.second_moment, groups);
  ++opt.step_count;
  const double t = static_cast<double>(opt.step_count);
  const double bc1 = 1.0 - std::pow(opt.beta1, t);
  const double bc2 = 1.0 - std::pow(opt.beta2, t);
  std::size_t idx = 0;
  for (const auto& group : groups) {
    for (auto tensor : group.tensors) {
      auto& m = opt.first_moment[idx];
      auto& v = opt.second_moment[idx];
      ++idx;
      auto w = tensor.data();
      auto g = grad_or_empty(tensor);
      for (std::size_t i = 0; i < w.size(); ++i) {
        const double gi = (g.empty() ? 0.0 : double(g[i])) + opt.weight_decay * double(w[i]);
        m[i] = opt.beta1 * m[i] + (1.0 - opt.beta1) * gi;
        v[i] = opt.beta2 * v[i] + (1.0 - opt.beta2) * gi * gi;
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        w[i] = static_cast<T>(double(w[i]) - opt.base_lr * mhat / (std::sqrt(vhat) + opt.eps));
      }
      if (!g.empty()) tensor.zero_grad();
    }
  }
}

template <typename T>
void zero_grads(std::span<const ParamGroup<T>> groups) {
  for (const auto& group : groups)
    for (auto tensor : group.tensors)
      if (tensor.has_grad()) tensor.zero_grad();
}

void to_json(nlohmann::json& j, const OptState& s) {
  j = nlohmann::json{{"kind", to_string(s.kind)},     {"base_lr", s.base_lr},
                     {"weight_decay", s.weight_decay}, {"momentum", s.momentum},
                     {"beta1", s.beta1},               {"beta2", s.beta2},
                     {"eps", s.eps},                   {"step_count", s.step_count},
                     {"first_moment", s.first_moment}, {"second_moment", s.second_moment}};
}

void from_json(const nlohmann::json& j, OptState& s) {
  s.kind = optimizer_kind_from_string(j.at("kind").get<std::string>());
  s.base_lr = j.at("base_lr").get<double>();
  s.weight_decay = j.value("weight_decay", 0.0);
  s.momentum = j.value("momentum", 0.9);
  s.beta1 = j.value("beta1", 0.9);
  s.beta2 = j.value("beta2", 0.999);
  s.eps = j.value("eps", 1e-8);
  s.step_count = j.value("step_count", std::size_t{0});
  s.first_moment = j.value("first_moment", std::vector<std::vector<double>>{});
  s.second_moment = j.value("second_moment", std::vector<std::vector<double>>{});
}

template void lars_step<float>(OptState&, std::span<const ParamGroup<float>>);
template void lars_step<double>(OptState&, std::span<const ParamGroup<double>>);
template void adam_step<float>(OptState&, std::span<const ParamGroup<float>>);
template void adam_step<double>(OptState&, std::span<const ParamGroup<double>>);
template void zero_grads<float>(std::span<const ParamGroup<float>>);
template void zero_grads<double>(std::span<const ParamGroup<double>>);

}  // namespace psym::nn
