#include "psym/nn/tensor.hpp"

#include <cmath>
#include <sstream>
#include <unordered_set>

#include "psym/errors.hpp"

namespace psym::nn {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, T fill) : impl_(std::make_shared<Impl>()) {
  for (auto d : shape)
    if (d == 0) throw ConfigError("tensor dimensions must be positive, got " + shape_str(shape));
  impl_->data = std::make_shared<std::vector<T>>(numel(shape), fill);
  impl_->shape = std::move(shape);
}

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, std::vector<T> values) : impl_(std::make_shared<Impl>()) {
  for (auto d : shape)
    if (d == 0) throw ConfigError("tensor dimensions must be positive, got " + shape_str(shape));
  if (values.size() != numel(shape))
    throw ConfigError("tensor data length " + std::to_string(values.size()) + " does not match shape " +
                      shape_str(shape));
  impl_->data = std::make_shared<std::vector<T>>(std::move(values));
  impl_->shape = std::move(shape);
}

template <typename T>
BasicTensor<T> BasicTensor<T>::parameter(Shape shape, std::vector<T> values) {
  BasicTensor t(std::move(shape), std::move(values));
  t.impl_->requires_grad = true;
  return t;
}

template <typename T>
typename BasicTensor<T>::Impl& BasicTensor<T>::impl() const {
  if (!impl_) throw StateError("use of an undefined tensor");
  return *impl_;
}

template <typename T>
const Shape& BasicTensor<T>::shape() const {
  return impl().shape;
}

template <typename T>
std::size_t BasicTensor<T>::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) throw ConfigError("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  return s[axis];
}

template <typename T>
std::size_t BasicTensor<T>::size() const {
  return impl().data->size();
}

template <typename T>
std::span<T> BasicTensor<T>::data() {
  return {impl().data->data(), impl().data->size()};
}

template <typename T>
std::span<const T> BasicTensor<T>::data() const {
  return {impl().data->data(), impl().data->size()};
}

template <typename T>
T BasicTensor<T>::item() const {
  if (size() != 1) throw ConfigError("item() on tensor of shape " + shape_str(shape()));
  return (*impl().data)[0];
}

template <typename T>
bool BasicTensor<T>::requires_grad() const {
  return impl().requires_grad || impl().grad_fn != nullptr;
}

template <typename T>
void BasicTensor<T>::set_requires_grad(bool on) {
  impl().requires_grad = on;
}

template <typename T>
bool BasicTensor<T>::is_leaf() const {
  return impl().grad_fn == nullptr;
}

template <typename T>
bool BasicTensor<T>::has_grad() const {
  return !impl().grad.empty();
}

template <typename T>
std::span<T> BasicTensor<T>::grad() {
  return impl().grad;
}

template <typename T>
std::span<const T> BasicTensor<T>::grad() const {
  return impl().grad;
}

template <typename T>
std::vector<T>& BasicTensor<T>::grad_buffer() {
  auto& im = impl();
  if (im.grad.size() != im.data->size()) im.grad.assign(im.data->size(), T{0});
  return im.grad;
}

template <typename T>
void BasicTensor<T>::zero_grad() {
  auto& g = grad_buffer();
  std::fill(g.begin(), g.end(), T{0});
}

template <typename T>
void BasicTensor<T>::clear_grad() {
  impl().grad.clear();
  impl().grad.shrink_to_fit();
}

template <typename T>
const std::shared_ptr<GradFn<T>>& BasicTensor<T>::grad_fn() const {
  return impl().grad_fn;
}

template <typename T>
void BasicTensor<T>::set_grad_fn(std::shared_ptr<GradFn<T>> fn) {
  impl().grad_fn = std::move(fn);
}

template <typename T>
void BasicTensor<T>::backward() {
  auto& root = impl();
  if (root.data->size() != 1)
    throw StateError("backward() needs a scalar loss, got shape " + shape_str(root.shape));
  if (!root.grad_fn) throw StateError("backward() called without a recorded forward pass");

  // Post-order DFS gives a topological order (inputs before outputs).
  std::vector<Impl*> order;
  std::unordered_set<Impl*> seen;
  std::vector<std::pair<Impl*, std::size_t>> stack{{&root, 0}};
  seen.insert(&root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (node->grad_fn && next < node->grad_fn->inputs.size()) {
      Impl* child = node->grad_fn->inputs[next++].impl_.get();
      if (child->grad_fn && seen.insert(child).second) stack.emplace_back(child, 0);
      continue;
    }
    order.push_back(node);
    stack.pop_back();
  }

  for (Impl* node : order) node->grad.assign(node->data->size(), T{0});
  root.grad[0] = T{1};
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Impl* node = *it;
    node->grad_fn->apply(node->grad, node->grad_fn->inputs);
  }
  for (Impl* node : order) {
    node->grad_fn.reset();
    node->grad.clear();
  }
}

template <typename T>
BasicTensor<T> BasicTensor<T>::clone() const {
  BasicTensor out(shape(), std::vector<T>(impl().data->begin(), impl().data->end()));
  out.impl_->requires_grad = impl().requires_grad && is_leaf();
  return out;
}

template <typename T>
BasicTensor<T> BasicTensor<T>::reshaped(Shape shape) const {
  if (numel(shape) != size())
    throw ConfigError("cannot reshape " + shape_str(this->shape()) + " to " + shape_str(shape));
  BasicTensor out;
  out.impl_ = std::make_shared<Impl>();
  out.impl_->shape = std::move(shape);
  out.impl_->data = impl().data;
  return out;
}

template <typename T>
void check_finite(const BasicTensor<T>& t, const std::string& where) {
  for (T v : t.data())
    if (!std::isfinite(v)) throw NumericError("non-finite value produced by " + where);
}

template class BasicTensor<float>;
template class BasicTensor<double>;
template void check_finite(const BasicTensor<float>&, const std::string&);
template void check_finite(const BasicTensor<double>&, const std::string&);

}  // namespace psym::nn
