#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace psym::nn {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

template <typename T>
class BasicTensor;

// Backward closure of one recorded operation. `apply` receives the gradient
// of the operation's output and accumulates into the inputs' gradients.
template <typename T>
struct GradFn {
  using Apply = std::function<void(std::span<const T> grad_out, std::span<BasicTensor<T>> inputs)>;

  std::string name;
  std::vector<BasicTensor<T>> inputs;
  Apply apply;
};

// Shared-handle n-dimensional array with an optional gradient slot.
//
// Copies share storage (like a framework tensor); use clone() for a deep copy.
// Operations in ops.hpp record a GradFn on their output when grad mode is on
// and any input requires grad. backward() on a scalar walks that graph once
// and then releases it.
template <typename T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;
  explicit BasicTensor(Shape shape, T fill = T{0});
  BasicTensor(Shape shape, std::vector<T> values);

  /// Leaf tensor that accumulates gradients.
  static BasicTensor parameter(Shape shape, std::vector<T> values);
  static BasicTensor scalar(T value) { return BasicTensor(Shape{}, std::vector<T>{value}); }

  bool defined() const noexcept { return static_cast<bool>(impl_); }
  const Shape& shape() const;
  std::size_t dim(std::size_t axis) const;
  std::size_t rank() const { return shape().size(); }
  std::size_t size() const;

  std::span<T> data();
  std::span<const T> data() const;
  T item() const;

  bool requires_grad() const;
  void set_requires_grad(bool on);
  bool is_leaf() const;

  bool has_grad() const;
  std::span<T> grad();
  std::span<const T> grad() const;
  /// Gradient buffer, allocated and zero-filled on first use.
  std::vector<T>& grad_buffer();
  void zero_grad();
  void clear_grad();

  const std::shared_ptr<GradFn<T>>& grad_fn() const;
  void set_grad_fn(std::shared_ptr<GradFn<T>> fn);

  /// Reverse-mode pass from this scalar. Leaf gradients accumulate.
  void backward();

  BasicTensor clone() const;
  /// Same storage viewed with another shape of equal element count. No graph.
  BasicTensor reshaped(Shape shape) const;

  bool same(const BasicTensor& other) const noexcept { return impl_ == other.impl_; }

  template <typename U>
  BasicTensor<U> cast() const {
    std::vector<U> out(size());
    auto src = data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<U>(src[i]);
    BasicTensor<U> result(shape(), std::move(out));
    result.set_requires_grad(requires_grad() && is_leaf());
    return result;
  }

 private:
  struct Impl {
    Shape shape;
    std::shared_ptr<std::vector<T>> data;
    std::vector<T> grad;
    bool requires_grad = false;
    std::shared_ptr<GradFn<T>> grad_fn;
  };

  Impl& impl() const;

  std::shared_ptr<Impl> impl_;
};

using Tensor = BasicTensor<float>;
using Tensor64 = BasicTensor<double>;

// Grad-mode switch (thread-local). Inference paths run under NoGradGuard.
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Throws NumericError naming `where` if any element is not finite.
template <typename T>
void check_finite(const BasicTensor<T>& t, const std::string& where);

}  // namespace psym::nn
