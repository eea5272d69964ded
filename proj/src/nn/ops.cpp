#include "psym/nn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

#include "psym/errors.hpp"

namespace psym::nn {

namespace {

template <typename T>
BasicTensor<T> record(BasicTensor<T> out, const char* name, std::vector<BasicTensor<T>> inputs,
                      typename GradFn<T>::Apply apply) {
  if (!grad_enabled()) return out;
  bool any = std::any_of(inputs.begin(), inputs.end(), [](const auto& t) { return t.requires_grad(); });
  if (!any) return out;
  out.set_grad_fn(std::make_shared<GradFn<T>>(GradFn<T>{name, std::move(inputs), std::move(apply)}));
  return out;
}

template <typename T>
void require_same_shape(const BasicTensor<T>& a, const BasicTensor<T>& b, const char* op) {
  if (a.shape() != b.shape())
    throw ConfigError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

// Dot product with eight independent partial sums so the loop vectorizes
// without reassociation flags; the summation order is fixed.
template <typename T>
T lane_dot(const T* __restrict a, const T* __restrict b, std::size_t len) {
  T part[8] = {};
  std::size_t i = 0;
  for (; i + 8 <= len; i += 8)
    for (std::size_t l = 0; l < 8; ++l) part[l] += a[i + l] * b[i + l];
  T tot = ((part[0] + part[1]) + (part[2] + part[3])) + ((part[4] + part[5]) + (part[6] + part[7]));
  for (; i < len; ++i) tot += a[i] * b[i];
  return tot;
}

template <typename T>
void require_rank(const BasicTensor<T>& x, std::size_t rank, const char* op) {
  if (x.rank() != rank)
    throw ConfigError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " + shape_str(x.shape()));
}

}  // namespace

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same_shape(a, b, "add");
  BasicTensor<T> out(a.shape());
  auto o = out.data();
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] + y[i];
  return record<T>(std::move(out), "add", {a, b}, [](std::span<const T> g, std::span<BasicTensor<T>> in) {
    for (auto& t : in) {
      if (!t.requires_grad()) continue;
      auto& gi = t.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
    }
  });
}

template <typename T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same_shape(a, b, "sub");
  BasicTensor<T> out(a.shape());
  auto o = out.data();
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] - y[i];
  return record<T>(std::move(out), "sub", {a, b}, [](std::span<const T> g, std::span<BasicTensor<T>> in) {
    if (in[0].requires_grad()) {
      auto& gi = in[0].grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
    }
    if (in[1].requires_grad()) {
      auto& gi = in[1].grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) gi[i] -= g[i];
    }
  });
}

template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same_shape(a, b, "mul");
  BasicTensor<T> out(a.shape());
  auto o = out.data();
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] * y[i];
  return record<T>(std::move(out), "mul", {a, b}, [](std::span<const T> g, std::span<BasicTensor<T>> in) {
    auto xa = std::as_const(in[0]).data();
    auto xb = std::as_const(in[1]).data();
    if (in[0].requires_grad()) {
      auto& gi = in[0].grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i] * xb[i];
    }
    if (in[1].requires_grad()) {
      auto& gi = in[1].grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i] * xa[i];
    }
  });
}

template <typename T>
BasicTensor<T> scale(const BasicTensor<T>& x, T factor) {
  BasicTensor<T> out(x.shape());
  auto o = out.data();
  auto v = x.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = v[i] * factor;
  return record<T>(std::move(out), "scale", {x}, [factor](std::span<const T> g, std::span<BasicTensor<T>> in) {
    auto& gi = in[0].grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i] * factor;
  });
}

template <typename T>
BasicTensor<T> add_scalar(const BasicTensor<T>& x, T value) {
  BasicTensor<T> out(x.shape());
  auto o = out.data();
  auto v = x.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = v[i] + value;
  return record<T>(std::move(out), "add_scalar", {x}, [](std::span<const T> g, std::span<BasicTensor<T>> in) {
    auto& gi = in[0].grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
  });
}

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& x) {
  BasicTensor<T> out(x.shape());
  auto o = out.data();
  auto v = x.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = v[i] > T{0} ? v[i] : T{0};
  return record<T>(std::move(out), "relu", {x}, [](std::span<const T> g, std::span<BasicTensor<T>> in) {
    auto v = std::as_const(in[0]).data();
    auto& gi = in[0].grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i)
      if (v[i] > T{0}) gi[i] += g[i];
  });
}

template <typename T>
BasicTensor<T> sigmoid(const BasicTensor<T>& x) {
  BasicTensor<T> out(x.shape());
  auto o = out.data();
  auto v = x.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = T{1} / (T{1} + std::exp(-v[i]));
  return record<T>(std::move(out), "sigmoid", {x}, [](std::span<const T> g, std::span<BasicTensor<T>> in) {
    auto v = std::as_const(in[0]).data();
    auto& gi = in[0].grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      T s = T{1} / (T{1} + std::exp(-v[i]));
      gi[i] += g[i] * s * (T{1} - s);
    }
  });
}

template <typename T>
BasicTensor<T> sum(const BasicTensor<T>& x) {
  T acc{0};
  for (T v : x.data()) acc += v;
  return record<T>(BasicTensor<T>::scalar(acc), "sum", {x}, [](std::span<const T> g, std::span<BasicTensor<T>> in) {
    auto& gi = in[0].grad_buffer();
    for (auto& v : gi) v += g[0];
  });
}

template <typename T>
BasicTensor<T> mean(const BasicTensor<T>& x) {
  T acc{0};
  for (T v : x.data()) acc += v;
  const T inv = T{1} / static_cast<T>(x.size());
  return record<T>(BasicTensor<T>::scalar(acc * inv), "mean", {x},
                   [inv](std::span<const T> g, std::span<BasicTensor<T>> in) {
                     auto& gi = in[0].grad_buffer();
                     for (auto& v : gi) v += g[0] * inv;
                   });
}

template <typename T>
BasicTensor<T> reshape(const BasicTensor<T>& x, Shape shape) {
  if (numel(shape) != x.size())
    throw ConfigError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  auto src = x.data();
  BasicTensor<T> out(std::move(shape), std::vector<T>(src.begin(), src.end()));
  return record<T>(std::move(out), "reshape", {x}, [](std::span<const T> g, std::span<BasicTensor<T>> in) {
    auto& gi = in[0].grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
  });
}

namespace {

// Tap-fused kernels over "padded-width" rows: position i of an output plane
// lives at i = y * wp + x, and tap t reads input i + off[t]. NT > 0 fixes the
// tap count at compile time so the tap loop unrolls; NT == 0 uses nt.
template <typename T, std::size_t NT>
void conv_fwd_taps(T* __restrict a, const T* __restrict in, const std::size_t* off, const T* w, std::size_t len,
                   std::size_t nt) {
  const std::size_t taps = NT ? NT : nt;
  for (std::size_t i = 0; i < len; ++i) {
    T s = a[i];
    for (std::size_t t = 0; t < taps; ++t) s += w[t] * in[i + off[t]];
    a[i] = s;
  }
}

// gin[j] += sum_t w[t] * g[j - off[t]], with g pre-offset by the largest tap.
template <typename T, std::size_t NT>
void conv_bwd_input_taps(T* __restrict gin, const T* __restrict gext, const std::size_t* off, const T* w,
                         std::size_t len, std::size_t max_off, std::size_t nt) {
  const std::size_t taps = NT ? NT : nt;
  for (std::size_t j = 0; j < len; ++j) {
    T s = gin[j];
    for (std::size_t t = 0; t < taps; ++t) s += w[t] * gext[max_off + j - off[t]];
    gin[j] = s;
  }
}

// gw[t] += sum_i g[i] * in[i + off[t]] with eight fixed partial sums per tap.
template <typename T, std::size_t NT>
void conv_bwd_weight_taps(T* gw, const T* __restrict g, const T* __restrict in, const std::size_t* off,
                          std::size_t len, std::size_t nt) {
  const std::size_t taps = NT ? NT : nt;
  for (std::size_t t = 0; t < taps; ++t) gw[t] += lane_dot(g, in + off[t], len);
}

template <typename T>
void conv_fwd(T* a, const T* in, const std::size_t* off, const T* w, std::size_t len, std::size_t nt) {
  if (nt == 9)
    conv_fwd_taps<T, 9>(a, in, off, w, len, nt);
  else
    conv_fwd_taps<T, 0>(a, in, off, w, len, nt);
}

template <typename T>
void conv_bwd_input(T* gin, const T* gext, const std::size_t* off, const T* w, std::size_t len, std::size_t max_off,
                    std::size_t nt) {
  if (nt == 9)
    conv_bwd_input_taps<T, 9>(gin, gext, off, w, len, max_off, nt);
  else
    conv_bwd_input_taps<T, 0>(gin, gext, off, w, len, max_off, nt);
}

}  // namespace

// Direct convolution over a zero-padded copy of each sample. Output rows are
// computed at the padded width so every tap is a contiguous shifted read; the
// pad columns are discarded (forward) or held at zero (backward).
template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& x, const BasicTensor<T>& w, const BasicTensor<T>& b) {
  require_rank(x, 4, "conv2d input");
  require_rank(w, 4, "conv2d weight");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const std::size_t o = w.dim(0), k = w.dim(2);
  if (w.dim(1) != c || w.dim(3) != k || k % 2 == 0)
    throw ConfigError("conv2d: weight " + shape_str(w.shape()) + " incompatible with input " + shape_str(x.shape()));
  if (b.shape() != Shape{o}) throw ConfigError("conv2d: bias shape " + shape_str(b.shape()));
  const std::size_t pad = k / 2, hp = h + 2 * pad, wp = wd + 2 * pad;
  const std::size_t span_len = h * wp, plane = hp * wp, taps = k * k;
  std::vector<std::size_t> off(taps);
  for (std::size_t ky = 0; ky < k; ++ky)
    for (std::size_t kx = 0; kx < k; ++kx) off[ky * k + kx] = ky * wp + kx;
  const std::size_t max_off = off.back();

  BasicTensor<T> out(Shape{n, o, h, wd});
  auto xs = x.data();
  auto ws = w.data();
  auto bs = b.data();
  auto os = out.data();
  std::vector<T> padded(c * plane + 2 * pad, T{0});
  std::vector<T> acc(span_len);
  for (std::size_t s = 0; s < n; ++s) {
    const T* xin = xs.data() + s * c * h * wd;
    for (std::size_t ci = 0; ci < c; ++ci)
      for (std::size_t y = 0; y < h; ++y)
        std::copy_n(xin + (ci * h + y) * wd, wd, padded.data() + ci * plane + (y + pad) * wp + pad);
    for (std::size_t oc = 0; oc < o; ++oc) {
      std::fill(acc.begin(), acc.end(), bs[oc]);
      for (std::size_t ci = 0; ci < c; ++ci)
        conv_fwd(acc.data(), padded.data() + ci * plane, off.data(), ws.data() + (oc * c + ci) * taps, span_len, taps);
      T* dst = os.data() + (s * o + oc) * h * wd;
      for (std::size_t y = 0; y < h; ++y) std::copy_n(acc.data() + y * wp, wd, dst + y * wd);
    }
  }

  return record<T>(
      std::move(out), "conv2d", {x, w, b},
      [n, c, h, wd, o, pad, wp, span_len, plane, taps, off, max_off](std::span<const T> g,
                                                                     std::span<BasicTensor<T>> in) {
        auto xs = std::as_const(in[0]).data();
        auto ws = std::as_const(in[1]).data();
        const bool need_x = in[0].requires_grad();
        const bool need_w = in[1].requires_grad();
        const bool need_b = in[2].requires_grad();
        T* gx = need_x ? in[0].grad_buffer().data() : nullptr;
        T* gw = need_w ? in[1].grad_buffer().data() : nullptr;
        T* gb = need_b ? in[2].grad_buffer().data() : nullptr;
        std::vector<T> padded(c * plane + 2 * pad, T{0});
        std::vector<T> gpad(need_x ? plane : 0);
        // Per output channel: max_off leading zeros, then the gradient at
        // padded width (pad columns zero), then trailing zeros.
        const std::size_t ext = max_off + plane;
        std::vector<T> gext(o * ext, T{0});
        for (std::size_t s = 0; s < n; ++s) {
          const T* xin = xs.data() + s * c * h * wd;
          for (std::size_t ci = 0; ci < c; ++ci)
            for (std::size_t y = 0; y < h; ++y)
              std::copy_n(xin + (ci * h + y) * wd, wd, padded.data() + ci * plane + (y + pad) * wp + pad);
          for (std::size_t oc = 0; oc < o; ++oc) {
            const T* gplane = g.data() + (s * o + oc) * h * wd;
            T* ge = gext.data() + oc * ext + max_off;
            for (std::size_t y = 0; y < h; ++y) std::copy_n(gplane + y * wd, wd, ge + y * wp);
            if (gb) {
              T tot{0};
              for (std::size_t i = 0; i < h * wd; ++i) tot += gplane[i];
              gb[oc] += tot;
            }
            if (gw)
              for (std::size_t ci = 0; ci < c; ++ci) {
                T* gwi = gw + (oc * c + ci) * taps;
                const T* pin = padded.data() + ci * plane;
                conv_bwd_weight_taps<T, 0>(gwi, ge, pin, off.data(), span_len, taps);
              }
          }
          if (!gx) continue;
          T* gxs = gx + s * c * h * wd;
          for (std::size_t ci = 0; ci < c; ++ci) {
            std::fill(gpad.begin(), gpad.end(), T{0});
            for (std::size_t oc = 0; oc < o; ++oc)
              conv_bwd_input(gpad.data(), gext.data() + oc * ext, off.data(), ws.data() + (oc * c + ci) * taps, plane,
                             max_off, taps);
            for (std::size_t y = 0; y < h; ++y) {
              const T* src = gpad.data() + (y + pad) * wp + pad;
              T* dst = gxs + (ci * h + y) * wd;
              for (std::size_t xx = 0; xx < wd; ++xx) dst[xx] += src[xx];
            }
          }
        }
      });
}

template <typename T>
BasicTensor<T> mean_pool2(const BasicTensor<T>& x) {
  require_rank(x, 4, "mean_pool2");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h % 2 || w % 2) throw ConfigError("mean_pool2: odd spatial size " + shape_str(x.shape()));
  const std::size_t ho = h / 2, wo = w / 2;
  BasicTensor<T> out(Shape{n, c, ho, wo});
  auto xs = x.data();
  auto os = out.data();
  for (std::size_t p = 0; p < n * c; ++p) {
    const T* src = xs.data() + p * h * w;
    T* dst = os.data() + p * ho * wo;
    for (std::size_t y = 0; y < ho; ++y)
      for (std::size_t xx = 0; xx < wo; ++xx) {
        const T* r0 = src + (2 * y) * w + 2 * xx;
        const T* r1 = r0 + w;
        dst[y * wo + xx] = (r0[0] + r0[1] + r1[0] + r1[1]) * T(0.25);
      }
  }
  return record<T>(std::move(out), "mean_pool2", {x},
                   [n, c, h, w, ho, wo](std::span<const T> g, std::span<BasicTensor<T>> in) {
                     auto& gi = in[0].grad_buffer();
                     for (std::size_t p = 0; p < n * c; ++p) {
                       const T* gs = g.data() + p * ho * wo;
                       T* dst = gi.data() + p * h * w;
                       for (std::size_t y = 0; y < ho; ++y)
                         for (std::size_t xx = 0; xx < wo; ++xx) {
                           const T v = gs[y * wo + xx] * T(0.25);
                           T* r0 = dst + (2 * y) * w + 2 * xx;
                           r0[0] += v;
                           r0[1] += v;
                           r0[w] += v;
                           r0[w + 1] += v;
                         }
                     }
                   });
}

template <typename T>
BasicTensor<T> global_avg_pool(const BasicTensor<T>& x) {
  require_rank(x, 4, "global_avg_pool");
  const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  BasicTensor<T> out(Shape{n, c});
  auto xs = x.data();
  auto os = out.data();
  const T inv = T{1} / static_cast<T>(hw);
  for (std::size_t p = 0; p < n * c; ++p) {
    T acc{0};
    const T* src = xs.data() + p * hw;
    for (std::size_t i = 0; i < hw; ++i) acc += src[i];
    os[p] = acc * inv;
  }
  return record<T>(std::move(out), "global_avg_pool", {x},
                   [n, c, hw, inv](std::span<const T> g, std::span<BasicTensor<T>> in) {
                     auto& gi = in[0].grad_buffer();
                     for (std::size_t p = 0; p < n * c; ++p) {
                       const T v = g[p] * inv;
                       T* dst = gi.data() + p * hw;
                       for (std::size_t i = 0; i < hw; ++i) dst[i] += v;
                     }
                   });
}

template <typename T>
BasicTensor<T> global_max_pool(const BasicTensor<T>& x) {
  require_rank(x, 4, "global_max_pool");
  const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  BasicTensor<T> out(Shape{n, c});
  auto xs = x.data();
  auto os = out.data();
  std::vector<std::size_t> arg(n * c);
  for (std::size_t p = 0; p < n * c; ++p) {
    const T* src = xs.data() + p * hw;
    const std::size_t k = static_cast<std::size_t>(std::max_element(src, src + hw) - src);
    arg[p] = k;
    os[p] = src[k];
  }
  return record<T>(std::move(out), "global_max_pool", {x},
                   [hw, arg = std::move(arg)](std::span<const T> g, std::span<BasicTensor<T>> in) {
                     auto& gi = in[0].grad_buffer();
                     for (std::size_t p = 0; p < arg.size(); ++p) gi[p * hw + arg[p]] += g[p];
                   });
}

template <typename T>
BasicTensor<T> batch_norm2d(const BasicTensor<T>& x, const BasicTensor<T>& gamma, const BasicTensor<T>& beta,
                            BasicTensor<T>& running_mean, BasicTensor<T>& running_var, bool training) {
  require_rank(x, 4, "batch_norm2d");
  const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  const Shape cs{c};
  if (gamma.shape() != cs || beta.shape() != cs || running_mean.shape() != cs || running_var.shape() != cs)
    throw ConfigError("batch_norm2d: parameter shapes do not match " + std::to_string(c) + " channels");
  const std::size_t m = n * hw;
  if (m == 0) throw ConfigError("batch_norm2d: empty input");
  auto xs = x.data();
  auto gs = gamma.data();
  auto bs = beta.data();
  std::vector<T> mean(c), inv_std(c);
  if (training) {
    auto rm = running_mean.data();
    auto rv = running_var.data();
    for (std::size_t ch = 0; ch < c; ++ch) {
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const T* src = xs.data() + (i * c + ch) * hw;
        for (std::size_t k = 0; k < hw; ++k) s += src[k];
      }
      const double mu = s / static_cast<double>(m);
      double ss = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const T* src = xs.data() + (i * c + ch) * hw;
        for (std::size_t k = 0; k < hw; ++k) ss += (src[k] - mu) * (src[k] - mu);
      }
      const double var = ss / static_cast<double>(m);
      mean[ch] = static_cast<T>(mu);
      inv_std[ch] = static_cast<T>(1.0 / std::sqrt(var + kBatchNormEps));
      const double unbiased = m > 1 ? ss / static_cast<double>(m - 1) : var;
      rm[ch] = static_cast<T>((1.0 - kBatchNormMomentum) * rm[ch] + kBatchNormMomentum * mu);
      rv[ch] = static_cast<T>((1.0 - kBatchNormMomentum) * rv[ch] + kBatchNormMomentum * unbiased);
    }
  } else {
    auto rm = std::as_const(running_mean).data();
    auto rv = std::as_const(running_var).data();
    for (std::size_t ch = 0; ch < c; ++ch) {
      mean[ch] = rm[ch];
      inv_std[ch] = static_cast<T>(1.0 / std::sqrt(static_cast<double>(rv[ch]) + kBatchNormEps));
    }
  }
  BasicTensor<T> out(x.shape());
  auto os = out.data();
  std::vector<T> xhat(xs.size());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t off = (i * c + ch) * hw;
      for (std::size_t k = 0; k < hw; ++k) {
        const T h = (xs[off + k] - mean[ch]) * inv_std[ch];
        xhat[off + k] = h;
        os[off + k] = gs[ch] * h + bs[ch];
      }
    }
  return record<T>(std::move(out), "batch_norm2d", {x, gamma, beta},
                   [n, c, hw, m, training, inv_std = std::move(inv_std), xhat = std::move(xhat)](
                       std::span<const T> g, std::span<BasicTensor<T>> in) {
                     auto gam = std::as_const(in[1]).data();
                     std::vector<double> sum_g(c, 0.0), sum_gx(c, 0.0);
                     for (std::size_t i = 0; i < n; ++i)
                       for (std::size_t ch = 0; ch < c; ++ch) {
                         const std::size_t off = (i * c + ch) * hw;
                         for (std::size_t k = 0; k < hw; ++k) {
                           sum_g[ch] += g[off + k];
                           sum_gx[ch] += g[off + k] * xhat[off + k];
                         }
                       }
                     if (in[1].requires_grad()) {
                       auto& gg = in[1].grad_buffer();
                       for (std::size_t ch = 0; ch < c; ++ch) gg[ch] += static_cast<T>(sum_gx[ch]);
                     }
                     if (in[2].requires_grad()) {
                       auto& gb = in[2].grad_buffer();
                       for (std::size_t ch = 0; ch < c; ++ch) gb[ch] += static_cast<T>(sum_g[ch]);
                     }
                     if (!in[0].requires_grad()) return;
                     auto& gx = in[0].grad_buffer();
                     const double inv_m = 1.0 / static_cast<double>(m);
                     for (std::size_t i = 0; i < n; ++i)
                       for (std::size_t ch = 0; ch < c; ++ch) {
                         const std::size_t off = (i * c + ch) * hw;
                         const double k1 = static_cast<double>(gam[ch]) * inv_std[ch];
                         const double mg = training ? sum_g[ch] * inv_m : 0.0;
                         const double mgx = training ? sum_gx[ch] * inv_m : 0.0;
                         for (std::size_t k = 0; k < hw; ++k)
                           gx[off + k] += static_cast<T>(k1 * (g[off + k] - mg - xhat[off + k] * mgx));
                       }
                   });
}

template <typename T>
BasicTensor<T> linear(const BasicTensor<T>& x, const BasicTensor<T>& w, const BasicTensor<T>& b) {
  require_rank(x, 2, "linear input");
  require_rank(w, 2, "linear weight");
  const std::size_t n = x.dim(0), in_f = x.dim(1), out_f = w.dim(0);
  if (w.dim(1) != in_f)
    throw ConfigError("linear: weight " + shape_str(w.shape()) + " incompatible with input " + shape_str(x.shape()));
  if (b.shape() != Shape{out_f}) throw ConfigError("linear: bias shape " + shape_str(b.shape()));
  BasicTensor<T> out(Shape{n, out_f});
  auto xs = x.data();
  auto ws = w.data();
  auto bs = b.data();
  auto os = out.data();
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t j = 0; j < out_f; ++j) {
      T acc = bs[j];
      const T* xr = xs.data() + s * in_f;
      const T* wr = ws.data() + j * in_f;
      for (std::size_t i = 0; i < in_f; ++i) acc += wr[i] * xr[i];
      os[s * out_f + j] = acc;
    }
  return record<T>(std::move(out), "linear", {x, w, b},
                   [n, in_f, out_f](std::span<const T> g, std::span<BasicTensor<T>> in) {
                     auto xs = std::as_const(in[0]).data();
                     auto ws = std::as_const(in[1]).data();
                     T* gx = in[0].requires_grad() ? in[0].grad_buffer().data() : nullptr;
                     T* gw = in[1].requires_grad() ? in[1].grad_buffer().data() : nullptr;
                     T* gb = in[2].requires_grad() ? in[2].grad_buffer().data() : nullptr;
                     for (std::size_t s = 0; s < n; ++s)
                       for (std::size_t j = 0; j < out_f; ++j) {
                         const T gv = g[s * out_f + j];
                         if (gb) gb[j] += gv;
                         if (gw) {
                           T* gwr = gw + j * in_f;
                           const T* xr = xs.data() + s * in_f;
                           for (std::size_t i = 0; i < in_f; ++i) gwr[i] += gv * xr[i];
                         }
                         if (gx) {
                           T* gxr = gx + s * in_f;
                           const T* wr = ws.data() + j * in_f;
                           for (std::size_t i = 0; i < in_f; ++i) gxr[i] += gv * wr[i];
                         }
                       }
                   });
}

template <typename T>
BasicTensor<T> rows(const BasicTensor<T>& x, std::size_t begin, std::size_t end) {
  if (x.rank() == 0 || begin >= end || end > x.dim(0))
    throw ConfigError("rows: range [" + std::to_string(begin) + "," + std::to_string(end) + ") invalid for " +
                      shape_str(x.shape()));
  const std::size_t stride = x.size() / x.dim(0);
  Shape shape = x.shape();
  shape[0] = end - begin;
  auto src = x.data();
  BasicTensor<T> out(shape, std::vector<T>(src.begin() + begin * stride, src.begin() + end * stride));
  return record<T>(std::move(out), "rows", {x}, [begin, stride](std::span<const T> g, std::span<BasicTensor<T>> in) {
    auto& gi = in[0].grad_buffer();
    T* dst = gi.data() + begin * stride;
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
  });
}

template <typename T>
BasicTensor<T> concat_features(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_rank(a, 2, "concat_features");
  require_rank(b, 2, "concat_features");
  if (a.dim(0) != b.dim(0)) throw ConfigError("concat_features: batch mismatch");
  const std::size_t n = a.dim(0), da = a.dim(1), db = b.dim(1);
  BasicTensor<T> out(Shape{n, da + db});
  auto as = a.data();
  auto bs = b.data();
  auto os = out.data();
  for (std::size_t s = 0; s < n; ++s) {
    std::copy_n(as.data() + s * da, da, os.data() + s * (da + db));
    std::copy_n(bs.data() + s * db, db, os.data() + s * (da + db) + da);
  }
  return record<T>(std::move(out), "concat_features", {a, b},
                   [n, da, db](std::span<const T> g, std::span<BasicTensor<T>> in) {
                     if (in[0].requires_grad()) {
                       auto& ga = in[0].grad_buffer();
                       for (std::size_t s = 0; s < n; ++s)
                         for (std::size_t i = 0; i < da; ++i) ga[s * da + i] += g[s * (da + db) + i];
                     }
                     if (in[1].requires_grad()) {
                       auto& gb = in[1].grad_buffer();
                       for (std::size_t s = 0; s < n; ++s)
                         for (std::size_t i = 0; i < db; ++i) gb[s * db + i] += g[s * (da + db) + da + i];
                     }
                   });
}

template <typename T>
BasicTensor<T> euclidean_distance(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_rank(a, 2, "euclidean_distance");
  require_same_shape(a, b, "euclidean_distance");
  const std::size_t n = a.dim(0), d = a.dim(1);
  BasicTensor<T> out(Shape{n});
  auto as = a.data();
  auto bs = b.data();
  auto os = out.data();
  for (std::size_t s = 0; s < n; ++s) {
    T acc{0};
    for (std::size_t i = 0; i < d; ++i) {
      const T diff = as[s * d + i] - bs[s * d + i];
      acc += diff * diff;
    }
    os[s] = std::sqrt(acc);
  }
  std::vector<T> dist(os.begin(), os.end());
  return record<T>(std::move(out), "euclidean_distance", {a, b},
                   [n, d, dist = std::move(dist)](std::span<const T> g, std::span<BasicTensor<T>> in) {
                     auto as = std::as_const(in[0]).data();
                     auto bs = std::as_const(in[1]).data();
                     T* ga = in[0].requires_grad() ? in[0].grad_buffer().data() : nullptr;
                     T* gb = in[1].requires_grad() ? in[1].grad_buffer().data() : nullptr;
                     for (std::size_t s = 0; s < n; ++s) {
                       if (dist[s] <= T{0}) continue;
                       const T f = g[s] / dist[s];
                       for (std::size_t i = 0; i < d; ++i) {
                         const T v = f * (as[s * d + i] - bs[s * d + i]);
                         if (ga) ga[s * d + i] += v;
                         if (gb) gb[s * d + i] -= v;
                       }
                     }
                   });
}

template <typename T>
BasicTensor<T> l2_normalize_rows(const BasicTensor<T>& x) {
  require_rank(x, 2, "l2_normalize_rows");
  const std::size_t n = x.dim(0), d = x.dim(1);
  BasicTensor<T> out(x.shape());
  auto xs = x.data();
  auto os = out.data();
  std::vector<T> norms(n);
  for (std::size_t s = 0; s < n; ++s) {
    T acc{0};
    for (std::size_t i = 0; i < d; ++i) acc += xs[s * d + i] * xs[s * d + i];
    norms[s] = std::max(std::sqrt(acc), T(1e-12));
    for (std::size_t i = 0; i < d; ++i) os[s * d + i] = xs[s * d + i] / norms[s];
  }
  return record<T>(std::move(out), "l2_normalize_rows", {x},
                   [n, d, norms = std::move(norms)](std::span<const T> g, std::span<BasicTensor<T>> in) {
                     auto xs = std::as_const(in[0]).data();
                     auto& gi = in[0].grad_buffer();
                     for (std::size_t s = 0; s < n; ++s) {
                       // d(x/|x|) = (g - u (u.g)) / |x|, u = x/|x|
                       T dot{0};
                       for (std::size_t i = 0; i < d; ++i) dot += g[s * d + i] * xs[s * d + i] / norms[s];
                       for (std::size_t i = 0; i < d; ++i)
                         gi[s * d + i] += (g[s * d + i] - xs[s * d + i] / norms[s] * dot) / norms[s];
                     }
                   });
}

template <typename T>
BasicTensor<T> mse_rows(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_rank(a, 2, "mse_rows");
  require_same_shape(a, b, "mse_rows");
  const std::size_t n = a.dim(0), d = a.dim(1);
  BasicTensor<T> out(Shape{n});
  auto as = a.data();
  auto bs = b.data();
  auto os = out.data();
  for (std::size_t s = 0; s < n; ++s) {
    T acc{0};
    for (std::size_t i = 0; i < d; ++i) {
      const T diff = as[s * d + i] - bs[s * d + i];
      acc += diff * diff;
    }
    os[s] = acc / static_cast<T>(d);
  }
  return record<T>(std::move(out), "mse_rows", {a, b}, [n, d](std::span<const T> g, std::span<BasicTensor<T>> in) {
    auto as = std::as_const(in[0]).data();
    auto bs = std::as_const(in[1]).data();
    T* ga = in[0].requires_grad() ? in[0].grad_buffer().data() : nullptr;
    T* gb = in[1].requires_grad() ? in[1].grad_buffer().data() : nullptr;
    for (std::size_t s = 0; s < n; ++s)
      for (std::size_t i = 0; i < d; ++i) {
        const T v = g[s] * T{2} * (as[s * d + i] - bs[s * d + i]) / static_cast<T>(d);
        if (ga) ga[s * d + i] += v;
        if (gb) gb[s * d + i] -= v;
      }
  });
}

template <typename T>
BasicTensor<T> soft_bce_with_logits(const BasicTensor<T>& z, std::span<const double> soft_labels) {
  const std::size_t n = z.rank() == 0 ? 1 : z.dim(0);
  if (z.size() != n || soft_labels.size() != n)
    throw ConfigError("soft_bce_with_logits: logits " + shape_str(z.shape()) + " vs " +
                      std::to_string(soft_labels.size()) + " soft labels");
  const T lo = static_cast<T>(kProbClamp), hi = T{1} - static_cast<T>(kProbClamp);
  BasicTensor<T> out(Shape{n});
  auto zs = z.data();
  auto os = out.data();
  std::vector<T> dz(n);
  for (std::size_t i = 0; i < n; ++i) {
    const T p = static_cast<T>(soft_labels[i]);
    const T q_raw = T{1} / (T{1} + std::exp(-zs[i]));
    const T q = std::clamp(q_raw, lo, hi);
    os[i] = -((T{1} - p) * std::log(q) + p * std::log(T{1} - q));
    dz[i] = (q_raw > lo && q_raw < hi) ? q_raw - (T{1} - p) : T{0};
  }
  return record<T>(std::move(out), "soft_bce_with_logits", {z},
                   [dz = std::move(dz)](std::span<const T> g, std::span<BasicTensor<T>> in) {
                     auto& gi = in[0].grad_buffer();
                     for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i] * dz[i];
                   });
}

template <typename T>
BasicTensor<T> softmax_cross_entropy(const BasicTensor<T>& logits, std::span<const int> labels) {
  require_rank(logits, 2, "softmax_cross_entropy");
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  if (labels.size() != n) throw ConfigError("softmax_cross_entropy: label count mismatch");
  BasicTensor<T> out(Shape{n});
  auto zs = logits.data();
  auto os = out.data();
  std::vector<T> probs(n * k);
  for (std::size_t s = 0; s < n; ++s) {
    if (labels[s] < 0 || static_cast<std::size_t>(labels[s]) >= k)
      throw ConfigError("softmax_cross_entropy: label " + std::to_string(labels[s]) + " out of range");
    const T* zr = zs.data() + s * k;
    const T mx = *std::max_element(zr, zr + k);
    T denom{0};
    for (std::size_t j = 0; j < k; ++j) denom += std::exp(zr[j] - mx);
    for (std::size_t j = 0; j < k; ++j) probs[s * k + j] = std::exp(zr[j] - mx) / denom;
    os[s] = -(zr[labels[s]] - mx - std::log(denom));
  }
  std::vector<int> lab(labels.begin(), labels.end());
  return record<T>(std::move(out), "softmax_cross_entropy", {logits},
                   [n, k, probs = std::move(probs), lab = std::move(lab)](std::span<const T> g,
                                                                          std::span<BasicTensor<T>> in) {
                     auto& gi = in[0].grad_buffer();
                     for (std::size_t s = 0; s < n; ++s)
                       for (std::size_t j = 0; j < k; ++j) {
                         const T target = static_cast<int>(j) == lab[s] ? T{1} : T{0};
                         gi[s * k + j] += g[s] * (probs[s * k + j] - target);
                       }
                   });
}

template <typename T>
BasicTensor<T> constant(Shape shape, std::span<const double> values) {
  std::vector<T> v(values.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<T>(values[i]);
  return BasicTensor<T>(std::move(shape), std::move(v));
}

#define PSYM_INSTANTIATE_OPS(T)                                                                   \
  template BasicTensor<T> add(const BasicTensor<T>&, const BasicTensor<T>&);                      \
  template BasicTensor<T> sub(const BasicTensor<T>&, const BasicTensor<T>&);                      \
  template BasicTensor<T> mul(const BasicTensor<T>&, const BasicTensor<T>&);                      \
  template BasicTensor<T> scale(const BasicTensor<T>&, T);                                        \
  template BasicTensor<T> add_scalar(const BasicTensor<T>&, T);                                   \
  template BasicTensor<T> relu(const BasicTensor<T>&);                                            \
  template BasicTensor<T> sigmoid(const BasicTensor<T>&);                                         \
  template BasicTensor<T> sum(const BasicTensor<T>&);                                             \
  template BasicTensor<T> mean(const BasicTensor<T>&);                                            \
  template BasicTensor<T> reshape(const BasicTensor<T>&, Shape);                                  \
  template BasicTensor<T> conv2d(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&); \
  template BasicTensor<T> mean_pool2(const BasicTensor<T>&);                                      \
  template BasicTensor<T> global_avg_pool(const BasicTensor<T>&);                                 \
  template BasicTensor<T> global_max_pool(const BasicTensor<T>&);                                 \
  template BasicTensor<T> batch_norm2d(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&,  \
                                       BasicTensor<T>&, BasicTensor<T>&, bool);                   \
  template BasicTensor<T> linear(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&); \
  template BasicTensor<T> rows(const BasicTensor<T>&, std::size_t, std::size_t);                  \
  template BasicTensor<T> concat_features(const BasicTensor<T>&, const BasicTensor<T>&);          \
  template BasicTensor<T> euclidean_distance(const BasicTensor<T>&, const BasicTensor<T>&);       \
  template BasicTensor<T> l2_normalize_rows(const BasicTensor<T>&);                               \
  template BasicTensor<T> mse_rows(const BasicTensor<T>&, const BasicTensor<T>&);                 \
  template BasicTensor<T> soft_bce_with_logits(const BasicTensor<T>&, std::span<const double>);   \
  template BasicTensor<T> softmax_cross_entropy(const BasicTensor<T>&, std::span<const int>);     \
  template BasicTensor<T> constant(Shape, std::span<const double>);

PSYM_INSTANTIATE_OPS(float)
PSYM_INSTANTIATE_OPS(double)

#undef PSYM_INSTANTIATE_OPS

}  // namespace psym::nn
