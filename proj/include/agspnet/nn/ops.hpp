#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "agspnet/nn/tensor.hpp"

// Differentiable operations over NCHW tensors. Every op checks shapes,
// rejects non-finite results and records an analytic backward rule.

namespace agspnet::nn {

namespace detail {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline void require_shape(bool ok, const std::string& msg) {
  if (!ok) throw ShapeError(msg);
}

template <typename T>
void accumulate(const Var<T>& parent, const std::vector<T>& g) {
  if (!parent || !parent->requires_grad) return;
  auto& pg = parent->grad_buffer();
  for (std::size_t i = 0; i < g.size(); ++i) pg[i] += g[i];
}

struct ConvGeom {
  int cin, h, w, kh, kw, stride, pad, dil, hout, wout;
  std::size_t rows() const { return static_cast<std::size_t>(cin) * kh * kw; }
  std::size_t cols() const { return static_cast<std::size_t>(hout) * wout; }
  bool pointwise() const { return kh == 1 && kw == 1 && stride == 1 && pad == 0; }
};

template <typename T>
void im2col(const T* x, const ConvGeom& g, T* cols) {
  std::size_t row = 0;
  for (int ci = 0; ci < g.cin; ++ci) {
    const T* plane = x + static_cast<std::size_t>(ci) * g.h * g.w;
    for (int ki = 0; ki < g.kh; ++ki) {
      for (int kj = 0; kj < g.kw; ++kj, ++row) {
        T* out = cols + row * g.cols();
        for (int oh = 0; oh < g.hout; ++oh) {
          const int ih = oh * g.stride - g.pad + ki * g.dil;
          for (int ow = 0; ow < g.wout; ++ow) {
            const int iw = ow * g.stride - g.pad + kj * g.dil;
            *out++ = (ih >= 0 && ih < g.h && iw >= 0 && iw < g.w) ? plane[ih * g.w + iw] : T(0);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const T* cols, const ConvGeom& g, T* dx) {
  std::size_t row = 0;
  for (int ci = 0; ci < g.cin; ++ci) {
    T* plane = dx + static_cast<std::size_t>(ci) * g.h * g.w;
    for (int ki = 0; ki < g.kh; ++ki) {
      for (int kj = 0; kj < g.kw; ++kj, ++row) {
        const T* in = cols + row * g.cols();
        for (int oh = 0; oh < g.hout; ++oh) {
          const int ih = oh * g.stride - g.pad + ki * g.dil;
          for (int ow = 0; ow < g.wout; ++ow, ++in) {
            const int iw = ow * g.stride - g.pad + kj * g.dil;
            if (ih >= 0 && ih < g.h && iw >= 0 && iw < g.w) plane[ih * g.w + iw] += *in;
          }
        }
      }
    }
  }
}

/// Index of the j-th member of the criss-cross set of (h, w): first the
/// whole column w (rows 0..H-1), then row h without column w.
inline void cc_member(int j, int h, int w, int H, int& vh, int& vw) {
  if (j < H) {
    vh = j;
    vw = w;
  } else {
    const int k = j - H;
    vh = h;
    vw = k < w ? k : k + 1;
  }
}

}  // namespace detail

inline int conv_out_size(int in, int k, int stride, int pad, int dil) {
  return (in + 2 * pad - dil * (k - 1) - 1) / stride + 1;
}

/// Cross-correlation; weight is (Cout, Cin, kh, kw), bias (1, Cout, 1, 1)
/// or null.
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, int stride = 1, int pad = 0, int dil = 1) {
  const Shape xs = x->value.shape, ws = weight->value.shape;
  detail::require_shape(ws.c == xs.c, "conv2d: input has " + std::to_string(xs.c) + " channels, weight expects " + std::to_string(ws.c));
  detail::require_shape(stride >= 1 && dil >= 1 && pad >= 0, "conv2d: stride and dilation must be >= 1");
  if (bias) detail::require_shape(bias->value.size() == static_cast<std::size_t>(ws.n), "conv2d: bias size mismatch");
  const detail::ConvGeom g{xs.c, xs.h, xs.w, ws.h, ws.w, stride, pad, dil,
                           conv_out_size(xs.h, ws.h, stride, pad, dil), conv_out_size(xs.w, ws.w, stride, pad, dil)};
  detail::require_shape(g.hout >= 1 && g.wout >= 1, "conv2d: kernel larger than padded input " + xs.str());
  const int cout = ws.n;
  Tensor<T> out(Shape{xs.n, cout, g.hout, g.wout});
  using M = detail::RowMat<T>;
  Eigen::Map<const M> W(weight->value.data.data(), cout, static_cast<Eigen::Index>(g.rows()));
  std::vector<T> cols(g.pointwise() ? 0 : g.rows() * g.cols());
  for (int n = 0; n < xs.n; ++n) {
    const T* xn = x->value.data.data() + n * xs.chw();
    if (!g.pointwise()) detail::im2col(xn, g, cols.data());
    Eigen::Map<const M> C(g.pointwise() ? xn : cols.data(), static_cast<Eigen::Index>(g.rows()), static_cast<Eigen::Index>(g.cols()));
    Eigen::Map<M> O(out.data.data() + n * out.shape.chw(), cout, static_cast<Eigen::Index>(g.cols()));
    O.noalias() = W * C;
    if (bias) {
      for (int co = 0; co < cout; ++co) O.row(co).array() += bias->value.data[co];
    }
  }
  return make_result<T>(std::move(out), {x, weight, bias}, "conv2d", [g, cout](Node<T>& self) {
    const auto& x = self.parents[0];
    const auto& weight = self.parents[1];
    const auto& bias = self.parents[2];
    const Shape xs = x->value.shape;
    Eigen::Map<const M> W(weight->value.data.data(), cout, static_cast<Eigen::Index>(g.rows()));
    std::vector<T> cols(g.pointwise() ? 0 : g.rows() * g.cols());
    std::vector<T> dcols(g.rows() * g.cols());
    const std::size_t out_chw = static_cast<std::size_t>(cout) * g.cols();
    for (int n = 0; n < xs.n; ++n) {
      Eigen::Map<const M> dO(self.grad.data() + n * out_chw, cout, static_cast<Eigen::Index>(g.cols()));
      const T* xn = x->value.data.data() + n * xs.chw();
      if (weight->requires_grad) {
        if (!g.pointwise()) detail::im2col(xn, g, cols.data());
        Eigen::Map<const M> C(g.pointwise() ? xn : cols.data(), static_cast<Eigen::Index>(g.rows()), static_cast<Eigen::Index>(g.cols()));
        Eigen::Map<M> dW(weight->grad_buffer().data(), cout, static_cast<Eigen::Index>(g.rows()));
        dW.noalias() += dO * C.transpose();
      }
      if (bias && bias->requires_grad) {
        auto& db = bias->grad_buffer();
        for (int co = 0; co < cout; ++co) db[co] += dO.row(co).sum();
      }
      if (x->requires_grad) {
        T* dx = x->grad_buffer().data() + n * xs.chw();
        if (g.pointwise()) {
          Eigen::Map<M> dX(dx, static_cast<Eigen::Index>(g.rows()), static_cast<Eigen::Index>(g.cols()));
          dX.noalias() += W.transpose() * dO;
        } else {
          Eigen::Map<M> dC(dcols.data(), static_cast<Eigen::Index>(g.rows()), static_cast<Eigen::Index>(g.cols()));
          dC.noalias() = W.transpose() * dO;
          detail::col2im(dcols.data(), g, dx);
        }
      }
    }
  });
}

template <typename T, typename F, typename D>
Var<T> unary(const Var<T>& x, const char* name, F f, D df) {
  Tensor<T> out(x->value.shape);
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = f(x->value.data[i]);
  return make_result<T>(std::move(out), {x}, name, [df](Node<T>& self) {
    const auto& x = self.parents[0];
    auto& gx = x->grad_buffer();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i] * df(x->value.data[i], self.value.data[i]);
  });
}

template <typename T>
Var<T> relu(const Var<T>& x) {
  return unary(x, "relu", [](T v) { return v > T(0) ? v : T(0); }, [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
T sigmoid_scalar(T v) {
  return v >= T(0) ? T(1) / (T(1) + std::exp(-v)) : std::exp(v) / (T(1) + std::exp(v));
}

template <typename T>
Var<T> sigmoid(const Var<T>& x) {
  return unary(x, "sigmoid", [](T v) { return sigmoid_scalar(v); }, [](T, T y) { return y * (T(1) - y); });
}

/// |x| with subgradient 0 at 0.
template <typename T>
Var<T> abs(const Var<T>& x) {
  return unary(x, "abs", [](T v) { return std::abs(v); },
               [](T v, T) { return v > T(0) ? T(1) : v < T(0) ? T(-1) : T(0); });
}

template <typename T>
Var<T> scale(const Var<T>& x, T s) {
  return unary(x, "scale", [s](T v) { return s * v; }, [s](T, T) { return s; });
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b, T sb = T(1), const char* name = "add") {
  detail::require_shape(a->value.shape == b->value.shape,
                        std::string(name) + ": shape " + a->value.shape.str() + " vs " + b->value.shape.str());
  Tensor<T> out(a->value.shape);
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = a->value.data[i] + sb * b->value.data[i];
  return make_result<T>(std::move(out), {a, b}, name, [sb](Node<T>& self) {
    detail::accumulate(self.parents[0], self.grad);
    if (self.parents[1]->requires_grad) {
      auto& gb = self.parents[1]->grad_buffer();
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += sb * self.grad[i];
    }
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  return add(a, b, T(-1), "sub");
}

/// Concatenation along the channel axis.
template <typename T>
Var<T> concat(const std::vector<Var<T>>& xs) {
  detail::require_shape(!xs.empty(), "concat: no inputs");
  Shape s = xs[0]->value.shape;
  s.c = 0;
  for (const auto& x : xs) {
    const Shape& t = x->value.shape;
    detail::require_shape(t.n == s.n && t.h == s.h && t.w == s.w, "concat: mismatched shape " + t.str());
    s.c += t.c;
  }
  Tensor<T> out(s);
  for (int n = 0; n < s.n; ++n) {
    T* dst = out.data.data() + n * s.chw();
    for (const auto& x : xs) {
      const std::size_t len = x->value.shape.chw();
      std::copy_n(x->value.data.data() + n * len, len, dst);
      dst += len;
    }
  }
  return make_result<T>(std::move(out), xs, "concat", [](Node<T>& self) {
    const Shape s = self.value.shape;
    for (int n = 0; n < s.n; ++n) {
      const T* src = self.grad.data() + n * s.chw();
      for (const auto& x : self.parents) {
        const std::size_t len = x->value.shape.chw();
        if (x->requires_grad) {
          T* dst = x->grad_buffer().data() + n * len;
          for (std::size_t i = 0; i < len; ++i) dst[i] += src[i];
        }
        src += len;
      }
    }
  });
}

/// Softmax along `axis`, stabilised by subtracting each slice's maximum.
template <typename T>
Var<T> softmax(const Var<T>& x, int axis = 1) {
  const Shape s = x->value.shape;
  detail::require_shape(axis >= 0 && axis < 4, "softmax: axis must be in [0,4)");
  std::size_t outer = 1, inner = 1;
  for (int a = 0; a < axis; ++a) outer *= s.dim(a);
  for (int a = axis + 1; a < 4; ++a) inner *= s.dim(a);
  const std::size_t len = s.dim(axis);
  Tensor<T> out(s);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < inner; ++i) {
      const std::size_t base = o * len * inner + i;
      T m = -std::numeric_limits<T>::infinity();
      for (std::size_t k = 0; k < len; ++k) m = std::max(m, x->value.data[base + k * inner]);
      T z = 0;
      for (std::size_t k = 0; k < len; ++k) z += out.data[base + k * inner] = std::exp(x->value.data[base + k * inner] - m);
      for (std::size_t k = 0; k < len; ++k) out.data[base + k * inner] /= z;
    }
  }
  return make_result<T>(std::move(out), {x}, "softmax", [outer, inner, len](Node<T>& self) {
    auto& gx = self.parents[0]->grad_buffer();
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t i = 0; i < inner; ++i) {
        const std::size_t base = o * len * inner + i;
        T dot = 0;
        for (std::size_t k = 0; k < len; ++k) dot += self.grad[base + k * inner] * self.value.data[base + k * inner];
        for (std::size_t k = 0; k < len; ++k) {
          const std::size_t j = base + k * inner;
          gx[j] += self.value.data[j] * (self.grad[j] - dot);
        }
      }
    }
  });
}

/// 2x2 max pooling with stride 2; odd trailing rows/columns are dropped.
/// Ties go to the first cell in raster order.
template <typename T>
Var<T> maxpool2d(const Var<T>& x) {
  const Shape s = x->value.shape;
  detail::require_shape(s.h >= 2 && s.w >= 2, "maxpool2d: input smaller than 2x2");
  const Shape os{s.n, s.c, s.h / 2, s.w / 2};
  Tensor<T> out(os);
  std::vector<std::uint32_t> arg(os.size());
  std::size_t k = 0;
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      for (int h = 0; h < os.h; ++h) {
        for (int w = 0; w < os.w; ++w, ++k) {
          std::size_t best = x->value.offset(n, c, 2 * h, 2 * w);
          for (int dh = 0; dh < 2; ++dh) {
            for (int dw = 0; dw < 2; ++dw) {
              const std::size_t j = x->value.offset(n, c, 2 * h + dh, 2 * w + dw);
              if (x->value.data[j] > x->value.data[best]) best = j;
            }
          }
          out.data[k] = x->value.data[best];
          arg[k] = static_cast<std::uint32_t>(best);
        }
      }
    }
  }
  return make_result<T>(std::move(out), {x}, "maxpool2d", [arg = std::move(arg)](Node<T>& self) {
    auto& gx = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < arg.size(); ++i) gx[arg[i]] += self.grad[i];
  });
}

/// Batch normalisation over (N, H, W) per channel. In training mode the
/// batch statistics normalise and the running estimates are updated with
/// `momentum` (unbiased variance); in eval mode the running estimates are
/// used.
template <typename T>
Var<T> batchnorm2d(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, std::vector<T>& running_mean,
                   std::vector<T>& running_var, bool training, T momentum = T(0.1), T eps = T(1e-5)) {
  const Shape s = x->value.shape;
  const auto C = static_cast<std::size_t>(s.c);
  detail::require_shape(gamma->value.size() == C && beta->value.size() == C && running_mean.size() == C &&
                            running_var.size() == C,
                        "batchnorm2d: parameter size mismatch for input " + s.str());
  const std::size_t m = static_cast<std::size_t>(s.n) * s.hw();
  std::vector<T> mean(C), invstd(C);
  if (training) {
    detail::require_shape(m > 1, "batchnorm2d: training needs more than one value per channel");
    for (int c = 0; c < s.c; ++c) {
      T sum = 0;
      for (int n = 0; n < s.n; ++n) {
        const T* p = x->value.data.data() + x->value.offset(n, c, 0, 0);
        for (std::size_t i = 0; i < s.hw(); ++i) sum += p[i];
      }
      const T mu = sum / static_cast<T>(m);
      T ss = 0;
      for (int n = 0; n < s.n; ++n) {
        const T* p = x->value.data.data() + x->value.offset(n, c, 0, 0);
        for (std::size_t i = 0; i < s.hw(); ++i) ss += (p[i] - mu) * (p[i] - mu);
      }
      const T var = ss / static_cast<T>(m);
      mean[c] = mu;
      invstd[c] = T(1) / std::sqrt(var + eps);
      running_mean[c] = (T(1) - momentum) * running_mean[c] + momentum * mu;
      running_var[c] = (T(1) - momentum) * running_var[c] + momentum * ss / static_cast<T>(m - 1);
    }
  } else {
    for (std::size_t c = 0; c < C; ++c) {
      mean[c] = running_mean[c];
      invstd[c] = T(1) / std::sqrt(running_var[c] + eps);
    }
  }
  Tensor<T> out(s);
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      const std::size_t o = x->value.offset(n, c, 0, 0);
      const T g = gamma->value.data[c], b = beta->value.data[c];
      for (std::size_t i = 0; i < s.hw(); ++i) out.data[o + i] = g * (x->value.data[o + i] - mean[c]) * invstd[c] + b;
    }
  }
  return make_result<T>(std::move(out), {x, gamma, beta}, "batchnorm2d", [mean, invstd, training, m](Node<T>& self) {
    const auto& x = self.parents[0];
    const auto& gamma = self.parents[1];
    const auto& beta = self.parents[2];
    const Shape s = x->value.shape;
    for (int c = 0; c < s.c; ++c) {
      T sum_dy = 0, sum_dy_xhat = 0;
      for (int n = 0; n < s.n; ++n) {
        const std::size_t o = x->value.offset(n, c, 0, 0);
        for (std::size_t i = 0; i < s.hw(); ++i) {
          const T xhat = (x->value.data[o + i] - mean[c]) * invstd[c];
          sum_dy += self.grad[o + i];
          sum_dy_xhat += self.grad[o + i] * xhat;
        }
      }
      if (gamma->requires_grad) gamma->grad_buffer()[c] += sum_dy_xhat;
      if (beta->requires_grad) beta->grad_buffer()[c] += sum_dy;
      if (!x->requires_grad) continue;
      auto& gx = x->grad_buffer();
      const T g = gamma->value.data[c];
      const T mt = static_cast<T>(m);
      for (int n = 0; n < s.n; ++n) {
        const std::size_t o = x->value.offset(n, c, 0, 0);
        for (std::size_t i = 0; i < s.hw(); ++i) {
          if (training) {
            const T xhat = (x->value.data[o + i] - mean[c]) * invstd[c];
            gx[o + i] += g * invstd[c] / mt * (mt * self.grad[o + i] - sum_dy - xhat * sum_dy_xhat);
          } else {
            gx[o + i] += g * invstd[c] * self.grad[o + i];
          }
        }
      }
    }
  });
}

namespace detail {

struct Lerp {
  int i0, i1;
  double t;
};

// align_corners = false source coordinates for one axis.
inline std::vector<Lerp> lerp_axis(int in, int out, int factor) {
  std::vector<Lerp> l(out);
  for (int o = 0; o < out; ++o) {
    double src = (o + 0.5) / factor - 0.5;
    if (src < 0) src = 0;
    int i0 = static_cast<int>(std::floor(src));
    if (i0 > in - 1) i0 = in - 1;
    const int i1 = std::min(i0 + 1, in - 1);
    l[o] = {i0, i1, src - i0};
  }
  return l;
}

}  // namespace detail

/// Bilinear upsampling by an integer factor (align_corners = false).
template <typename T>
Var<T> upsample_bilinear(const Var<T>& x, int factor) {
  detail::require_shape(factor >= 1, "upsample_bilinear: factor must be >= 1");
  if (factor == 1) return x;
  const Shape s = x->value.shape;
  const Shape os{s.n, s.c, s.h * factor, s.w * factor};
  const auto ly = detail::lerp_axis(s.h, os.h, factor);
  const auto lx = detail::lerp_axis(s.w, os.w, factor);
  Tensor<T> out(os);
  for (int p = 0; p < s.n * s.c; ++p) {
    const T* in = x->value.data.data() + p * s.hw();
    T* o = out.data.data() + p * os.hw();
    for (int h = 0; h < os.h; ++h) {
      const auto& a = ly[h];
      for (int w = 0; w < os.w; ++w) {
        const auto& b = lx[w];
        const T ty = static_cast<T>(a.t), tx = static_cast<T>(b.t);
        o[h * os.w + w] = (T(1) - ty) * ((T(1) - tx) * in[a.i0 * s.w + b.i0] + tx * in[a.i0 * s.w + b.i1]) +
                          ty * ((T(1) - tx) * in[a.i1 * s.w + b.i0] + tx * in[a.i1 * s.w + b.i1]);
      }
    }
  }
  return make_result<T>(std::move(out), {x}, "upsample_bilinear", [ly, lx, s, os](Node<T>& self) {
    auto& gx = self.parents[0]->grad_buffer();
    for (int p = 0; p < s.n * s.c; ++p) {
      T* g = gx.data() + p * s.hw();
      const T* go = self.grad.data() + p * os.hw();
      for (int h = 0; h < os.h; ++h) {
        const auto& a = ly[h];
        for (int w = 0; w < os.w; ++w) {
          const auto& b = lx[w];
          const T ty = static_cast<T>(a.t), tx = static_cast<T>(b.t);
          const T d = go[h * os.w + w];
          g[a.i0 * s.w + b.i0] += d * (T(1) - ty) * (T(1) - tx);
          g[a.i0 * s.w + b.i1] += d * (T(1) - ty) * tx;
          g[a.i1 * s.w + b.i0] += d * ty * (T(1) - tx);
          g[a.i1 * s.w + b.i1] += d * ty * tx;
        }
      }
    }
  });
}

template <typename T>
Var<T> sum(const Var<T>& x) {
  Tensor<T> out(Shape{});
  for (const T v : x->value.data) out.data[0] += v;
  return make_result<T>(std::move(out), {x}, "sum", [](Node<T>& self) {
    auto& gx = self.parents[0]->grad_buffer();
    for (auto& g : gx) g += self.grad[0];
  });
}

/// Σ x·w for a constant weight tensor of the same shape.
template <typename T>
Var<T> weighted_sum(const Var<T>& x, const std::vector<T>& weights) {
  detail::require_shape(weights.size() == x->value.size(), "weighted_sum: weight size mismatch");
  Tensor<T> out(Shape{});
  for (std::size_t i = 0; i < weights.size(); ++i) out.data[0] += x->value.data[i] * weights[i];
  return make_result<T>(std::move(out), {x}, "weighted_sum", [weights](Node<T>& self) {
    auto& gx = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[0] * weights[i];
  });
}

/// Criss-cross affinity: E[n, j, h, w] = <Q(:, h, w), K(:, v_j)> over the
/// H+W-1 positions v_j sharing row h or column w (self counted once).
template <typename T>
Var<T> cc_affinity(const Var<T>& q, const Var<T>& k) {
  const Shape s = q->value.shape;
  detail::require_shape(s == k->value.shape, "cc_affinity: Q " + s.str() + " vs K " + k->value.shape.str());
  const int J = s.h + s.w - 1;
  Tensor<T> out(Shape{s.n, J, s.h, s.w});
  for (int n = 0; n < s.n; ++n) {
    for (int h = 0; h < s.h; ++h) {
      for (int w = 0; w < s.w; ++w) {
        for (int j = 0; j < J; ++j) {
          int vh, vw;
          detail::cc_member(j, h, w, s.h, vh, vw);
          T e = 0;
          for (int c = 0; c < s.c; ++c) e += q->value.at(n, c, h, w) * k->value.at(n, c, vh, vw);
          out.at(n, j, h, w) = e;
        }
      }
    }
  }
  return make_result<T>(std::move(out), {q, k}, "cc_affinity", [s, J](Node<T>& self) {
    const auto& q = self.parents[0];
    const auto& k = self.parents[1];
    std::vector<T>* gq = q->requires_grad ? &q->grad_buffer() : nullptr;
    std::vector<T>* gk = k->requires_grad ? &k->grad_buffer() : nullptr;
    for (int n = 0; n < s.n; ++n) {
      for (int h = 0; h < s.h; ++h) {
        for (int w = 0; w < s.w; ++w) {
          for (int j = 0; j < J; ++j) {
            int vh, vw;
            detail::cc_member(j, h, w, s.h, vh, vw);
            const T d = self.grad[self.value.offset(n, j, h, w)];
            if (d == T(0)) continue;
            for (int c = 0; c < s.c; ++c) {
              if (gq) (*gq)[q->value.offset(n, c, h, w)] += d * k->value.at(n, c, vh, vw);
              if (gk) (*gk)[k->value.offset(n, c, vh, vw)] += d * q->value.at(n, c, h, w);
            }
          }
        }
      }
    }
  });
}

/// Criss-cross aggregation: out[n, c, h, w] = Σ_j A[n, j, h, w] V[n, c, v_j].
template <typename T>
Var<T> cc_aggregate(const Var<T>& a, const Var<T>& v) {
  const Shape s = v->value.shape;
  const int J = s.h + s.w - 1;
  detail::require_shape(a->value.shape == (Shape{s.n, J, s.h, s.w}), "cc_aggregate: attention shape " + a->value.shape.str());
  Tensor<T> out(s);
  for (int n = 0; n < s.n; ++n) {
    for (int h = 0; h < s.h; ++h) {
      for (int w = 0; w < s.w; ++w) {
        for (int j = 0; j < J; ++j) {
          int vh, vw;
          detail::cc_member(j, h, w, s.h, vh, vw);
          const T att = a->value.at(n, j, h, w);
          for (int c = 0; c < s.c; ++c) out.at(n, c, h, w) += att * v->value.at(n, c, vh, vw);
        }
      }
    }
  }
  return make_result<T>(std::move(out), {a, v}, "cc_aggregate", [s, J](Node<T>& self) {
    const auto& a = self.parents[0];
    const auto& v = self.parents[1];
    std::vector<T>* ga = a->requires_grad ? &a->grad_buffer() : nullptr;
    std::vector<T>* gv = v->requires_grad ? &v->grad_buffer() : nullptr;
    for (int n = 0; n < s.n; ++n) {
      for (int h = 0; h < s.h; ++h) {
        for (int w = 0; w < s.w; ++w) {
          for (int j = 0; j < J; ++j) {
            int vh, vw;
            detail::cc_member(j, h, w, s.h, vh, vw);
            const T att = a->value.at(n, j, h, w);
            T da = 0;
            for (int c = 0; c < s.c; ++c) {
              const T d = self.grad[self.value.offset(n, c, h, w)];
              da += d * v->value.at(n, c, vh, vw);
              if (gv) (*gv)[v->value.offset(n, c, vh, vw)] += att * d;
            }
            if (ga) (*ga)[a->value.offset(n, j, h, w)] += da;
          }
        }
      }
    }
  });
}

/// Mean per-pixel categorical cross-entropy; labels are N*H*W class ids.
template <typename T>
Var<T> cross_entropy(const Var<T>& logits, const std::vector<int>& labels) {
  const Shape s = logits->value.shape;
  detail::require_shape(labels.size() == static_cast<std::size_t>(s.n) * s.hw(), "cross_entropy: label count mismatch");
  for (int y : labels) {
    if (y < 0 || y >= s.c) throw DataError("cross_entropy: class id " + std::to_string(y) + " outside [0," + std::to_string(s.c) + ")");
  }
  const std::size_t M = labels.size();
  std::vector<T> prob(s.size());
  double loss = 0;
  for (int n = 0; n < s.n; ++n) {
    for (std::size_t p = 0; p < s.hw(); ++p) {
      const std::size_t base = n * s.chw() + p;
      T m = -std::numeric_limits<T>::infinity();
      for (int c = 0; c < s.c; ++c) m = std::max(m, logits->value.data[base + c * s.hw()]);
      T z = 0;
      for (int c = 0; c < s.c; ++c) z += prob[base + c * s.hw()] = std::exp(logits->value.data[base + c * s.hw()] - m);
      for (int c = 0; c < s.c; ++c) prob[base + c * s.hw()] /= z;
      const int y = labels[n * s.hw() + p];
      loss += -(logits->value.data[base + y * s.hw()] - m - std::log(z));
    }
  }
  Tensor<T> out(Shape{});
  out.data[0] = static_cast<T>(loss / static_cast<double>(M));
  return make_result<T>(std::move(out), {logits}, "cross_entropy", [prob = std::move(prob), labels, s, M](Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    const T scale = self.grad[0] / static_cast<T>(M);
    for (int n = 0; n < s.n; ++n) {
      for (std::size_t p = 0; p < s.hw(); ++p) {
        const std::size_t base = n * s.chw() + p;
        const int y = labels[n * s.hw() + p];
        for (int c = 0; c < s.c; ++c) {
          const std::size_t i = base + c * s.hw();
          g[i] += scale * (prob[i] - (c == y ? T(1) : T(0)));
        }
      }
    }
  });
}

namespace detail {

// -[y ln σ(z) + (1-y) ln(1-σ(z))], stable for large |z|.
template <typename T>
T bce_term(T z, T y) {
  return std::max(z, T(0)) - z * y + std::log1p(std::exp(-std::abs(z)));
}

template <typename T>
Var<T> weighted_bce(const Var<T>& logits, const std::vector<T>& target, std::vector<T> weights, T denom, const char* name) {
  detail::require_shape(target.size() == logits->value.size(), std::string(name) + ": target size mismatch");
  double loss = 0;
  for (std::size_t i = 0; i < target.size(); ++i) loss += weights[i] * bce_term(logits->value.data[i], target[i]);
  Tensor<T> out(Shape{});
  out.data[0] = static_cast<T>(loss / denom);
  return make_result<T>(std::move(out), {logits}, name, [target, weights = std::move(weights), denom](Node<T>& self) {
    const auto& z = self.parents[0]->value.data;
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[0] * weights[i] * (sigmoid_scalar(z[i]) - target[i]) / denom;
  });
}

}  // namespace detail

/// Mean per-pixel binary cross-entropy on logits; targets in {0,1}.
template <typename T>
Var<T> bce_with_logits(const Var<T>& logits, const std::vector<T>& target) {
  for (T y : target) {
    if (y != T(0) && y != T(1)) throw DataError("bce_with_logits: target outside {0,1}");
  }
  return detail::weighted_bce(logits, target, std::vector<T>(target.size(), T(1)), static_cast<T>(target.size()), "bce_with_logits");
}

/// Class-balanced BCE: within each of the N maps, positives are weighted
/// |Y-|/|Y| and negatives |Y+|/|Y|; the result is the mean over pixels.
template <typename T>
Var<T> class_balanced_bce(const Var<T>& logits, const std::vector<T>& target) {
  const Shape s = logits->value.shape;
  detail::require_shape(s.c == 1, "class_balanced_bce: expects single-channel logits");
  detail::require_shape(target.size() == s.size(), "class_balanced_bce: target size mismatch");
  std::vector<T> weights(target.size());
  for (int n = 0; n < s.n; ++n) {
    const std::size_t o = n * s.hw();
    std::size_t pos = 0;
    for (std::size_t i = 0; i < s.hw(); ++i) {
      if (target[o + i] != T(0) && target[o + i] != T(1)) throw DataError("class_balanced_bce: target outside {0,1}");
      pos += target[o + i] == T(1);
    }
    const T total = static_cast<T>(s.hw());
    const T wpos = static_cast<T>(s.hw() - pos) / total, wneg = static_cast<T>(pos) / total;
    for (std::size_t i = 0; i < s.hw(); ++i) weights[o + i] = target[o + i] == T(1) ? wpos : wneg;
  }
  return detail::weighted_bce(logits, target, std::move(weights), static_cast<T>(target.size()), "class_balanced_bce");
}

}  // namespace agspnet::nn
