#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "pldnet/nn/tensor.hpp"

namespace pldnet::nn {

namespace detail {

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

inline void require_4d(const Tensor& x, const char* op) {
  if (x.ndim() != 4) throw ShapeError(std::string(op) + ": expected [B,C,F,T], got " + shape_str(x.shape()));
}

// y = f(x) elementwise; dfdx(x, y) gives the local derivative.
template <typename F, typename DF>
Tensor unary(const Tensor& x, F f, DF dfdx) {
  std::vector<double> y(x.numel());
  const auto xd = x.data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = f(xd[i]);
  return make_result(x.shape(), std::move(y), {x}, [dfdx](Node& self) {
    Node& px = *self.parents[0];
    if (!px.requires_grad) return;
    auto& gx = px.ensure_grad();
    for (std::size_t i = 0; i < gx.size(); ++i) {
      gx[i] += self.grad[i] * dfdx(px.data[i], self.data[i]);
    }
  });
}

inline void accumulate(Node& p, const std::vector<double>& g, double scale = 1.0) {
  if (!p.requires_grad) return;
  auto& dst = p.ensure_grad();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += scale * g[i];
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<double> y(a.numel());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.data()[i] + b.data()[i];
  return make_result(a.shape(), std::move(y), {a, b}, [](Node& self) {
    detail::accumulate(*self.parents[0], self.grad);
    detail::accumulate(*self.parents[1], self.grad);
  });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "sub");
  std::vector<double> y(a.numel());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.data()[i] - b.data()[i];
  return make_result(a.shape(), std::move(y), {a, b}, [](Node& self) {
    detail::accumulate(*self.parents[0], self.grad);
    detail::accumulate(*self.parents[1], self.grad, -1.0);
  });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "mul");
  std::vector<double> y(a.numel());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.data()[i] * b.data()[i];
  return make_result(a.shape(), std::move(y), {a, b}, [](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    if (pa.requires_grad) {
      auto& g = pa.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb.data[i];
    }
    if (pb.requires_grad) {
      auto& g = pb.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pa.data[i];
    }
  });
}

inline Tensor div(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "div");
  std::vector<double> y(a.numel());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.data()[i] / b.data()[i];
  return make_result(a.shape(), std::move(y), {a, b}, [](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    if (pa.requires_grad) {
      auto& g = pa.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] / pb.data[i];
    }
    if (pb.requires_grad) {
      auto& g = pb.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i] * self.data[i] / pb.data[i];
    }
  });
}

inline Tensor scale(const Tensor& x, double s) {
  return detail::unary(x, [s](double v) { return s * v; }, [s](double, double) { return s; });
}

inline Tensor add_scalar(const Tensor& x, double s) {
  return detail::unary(x, [s](double v) { return v + s; }, [](double, double) { return 1.0; });
}

inline Tensor square(const Tensor& x) {
  return detail::unary(x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

inline Tensor sqrt(const Tensor& x) {
  return detail::unary(x, [](double v) { return std::sqrt(v); },
                       [](double, double y) { return 0.5 / y; });
}

inline Tensor abs(const Tensor& x) {
  return detail::unary(x, [](double v) { return std::abs(v); },
                       [](double v, double) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

inline Tensor sigmoid(const Tensor& x) {
  return detail::unary(
      x,
      [](double v) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

// Extended-precision accumulation keeps finite-difference checks of large sums clean.
inline Tensor sum(const Tensor& x) {
  long double s = 0.0L;
  for (double v : x.data()) s += v;
  return make_result({1}, {static_cast<double>(s)}, {x}, [](Node& self) {
    Node& px = *self.parents[0];
    if (!px.requires_grad) return;
    auto& g = px.ensure_grad();
    for (double& v : g) v += self.grad[0];
  });
}

inline Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

// Per-channel parametric ReLU on axis 1; alpha has shape [C].
inline Tensor prelu(const Tensor& x, const Tensor& alpha) {
  if (x.ndim() < 2 || alpha.numel() != x.dim(1)) {
    throw ShapeError("prelu: alpha must have one entry per channel of " + shape_str(x.shape()));
  }
  const std::size_t b = x.dim(0), c = x.dim(1), inner = x.numel() / (b * c);
  std::vector<double> y(x.numel());
  for (std::size_t n = 0; n < b; ++n) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double a = alpha.data()[ch];
      const std::size_t off = (n * c + ch) * inner;
      for (std::size_t i = 0; i < inner; ++i) {
        const double v = x.data()[off + i];
        y[off + i] = v >= 0.0 ? v : a * v;
      }
    }
  }
  return make_result(x.shape(), std::move(y), {x, alpha}, [b, c, inner](Node& self) {
    Node& px = *self.parents[0];
    Node& pa = *self.parents[1];
    for (std::size_t n = 0; n < b; ++n) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double a = pa.data[ch];
        const std::size_t off = (n * c + ch) * inner;
        double ga = 0.0;
        for (std::size_t i = 0; i < inner; ++i) {
          const double v = px.data[off + i];
          const double g = self.grad[off + i];
          if (px.requires_grad) px.ensure_grad()[off + i] += v >= 0.0 ? g : a * g;
          if (v < 0.0) ga += g * v;
        }
        if (pa.requires_grad) pa.ensure_grad()[ch] += ga;
      }
    }
  });
}

// Normalizes over the channel axis at each (b, f, t), then applies a per-channel affine map.
inline Tensor layer_norm_channels(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                                  double eps = 1e-5) {
  detail::require_4d(x, "layer_norm_channels");
  const std::size_t b = x.dim(0), c = x.dim(1), pos = x.dim(2) * x.dim(3);
  if (gamma.numel() != c || beta.numel() != c) throw ShapeError("layer_norm_channels: affine size");
  std::vector<double> y(x.numel());
  auto xhat = std::make_shared<std::vector<double>>(x.numel());
  auto inv_std = std::make_shared<std::vector<double>>(b * pos);
  const auto xd = x.data();
  for (std::size_t n = 0; n < b; ++n) {
    for (std::size_t p = 0; p < pos; ++p) {
      double mu = 0.0;
      for (std::size_t ch = 0; ch < c; ++ch) mu += xd[(n * c + ch) * pos + p];
      mu /= static_cast<double>(c);
      double var = 0.0;
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double d = xd[(n * c + ch) * pos + p] - mu;
        var += d * d;
      }
      var /= static_cast<double>(c);
      const double is = 1.0 / std::sqrt(var + eps);
      (*inv_std)[n * pos + p] = is;
      for (std::size_t ch = 0; ch < c; ++ch) {
        const std::size_t i = (n * c + ch) * pos + p;
        (*xhat)[i] = (xd[i] - mu) * is;
        y[i] = gamma.data()[ch] * (*xhat)[i] + beta.data()[ch];
      }
    }
  }
  return make_result(x.shape(), std::move(y), {x, gamma, beta},
                     [b, c, pos, xhat, inv_std](Node& self) {
    Node& px = *self.parents[0];
    Node& pg = *self.parents[1];
    Node& pb = *self.parents[2];
    const double inv_c = 1.0 / static_cast<double>(c);
    for (std::size_t n = 0; n < b; ++n) {
      for (std::size_t p = 0; p < pos; ++p) {
        double m1 = 0.0, m2 = 0.0;
        for (std::size_t ch = 0; ch < c; ++ch) {
          const std::size_t i = (n * c + ch) * pos + p;
          const double dxh = self.grad[i] * pg.data[ch];
          m1 += dxh;
          m2 += dxh * (*xhat)[i];
          if (pg.requires_grad) pg.ensure_grad()[ch] += self.grad[i] * (*xhat)[i];
          if (pb.requires_grad) pb.ensure_grad()[ch] += self.grad[i];
        }
        if (!px.requires_grad) continue;
        auto& gx = px.ensure_grad();
        m1 *= inv_c;
        m2 *= inv_c;
        const double is = (*inv_std)[n * pos + p];
        for (std::size_t ch = 0; ch < c; ++ch) {
          const std::size_t i = (n * c + ch) * pos + p;
          const double dxh = self.grad[i] * pg.data[ch];
          gx[i] += is * (dxh - m1 - (*xhat)[i] * m2);
        }
      }
    }
  });
}

// Softmax along `axis`.
inline Tensor softmax(const Tensor& x, std::size_t axis) {
  if (axis >= x.ndim()) throw ShapeError("softmax: axis out of range");
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= x.dim(i);
  for (std::size_t i = axis + 1; i < x.ndim(); ++i) inner *= x.dim(i);
  const std::size_t len = x.dim(axis);
  std::vector<double> y(x.numel());
  const auto xd = x.data();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      double mx = -INFINITY;
      for (std::size_t j = 0; j < len; ++j) mx = std::max(mx, xd[base + j * inner]);
      double s = 0.0;
      for (std::size_t j = 0; j < len; ++j) s += (y[base + j * inner] = std::exp(xd[base + j * inner] - mx));
      for (std::size_t j = 0; j < len; ++j) y[base + j * inner] /= s;
    }
  }
  return make_result(x.shape(), std::move(y), {x}, [outer, inner, len](Node& self) {
    Node& px = *self.parents[0];
    if (!px.requires_grad) return;
    auto& gx = px.ensure_grad();
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t in = 0; in < inner; ++in) {
        const std::size_t base = o * len * inner + in;
        double dot = 0.0;
        for (std::size_t j = 0; j < len; ++j) dot += self.grad[base + j * inner] * self.data[base + j * inner];
        for (std::size_t j = 0; j < len; ++j) {
          const std::size_t i = base + j * inner;
          gx[i] += self.data[i] * (self.grad[i] - dot);
        }
      }
    }
  });
}

// Concatenates 4-D tensors along the channel axis.
inline Tensor concat_channels(const std::vector<Tensor>& xs) {
  if (xs.empty()) throw ShapeError("concat_channels: no inputs");
  for (const auto& x : xs) detail::require_4d(x, "concat_channels");
  const std::size_t b = xs[0].dim(0), pos = xs[0].dim(2) * xs[0].dim(3);
  std::size_t c_total = 0;
  std::vector<std::size_t> offsets;
  for (const auto& x : xs) {
    if (x.dim(0) != b || x.dim(2) != xs[0].dim(2) || x.dim(3) != xs[0].dim(3)) {
      throw ShapeError("concat_channels: incompatible " + shape_str(x.shape()) + " vs " +
                       shape_str(xs[0].shape()));
    }
    offsets.push_back(c_total);
    c_total += x.dim(1);
  }
  std::vector<double> y(b * c_total * pos);
  for (std::size_t k = 0; k < xs.size(); ++k) {
    const std::size_t c = xs[k].dim(1);
    for (std::size_t n = 0; n < b; ++n) {
      std::copy_n(xs[k].data().begin() + static_cast<std::ptrdiff_t>(n * c * pos), c * pos,
                  y.begin() + static_cast<std::ptrdiff_t>((n * c_total + offsets[k]) * pos));
    }
  }
  return make_result({b, c_total, xs[0].dim(2), xs[0].dim(3)}, std::move(y), xs,
                     [b, c_total, pos, offsets](Node& self) {
    for (std::size_t k = 0; k < self.parents.size(); ++k) {
      Node& p = *self.parents[k];
      if (!p.requires_grad) continue;
      auto& g = p.ensure_grad();
      const std::size_t c = p.shape[1];
      for (std::size_t n = 0; n < b; ++n) {
        const double* src = self.grad.data() + (n * c_total + offsets[k]) * pos;
        double* dst = g.data() + n * c * pos;
        for (std::size_t i = 0; i < c * pos; ++i) dst[i] += src[i];
      }
    }
  });
}

// Channels [start, start + count) of a 4-D tensor.
inline Tensor slice_channels(const Tensor& x, std::size_t start, std::size_t count) {
  detail::require_4d(x, "slice_channels");
  const std::size_t b = x.dim(0), c = x.dim(1), pos = x.dim(2) * x.dim(3);
  if (start + count > c || count == 0) throw ShapeError("slice_channels: range out of bounds");
  std::vector<double> y(b * count * pos);
  for (std::size_t n = 0; n < b; ++n) {
    std::copy_n(x.data().begin() + static_cast<std::ptrdiff_t>((n * c + start) * pos), count * pos,
                y.begin() + static_cast<std::ptrdiff_t>(n * count * pos));
  }
  return make_result({b, count, x.dim(2), x.dim(3)}, std::move(y), {x},
                     [b, c, pos, start, count](Node& self) {
    Node& px = *self.parents[0];
    if (!px.requires_grad) return;
    auto& g = px.ensure_grad();
    for (std::size_t n = 0; n < b; ++n) {
      const double* src = self.grad.data() + n * count * pos;
      double* dst = g.data() + (n * c + start) * pos;
      for (std::size_t i = 0; i < count * pos; ++i) dst[i] += src[i];
    }
  });
}

// Sum over the channel axis, keeping it as size 1.
inline Tensor sum_channels(const Tensor& x) {
  detail::require_4d(x, "sum_channels");
  const std::size_t b = x.dim(0), c = x.dim(1), pos = x.dim(2) * x.dim(3);
  std::vector<double> y(b * pos, 0.0);
  for (std::size_t n = 0; n < b; ++n) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double* src = x.data().data() + (n * c + ch) * pos;
      for (std::size_t i = 0; i < pos; ++i) y[n * pos + i] += src[i];
    }
  }
  return make_result({b, 1, x.dim(2), x.dim(3)}, std::move(y), {x}, [b, c, pos](Node& self) {
    Node& px = *self.parents[0];
    if (!px.requires_grad) return;
    auto& g = px.ensure_grad();
    for (std::size_t n = 0; n < b; ++n) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        double* dst = g.data() + (n * c + ch) * pos;
        for (std::size_t i = 0; i < pos; ++i) dst[i] += self.grad[n * pos + i];
      }
    }
  });
}

// Row `index` along axis 0; the result drops that axis.
inline Tensor select(const Tensor& x, std::size_t index) {
  if (x.ndim() < 2 || index >= x.dim(0)) throw ShapeError("select: index out of range");
  Shape s(x.shape().begin() + 1, x.shape().end());
  const std::size_t len = numel(s);
  std::vector<double> y(x.data().begin() + static_cast<std::ptrdiff_t>(index * len),
                        x.data().begin() + static_cast<std::ptrdiff_t>((index + 1) * len));
  return make_result(std::move(s), std::move(y), {x}, [index, len](Node& self) {
    Node& px = *self.parents[0];
    if (!px.requires_grad) return;
    auto& g = px.ensure_grad();
    for (std::size_t i = 0; i < len; ++i) g[index * len + i] += self.grad[i];
  });
}

// Elements [start, start + count) of the last axis.
inline Tensor slice_last(const Tensor& x, std::size_t start, std::size_t count) {
  if (x.ndim() == 0 || start + count > x.shape().back()) throw ShapeError("slice_last: range out of bounds");
  const std::size_t len = x.shape().back(), rows = x.numel() / len;
  Shape s = x.shape();
  s.back() = count;
  std::vector<double> y(rows * count);
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(x.data().begin() + static_cast<std::ptrdiff_t>(r * len + start), count, y.begin() + static_cast<std::ptrdiff_t>(r * count));
  }
  return make_result(std::move(s), std::move(y), {x}, [rows, len, start, count](Node& self) {
    Node& px = *self.parents[0];
    if (!px.requires_grad) return;
    auto& g = px.ensure_grad();
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t i = 0; i < count; ++i) g[r * len + start + i] += self.grad[r * count + i];
    }
  });
}

// value * sigmoid(gate_logits)
inline Tensor gate(const Tensor& value, const Tensor& gate_logits) { return mul(value, sigmoid(gate_logits)); }

// (re^2 + im^2 + eps)^(power/2) - eps^(power/2): compressed complex magnitude, zero at the origin.
inline Tensor compressed_magnitude(const Tensor& re, const Tensor& im, double power, double eps = 1e-8) {
  detail::require_same_shape(re, im, "compressed_magnitude");
  const double half = 0.5 * power;
  const double offset = std::pow(eps, half);
  std::vector<double> y(re.numel());
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double r2 = re.data()[i] * re.data()[i] + im.data()[i] * im.data()[i];
    y[i] = std::pow(r2 + eps, half) - offset;
  }
  return make_result(re.shape(), std::move(y), {re, im}, [half, eps](Node& self) {
    Node& pr = *self.parents[0];
    Node& pi = *self.parents[1];
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const double a = pr.data[i], b = pi.data[i];
      const double d = 2.0 * half * std::pow(a * a + b * b + eps, half - 1.0) * self.grad[i];
      if (pr.requires_grad) pr.ensure_grad()[i] += d * a;
      if (pi.requires_grad) pi.ensure_grad()[i] += d * b;
    }
  });
}

}  // namespace pldnet::nn
