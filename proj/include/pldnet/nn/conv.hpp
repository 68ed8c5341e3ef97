#pragma once

#include <algorithm>
#include <cstddef>
#include <string>
#include <vector>

#include "pldnet/nn/tensor.hpp"

namespace pldnet::nn {

// 2-D convolution over (frequency, time). The time axis is always causal:
// it is left-padded by dilation_t * (kernel_t - 1) and never right-padded.
struct ConvSpec {
  std::size_t in_ch = 1;
  std::size_t out_ch = 1;
  std::size_t kernel_f = 1, kernel_t = 1;
  std::size_t stride_f = 1, stride_t = 1;
  std::size_t dilation_f = 1, dilation_t = 1;
  std::size_t pad_f_left = 0, pad_f_right = 0;
  std::size_t groups = 1;
  bool transposed = false;
  std::size_t output_padding_f = 0;  // transposed only

  std::size_t time_pad() const { return dilation_t * (kernel_t - 1); }

  // Weight shape: [out, in/groups, kf, kt] for convolution,
  // [in, out/groups, kf, kt] for the transposed form.
  Shape weight_shape() const {
    return transposed ? Shape{in_ch, out_ch / groups, kernel_f, kernel_t}
                      : Shape{out_ch, in_ch / groups, kernel_f, kernel_t};
  }

  void validate() const {
    if (in_ch == 0 || out_ch == 0 || kernel_f == 0 || kernel_t == 0 || stride_f == 0 ||
        stride_t == 0 || dilation_f == 0 || dilation_t == 0 || groups == 0) {
      throw ConfigError("conv: all sizes must be positive");
    }
    if (in_ch % groups != 0 || out_ch % groups != 0) {
      throw ConfigError("conv: channels must divide evenly into groups");
    }
    if (transposed && (kernel_t != 1 || stride_t != 1 || groups != 1)) {
      throw ConfigError("conv_transpose: only time kernel 1, time stride 1, groups 1 supported");
    }
  }

  // Forward-convolution output length along frequency.
  std::size_t conv_out_f(std::size_t f) const {
    const std::size_t span = dilation_f * (kernel_f - 1) + 1;
    const std::size_t padded = f + pad_f_left + pad_f_right;
    if (padded < span) throw ShapeError("conv: frequency axis too short for kernel");
    return (padded - span) / stride_f + 1;
  }
  std::size_t conv_out_t(std::size_t t) const {
    const std::size_t span = dilation_t * (kernel_t - 1) + 1;
    return (t + time_pad() - span) / stride_t + 1;
  }
  // Transposed-convolution output length along frequency.
  std::size_t transpose_out_f(std::size_t f) const {
    const std::size_t full = (f - 1) * stride_f + dilation_f * (kernel_f - 1) + 1 + output_padding_f;
    if (full < pad_f_left + pad_f_right + 1) throw ShapeError("conv_transpose: padding too large");
    return full - pad_f_left - pad_f_right;
  }
};

namespace detail {

struct ConvGeom {
  std::size_t b, cin, fin, tin, cout, fout, tout;
};

// Loops shared by forward, input-gradient and weight-gradient passes. `visit`
// receives (input row offset, output row offset, weight index, time offset,
// first valid output time) for every contributing (row, row, tap) triple.
template <typename Visit>
void for_each_tap(const ConvSpec& s, const ConvGeom& g, Visit&& visit) {
  const std::size_t cin_g = g.cin / s.groups, cout_g = g.cout / s.groups;
  const std::ptrdiff_t tpad = static_cast<std::ptrdiff_t>(s.time_pad());
  for (std::size_t n = 0; n < g.b; ++n) {
    for (std::size_t grp = 0; grp < s.groups; ++grp) {
      for (std::size_t oc = 0; oc < cout_g; ++oc) {
        const std::size_t o = grp * cout_g + oc;
        for (std::size_t ic = 0; ic < cin_g; ++ic) {
          const std::size_t i = grp * cin_g + ic;
          for (std::size_t kf = 0; kf < s.kernel_f; ++kf) {
            for (std::size_t kt = 0; kt < s.kernel_t; ++kt) {
              const std::size_t widx = ((o * cin_g + ic) * s.kernel_f + kf) * s.kernel_t + kt;
              const std::ptrdiff_t toff = static_cast<std::ptrdiff_t>(kt * s.dilation_t) - tpad;
              for (std::size_t fo = 0; fo < g.fout; ++fo) {
                const std::ptrdiff_t fi = static_cast<std::ptrdiff_t>(fo * s.stride_f + kf * s.dilation_f) -
                                          static_cast<std::ptrdiff_t>(s.pad_f_left);
                if (fi < 0 || fi >= static_cast<std::ptrdiff_t>(g.fin)) continue;
                const std::size_t in_row = ((n * g.cin + i) * g.fin + static_cast<std::size_t>(fi)) * g.tin;
                const std::size_t out_row = ((n * g.cout + o) * g.fout + fo) * g.tout;
                visit(in_row, out_row, widx, toff);
              }
            }
          }
        }
      }
    }
  }
}

// 1x1 convolutions reduce to channel mixing over the whole F*T plane.
inline bool is_pointwise(const ConvSpec& s) {
  return s.kernel_f == 1 && s.kernel_t == 1 && s.stride_f == 1 && s.stride_t == 1 && s.pad_f_left == 0 &&
         s.pad_f_right == 0;
}

inline double dot4(const double* a, const double* b, std::size_t n) {
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += a[i] * b[i];
    s1 += a[i + 1] * b[i + 1];
    s2 += a[i + 2] * b[i + 2];
    s3 += a[i + 3] * b[i + 3];
  }
  for (; i < n; ++i) s0 += a[i] * b[i];
  return (s0 + s1) + (s2 + s3);
}

// Visits (input plane, output plane, weight index) for a pointwise conv.
template <typename Visit>
void for_each_plane(const ConvSpec& s, const ConvGeom& g, Visit&& visit) {
  const std::size_t cin_g = g.cin / s.groups, cout_g = g.cout / s.groups, plane = g.fin * g.tin;
  for (std::size_t n = 0; n < g.b; ++n) {
    for (std::size_t grp = 0; grp < s.groups; ++grp) {
      for (std::size_t oc = 0; oc < cout_g; ++oc) {
        const std::size_t o = grp * cout_g + oc;
        for (std::size_t ic = 0; ic < cin_g; ++ic) {
          visit((n * g.cin + grp * cin_g + ic) * plane, (n * g.cout + o) * plane, o * cin_g + ic, plane);
        }
      }
    }
  }
}

inline void conv_forward(const ConvSpec& s, const ConvGeom& g, const double* x, const double* w,
                         double* y) {
  if (is_pointwise(s)) {
    for_each_plane(s, g, [&](std::size_t in, std::size_t out, std::size_t widx, std::size_t len) {
      const double wv = w[widx];
      const double* xr = x + in;
      double* yr = y + out;
      for (std::size_t i = 0; i < len; ++i) yr[i] += wv * xr[i];
    });
    return;
  }
  const std::size_t st = s.stride_t;
  for_each_tap(s, g, [&](std::size_t in_row, std::size_t out_row, std::size_t widx, std::ptrdiff_t toff) {
    const double wv = w[widx];
    const double* xr = x + in_row;
    double* yr = y + out_row;
    if (st == 1) {
      const std::size_t t0 = toff < 0 ? static_cast<std::size_t>(-toff) : 0;
      const std::size_t t1 = std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(g.tout),
                                                     static_cast<std::ptrdiff_t>(g.tin) - toff);
      for (std::size_t t = t0; t < t1; ++t) yr[t] += wv * xr[static_cast<std::ptrdiff_t>(t) + toff];
    } else {
      for (std::size_t t = 0; t < g.tout; ++t) {
        const std::ptrdiff_t ti = static_cast<std::ptrdiff_t>(t * st) + toff;
        if (ti >= 0 && ti < static_cast<std::ptrdiff_t>(g.tin)) yr[t] += wv * xr[ti];
      }
    }
  });
}

inline void conv_backward_input(const ConvSpec& s, const ConvGeom& g, const double* dy,
                                const double* w, double* dx) {
  if (is_pointwise(s)) {
    for_each_plane(s, g, [&](std::size_t in, std::size_t out, std::size_t widx, std::size_t len) {
      const double wv = w[widx];
      double* xr = dx + in;
      const double* yr = dy + out;
      for (std::size_t i = 0; i < len; ++i) xr[i] += wv * yr[i];
    });
    return;
  }
  const std::size_t st = s.stride_t;
  for_each_tap(s, g, [&](std::size_t in_row, std::size_t out_row, std::size_t widx, std::ptrdiff_t toff) {
    const double wv = w[widx];
    double* xr = dx + in_row;
    const double* yr = dy + out_row;
    if (st == 1) {
      const std::size_t t0 = toff < 0 ? static_cast<std::size_t>(-toff) : 0;
      const std::size_t t1 = std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(g.tout),
                                                     static_cast<std::ptrdiff_t>(g.tin) - toff);
      for (std::size_t t = t0; t < t1; ++t) xr[static_cast<std::ptrdiff_t>(t) + toff] += wv * yr[t];
    } else {
      for (std::size_t t = 0; t < g.tout; ++t) {
        const std::ptrdiff_t ti = static_cast<std::ptrdiff_t>(t * st) + toff;
        if (ti >= 0 && ti < static_cast<std::ptrdiff_t>(g.tin)) xr[ti] += wv * yr[t];
      }
    }
  });
}

inline void conv_backward_weight(const ConvSpec& s, const ConvGeom& g, const double* x,
                                 const double* dy, double* dw) {
  if (is_pointwise(s)) {
    for_each_plane(s, g, [&](std::size_t in, std::size_t out, std::size_t widx, std::size_t len) {
      dw[widx] += dot4(x + in, dy + out, len);
    });
    return;
  }
  const std::size_t st = s.stride_t;
  for_each_tap(s, g, [&](std::size_t in_row, std::size_t out_row, std::size_t widx, std::ptrdiff_t toff) {
    const double* xr = x + in_row;
    const double* yr = dy + out_row;
    double acc = 0.0;
    if (st == 1) {
      const std::size_t t0 = toff < 0 ? static_cast<std::size_t>(-toff) : 0;
      const std::size_t t1 = std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(g.tout),
                                                     static_cast<std::ptrdiff_t>(g.tin) - toff);
      for (std::size_t t = t0; t < t1; ++t) acc += xr[static_cast<std::ptrdiff_t>(t) + toff] * yr[t];
    } else {
      for (std::size_t t = 0; t < g.tout; ++t) {
        const std::ptrdiff_t ti = static_cast<std::ptrdiff_t>(t * st) + toff;
        if (ti >= 0 && ti < static_cast<std::ptrdiff_t>(g.tin)) acc += xr[ti] * yr[t];
      }
    }
    dw[widx] += acc;
  });
}

inline void add_bias(double* y, const double* bias, std::size_t b, std::size_t c, std::size_t pos) {
  for (std::size_t n = 0; n < b; ++n) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      double* row = y + (n * c + ch) * pos;
      for (std::size_t i = 0; i < pos; ++i) row[i] += bias[ch];
    }
  }
}

inline void bias_grad(const double* dy, double* db, std::size_t b, std::size_t c, std::size_t pos) {
  for (std::size_t n = 0; n < b; ++n) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double* row = dy + (n * c + ch) * pos;
      double acc = 0.0;
      for (std::size_t i = 0; i < pos; ++i) acc += row[i];
      db[ch] += acc;
    }
  }
}

inline void check_conv_args(const Tensor& x, const Tensor& w, const Tensor& bias, const ConvSpec& s,
                            const char* op) {
  s.validate();
  if (x.ndim() != 4 || x.dim(1) != s.in_ch) {
    throw ShapeError(std::string(op) + ": input " + shape_str(x.shape()) + " does not have " +
                     std::to_string(s.in_ch) + " channels");
  }
  if (w.shape() != s.weight_shape()) {
    throw ShapeError(std::string(op) + ": weight " + shape_str(w.shape()) + " expected " +
                     shape_str(s.weight_shape()));
  }
  if (bias.defined() && bias.numel() != s.out_ch) throw ShapeError(std::string(op) + ": bias size");
}

// Running count of multiply-accumulates performed by conv/attention forwards.
inline std::size_t& mac_counter() {
  thread_local std::size_t macs = 0;
  return macs;
}

}  // namespace detail

// Cross-correlation with the padding/stride/dilation in `spec`. `bias` may be undefined.
inline Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, const ConvSpec& spec) {
  detail::check_conv_args(x, w, bias, spec, "conv2d");
  if (spec.transposed) throw ConfigError("conv2d: spec is marked transposed");
  const detail::ConvGeom g{x.dim(0), spec.in_ch, x.dim(2), x.dim(3), spec.out_ch,
                           spec.conv_out_f(x.dim(2)), spec.conv_out_t(x.dim(3))};
  std::vector<double> y(g.b * g.cout * g.fout * g.tout, 0.0);
  detail::conv_forward(spec, g, x.data().data(), w.data().data(), y.data());
  detail::mac_counter() += g.b * g.cout * g.fout * g.tout * (spec.in_ch / spec.groups) * spec.kernel_f *
                           spec.kernel_t;
  std::vector<Tensor> parents{x, w};
  if (bias.defined()) {
    detail::add_bias(y.data(), bias.data().data(), g.b, g.cout, g.fout * g.tout);
    parents.push_back(bias);
  }
  return make_result({g.b, g.cout, g.fout, g.tout}, std::move(y), std::move(parents),
                     [spec, g](Node& self) {
    Node& px = *self.parents[0];
    Node& pw = *self.parents[1];
    if (px.requires_grad) {
      detail::conv_backward_input(spec, g, self.grad.data(), pw.data.data(), px.ensure_grad().data());
    }
    if (pw.requires_grad) {
      detail::conv_backward_weight(spec, g, px.data.data(), self.grad.data(), pw.ensure_grad().data());
    }
    if (self.parents.size() > 2 && self.parents[2]->requires_grad) {
      detail::bias_grad(self.grad.data(), self.parents[2]->ensure_grad().data(), g.b, g.cout,
                        g.fout * g.tout);
    }
  });
}

// Exact adjoint of conv2d along frequency (time kernel must be 1).
inline Tensor conv2d_transpose(const Tensor& x, const Tensor& w, const Tensor& bias, const ConvSpec& spec) {
  detail::check_conv_args(x, w, bias, spec, "conv2d_transpose");
  if (!spec.transposed) throw ConfigError("conv2d_transpose: spec is not marked transposed");
  // View as the forward conv that maps [out_ch, f_out] -> [in_ch, f_in].
  ConvSpec fwd = spec;
  fwd.transposed = false;
  fwd.in_ch = spec.out_ch;
  fwd.out_ch = spec.in_ch;
  const std::size_t f_out = spec.transpose_out_f(x.dim(2));
  if (fwd.conv_out_f(f_out) != x.dim(2)) {
    throw ShapeError("conv2d_transpose: frequency sizes are not invertible with this padding");
  }
  const detail::ConvGeom g{x.dim(0), fwd.in_ch, f_out, x.dim(3), fwd.out_ch, x.dim(2), x.dim(3)};
  std::vector<double> y(g.b * g.cin * g.fin * g.tin, 0.0);
  detail::conv_backward_input(fwd, g, x.data().data(), w.data().data(), y.data());
  detail::mac_counter() += g.b * g.cout * g.fout * g.tout * g.cin * spec.kernel_f;
  std::vector<Tensor> parents{x, w};
  if (bias.defined()) {
    detail::add_bias(y.data(), bias.data().data(), g.b, g.cin, g.fin * g.tin);
    parents.push_back(bias);
  }
  return make_result({g.b, g.cin, g.fin, g.tin}, std::move(y), std::move(parents),
                     [fwd, g](Node& self) {
    Node& px = *self.parents[0];
    Node& pw = *self.parents[1];
    if (px.requires_grad) {
      detail::conv_forward(fwd, g, self.grad.data(), pw.data.data(), px.ensure_grad().data());
    }
    if (pw.requires_grad) {
      detail::conv_backward_weight(fwd, g, self.grad.data(), px.data.data(), pw.ensure_grad().data());
    }
    if (self.parents.size() > 2 && self.parents[2]->requires_grad) {
      detail::bias_grad(self.grad.data(), self.parents[2]->ensure_grad().data(), g.b, g.cin,
                        g.fin * g.tin);
    }
  });
}

}  // namespace pldnet::nn
