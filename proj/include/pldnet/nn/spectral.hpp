#pragma once

#include <complex>
#include <vector>

#include "pldnet/fft.hpp"
#include "pldnet/nn/tensor.hpp"
#include "pldnet/stft.hpp"

// STFT and iSTFT as differentiable tensor ops. Spectra are stored as
// [B, 2, F, T] with channel 0 the real part and channel 1 the imaginary part.
namespace pldnet::nn {

inline Tensor spectrogram_to_tensor(const ComplexSpectrogram& s) {
  const std::size_t b = s.channels(), f = s.bins(), t = s.frames();
  std::vector<double> d(b * 2 * f * t);
  for (std::size_t n = 0; n < b; ++n) {
    for (std::size_t k = 0; k < f; ++k) {
      for (std::size_t l = 0; l < t; ++l) {
        d[((n * 2 + 0) * f + k) * t + l] = s.at(n, k, l).real();
        d[((n * 2 + 1) * f + k) * t + l] = s.at(n, k, l).imag();
      }
    }
  }
  return Tensor::from_data({b, 2, f, t}, std::move(d));
}

inline ComplexSpectrogram tensor_to_spectrogram(const Tensor& x, const StftConfig& cfg) {
  if (x.ndim() != 4 || x.dim(1) != 2 || x.dim(2) != cfg.bins()) {
    throw ShapeError("expected [B,2," + std::to_string(cfg.bins()) + ",T], got " + shape_str(x.shape()));
  }
  const std::size_t b = x.dim(0), f = x.dim(2), t = x.dim(3);
  ComplexSpectrogram s(b, t, cfg);
  const auto d = x.data();
  for (std::size_t n = 0; n < b; ++n) {
    for (std::size_t k = 0; k < f; ++k) {
      for (std::size_t l = 0; l < t; ++l) {
        s.at(n, k, l) = {d[((n * 2 + 0) * f + k) * t + l], d[((n * 2 + 1) * f + k) * t + l]};
      }
    }
  }
  return s;
}

// [B, N] waveforms -> [B, 2, F, T] spectra.
inline Tensor stft_op(const Tensor& x, const StftConfig& cfg) {
  if (x.ndim() != 2) throw ShapeError("stft_op: expected [B,N], got " + shape_str(x.shape()));
  const std::size_t b = x.dim(0), n = x.dim(1);
  auto spec = stft_rows(x.data(), b, n, cfg);
  Tensor out = spectrogram_to_tensor(spec);
  const std::size_t f = cfg.bins(), t = spec.frames();
  return make_result(out.shape(), std::move(out.vec()), {x}, [cfg, b, n, f, t](Node& self) {
    Node& px = *self.parents[0];
    if (!px.requires_grad) return;
    auto& gx = px.ensure_grad();
    const std::size_t m = cfg.fft_size();
    Fft fft(m);
    std::vector<cplx> buf(m);
    const auto win = cfg.window();
    const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(cfg.left_pad());
    for (std::size_t r = 0; r < b; ++r) {
      for (std::size_t l = 0; l < t; ++l) {
        std::fill(buf.begin(), buf.end(), cplx{});
        for (std::size_t k = 0; k < f; ++k) {
          buf[k] = {self.grad[((r * 2 + 0) * f + k) * t + l], self.grad[((r * 2 + 1) * f + k) * t + l]};
        }
        fft.inverse(buf);
        const std::ptrdiff_t start = static_cast<std::ptrdiff_t>(l * cfg.hop()) - pad;
        for (std::size_t i = 0; i < cfg.win_len(); ++i) {
          const std::ptrdiff_t idx = start + static_cast<std::ptrdiff_t>(i);
          if (idx >= 0 && idx < static_cast<std::ptrdiff_t>(n)) gx[r * n + idx] += win[i] * buf[i].real();
        }
      }
    }
  });
}

// [B, 2, F, T] spectra -> [B, out_len] waveforms by weighted overlap-add.
inline Tensor istft_op(const Tensor& spec, const StftConfig& cfg, std::size_t out_len) {
  const auto s = tensor_to_spectrogram(spec, cfg);
  auto rows = istft_rows(s, cfg, out_len);
  const std::size_t b = spec.dim(0), f = spec.dim(2), t = spec.dim(3);
  return make_result({b, out_len}, std::move(rows), {spec}, [cfg, b, f, t, out_len](Node& self) {
    Node& ps = *self.parents[0];
    if (!ps.requires_grad) return;
    auto& gs = ps.ensure_grad();
    const std::size_t m = cfg.fft_size();
    Fft fft(m);
    std::vector<cplx> buf(m);
    const auto win = cfg.window();
    const double scale = 1.0 / (static_cast<double>(m) * cfg.cola_constant());
    const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(cfg.left_pad());
    for (std::size_t r = 0; r < b; ++r) {
      for (std::size_t l = 0; l < t; ++l) {
        std::fill(buf.begin(), buf.end(), cplx{});
        const std::ptrdiff_t start = static_cast<std::ptrdiff_t>(l * cfg.hop()) - pad;
        for (std::size_t i = 0; i < cfg.win_len(); ++i) {
          const std::ptrdiff_t idx = start + static_cast<std::ptrdiff_t>(i);
          if (idx >= 0 && idx < static_cast<std::ptrdiff_t>(out_len)) {
            buf[i] = self.grad[r * out_len + idx] * win[i] * scale;
          }
        }
        fft.forward(buf);
        for (std::size_t k = 0; k < f; ++k) {
          const bool edge = k == 0 || k == m / 2;
          const double c = edge ? 1.0 : 2.0;
          gs[((r * 2 + 0) * f + k) * t + l] += c * buf[k].real();
          if (!edge) gs[((r * 2 + 1) * f + k) * t + l] += c * buf[k].imag();
        }
      }
    }
  });
}

}  // namespace pldnet::nn
