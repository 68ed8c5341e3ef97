#pragma once

#include <cmath>
#include <complex>
#include <cstddef>
#include <numbers>
#include <span>
#include <vector>

#include "pldnet/audio.hpp"
#include "pldnet/error.hpp"
#include "pldnet/fft.hpp"

namespace pldnet {

// Periodic square-root Hann window; its square is COLA at hop = len/2 and len/4.
inline std::vector<double> sqrt_hann(std::size_t len) {
  std::vector<double> w(len);
  for (std::size_t n = 0; n < len; ++n) {
    const double h = 0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * static_cast<double>(n) /
                                           static_cast<double>(len)));
    w[n] = std::sqrt(h);
  }
  return w;
}

// Analysis/synthesis configuration. Construction verifies that the product of
// the analysis and synthesis windows overlap-adds to a constant at `hop`.
class StftConfig {
 public:
  StftConfig() : StftConfig(512, 256, 512) {}

  StftConfig(std::size_t win_len, std::size_t hop, std::size_t fft_size)
      : StftConfig(win_len, hop, fft_size, sqrt_hann(win_len)) {}

  StftConfig(std::size_t win_len, std::size_t hop, std::size_t fft_size, std::vector<double> window)
      : win_len_(win_len), hop_(hop), fft_size_(fft_size), window_(std::move(window)) {
    if (win_len == 0 || hop == 0) throw ConfigError("stft: window and hop must be positive");
    if (hop > win_len) throw ConfigError("stft: hop must not exceed window length");
    if (fft_size < win_len) throw ConfigError("stft: fft_size must be >= win_len");
    if (window_.size() != win_len) throw ConfigError("stft: window length mismatch");
    // Sum of w^2 over all frames covering each position in one hop period.
    std::vector<double> ola(hop, 0.0);
    for (std::size_t n = 0; n < win_len; ++n) ola[n % hop] += window_[n] * window_[n];
    cola_ = ola[0];
    for (double v : ola) {
      if (std::abs(v - cola_) > 1e-10 * std::max(1.0, std::abs(cola_))) {
        throw ConfigError("stft: window pair is not COLA at the given hop");
      }
    }
    if (cola_ <= 0.0) throw ConfigError("stft: degenerate window");
  }

  std::size_t win_len() const { return win_len_; }
  std::size_t hop() const { return hop_; }
  std::size_t fft_size() const { return fft_size_; }
  std::size_t bins() const { return fft_size_ / 2 + 1; }
  // Zero samples prepended so frame l ends at original sample l*hop + hop.
  std::size_t left_pad() const { return win_len_ - hop_; }
  double cola_constant() const { return cola_; }
  std::span<const double> window() const { return window_; }

  std::size_t frames_for(std::size_t num_samples) const {
    const std::size_t padded = num_samples + left_pad();
    if (padded < win_len_) return 0;
    return (padded - win_len_) / hop_ + 1;
  }

  bool operator==(const StftConfig& o) const {
    return win_len_ == o.win_len_ && hop_ == o.hop_ && fft_size_ == o.fft_size_ &&
           window_ == o.window_;
  }

 private:
  std::size_t win_len_;
  std::size_t hop_;
  std::size_t fft_size_;
  std::vector<double> window_;
  double cola_ = 1.0;
};

// channels x F x T complex coefficients, time index fastest.
class ComplexSpectrogram {
 public:
  ComplexSpectrogram() = default;
  ComplexSpectrogram(std::size_t channels, std::size_t frames, StftConfig cfg)
      : channels_(channels),
        bins_(cfg.bins()),
        frames_(frames),
        cfg_(std::move(cfg)),
        data_(channels_ * bins_ * frames_) {}

  std::size_t channels() const { return channels_; }
  std::size_t bins() const { return bins_; }
  std::size_t frames() const { return frames_; }
  const StftConfig& config() const { return cfg_; }

  cplx& at(std::size_t c, std::size_t k, std::size_t l) { return data_[(c * bins_ + k) * frames_ + l]; }
  const cplx& at(std::size_t c, std::size_t k, std::size_t l) const {
    return data_[(c * bins_ + k) * frames_ + l];
  }

  std::span<cplx> data() { return data_; }
  std::span<const cplx> data() const { return data_; }

  std::vector<cplx> frame(std::size_t c, std::size_t l) const {
    std::vector<cplx> out(bins_);
    for (std::size_t k = 0; k < bins_; ++k) out[k] = at(c, k, l);
    return out;
  }
  void set_frame(std::size_t c, std::size_t l, std::span<const cplx> values) {
    if (values.size() != bins_) throw ShapeError("frame size mismatch");
    for (std::size_t k = 0; k < bins_; ++k) at(c, k, l) = values[k];
  }

  // Single-channel view copied out of a multichannel spectrogram.
  ComplexSpectrogram channel(std::size_t c) const {
    ComplexSpectrogram out(1, frames_, cfg_);
    std::copy(data_.begin() + static_cast<std::ptrdiff_t>(c * bins_ * frames_),
              data_.begin() + static_cast<std::ptrdiff_t>((c + 1) * bins_ * frames_),
              out.data_.begin());
    return out;
  }

 private:
  std::size_t channels_ = 0;
  std::size_t bins_ = 0;
  std::size_t frames_ = 0;
  StftConfig cfg_;
  std::vector<cplx> data_;
};

namespace detail {

inline void check_finite(std::span<const double> x) {
  for (double v : x) {
    if (!std::isfinite(v)) throw InvalidInput("stft: non-finite sample");
  }
}

}  // namespace detail

// One-sided STFT of each row of `signal` (channels x num_samples, row-major).
// Causal framing: frame l covers original samples [l*hop - left_pad, l*hop + hop).
inline ComplexSpectrogram stft_rows(std::span<const double> signal, std::size_t channels,
                                    std::size_t num_samples, const StftConfig& cfg) {
  if (num_samples == 0 || channels == 0) throw InvalidInput("stft: empty audio");
  detail::check_finite(signal);
  const std::size_t frames = cfg.frames_for(num_samples);
  if (frames == 0) throw InvalidInput("stft: signal shorter than one hop");
  ComplexSpectrogram spec(channels, frames, cfg);
  Fft fft(cfg.fft_size());
  std::vector<cplx> buf(cfg.fft_size());
  const auto win = cfg.window();
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(cfg.left_pad());
  for (std::size_t c = 0; c < channels; ++c) {
    const double* x = signal.data() + c * num_samples;
    for (std::size_t l = 0; l < frames; ++l) {
      std::fill(buf.begin(), buf.end(), cplx{});
      const std::ptrdiff_t start = static_cast<std::ptrdiff_t>(l * cfg.hop()) - pad;
      for (std::size_t n = 0; n < cfg.win_len(); ++n) {
        const std::ptrdiff_t i = start + static_cast<std::ptrdiff_t>(n);
        if (i >= 0 && i < static_cast<std::ptrdiff_t>(num_samples)) buf[n] = x[i] * win[n];
      }
      fft.forward(buf);
      for (std::size_t k = 0; k < spec.bins(); ++k) spec.at(c, k, l) = buf[k];
    }
  }
  return spec;
}

inline ComplexSpectrogram stft(const AudioBuffer& audio, const StftConfig& cfg = {}) {
  if (audio.empty()) throw InvalidInput("stft: empty audio");
  return stft_rows(audio.samples(), audio.channels(), audio.num_samples(), cfg);
}

// Weighted overlap-add synthesis, normalized by the window COLA constant.
// Output rows have `out_len` samples; positions past the last frame are zero.
inline std::vector<double> istft_rows(const ComplexSpectrogram& spec, const StftConfig& cfg,
                                      std::size_t out_len) {
  if (!(spec.config() == cfg)) throw InvalidInput("istft: config mismatch with spectrogram");
  const std::size_t channels = spec.channels();
  std::vector<double> out(channels * out_len, 0.0);
  Fft fft(cfg.fft_size());
  std::vector<cplx> buf(cfg.fft_size());
  const auto win = cfg.window();
  const std::size_t m = cfg.fft_size();
  const double scale = 1.0 / (static_cast<double>(m) * cfg.cola_constant());
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(cfg.left_pad());
  for (std::size_t c = 0; c < channels; ++c) {
    double* y = out.data() + c * out_len;
    for (std::size_t l = 0; l < spec.frames(); ++l) {
      // Hermitian extension; imaginary parts of DC and Nyquist are ignored.
      buf[0] = spec.at(c, 0, l).real();
      for (std::size_t k = 1; k < m / 2; ++k) {
        buf[k] = spec.at(c, k, l);
        buf[m - k] = std::conj(buf[k]);
      }
      buf[m / 2] = spec.at(c, m / 2, l).real();
      fft.inverse(buf);
      const std::ptrdiff_t start = static_cast<std::ptrdiff_t>(l * cfg.hop()) - pad;
      for (std::size_t n = 0; n < cfg.win_len(); ++n) {
        const std::ptrdiff_t i = start + static_cast<std::ptrdiff_t>(n);
        if (i >= 0 && i < static_cast<std::ptrdiff_t>(out_len)) {
          y[i] += buf[n].real() * win[n] * scale;
        }
      }
    }
  }
  return out;
}

inline AudioBuffer istft(const ComplexSpectrogram& spec, const StftConfig& cfg, std::size_t out_len) {
  AudioBuffer out(spec.channels(), out_len);
  const auto rows = istft_rows(spec, cfg, out_len);
  std::copy(rows.begin(), rows.end(), out.samples().begin());
  return out;
}

// Zero-extends to a whole number of hops plus one so every original sample is
// covered by a full set of overlapping frames; pair with istft(..., original_length).
inline std::size_t analysis_length(std::size_t num_samples, const StftConfig& cfg = {}) {
  const std::size_t hops = (num_samples + cfg.hop() - 1) / cfg.hop();
  return (hops + 1) * cfg.hop();
}

inline AudioBuffer pad_for_analysis(const AudioBuffer& audio, const StftConfig& cfg = {}) {
  AudioBuffer out(audio.channels(), analysis_length(audio.num_samples(), cfg),
                  audio.sample_rate_hz());
  for (std::size_t c = 0; c < audio.channels(); ++c) {
    std::copy(audio.channel(c).begin(), audio.channel(c).end(), out.channel(c).begin());
  }
  return out;
}

}  // namespace pldnet
