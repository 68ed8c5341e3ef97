#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <span>
#include <vector>

#include "pldnet/error.hpp"
#include "pldnet/noise_tracker.hpp"
#include "pldnet/special.hpp"
#include "pldnet/stft.hpp"

// Dual-microphone power-level-difference pre-filter: posterior SNR, PLD ratio,
// speech presence / absence probabilities and an OMLSA spectral gain applied
// to the primary microphone.
namespace pldnet::pld {

using Vec = std::vector<double>;

struct PldConstants {
  std::size_t k_low = 8;
  std::size_t k_high = 113;
  double gamma_thresh = 1.69;
  double psi_tilde_thresh = 0.25;
  double kappa_low = 1.5;
  double kappa_high = 3.0;
  double gamma_low = 1.0;
  double gamma_high = 4.6;

  void validate(std::size_t bins) const {
    if (!(k_low < k_high)) throw ConfigError("pld.k_low must be < pld.k_high");
    if (k_high >= bins) throw ConfigError("pld.k_high must be < number of bins");
    if (!(kappa_low > 0.0 && kappa_low < kappa_high)) {
      throw ConfigError("pld.kappa_low must be positive and < pld.kappa_high");
    }
    if (!(gamma_low > 0.0 && gamma_low < gamma_high)) {
      throw ConfigError("pld.gamma_low must be positive and < pld.gamma_high");
    }
    if (!(gamma_thresh > 0.0)) throw ConfigError("pld.gamma_thresh must be positive");
    if (!(psi_tilde_thresh > 0.0)) throw ConfigError("pld.psi_tilde_thresh must be positive");
  }
};

struct OmlsaParams {
  double dd_alpha = 0.92;
  double xi_min = 0.031622776601683791;   // -15 dB
  double g_min = 0.056234132519034911;    // -25 dB
  double q_max = 0.999;

  void validate() const {
    if (!(dd_alpha > 0.0 && dd_alpha < 1.0)) throw ConfigError("omlsa.dd_alpha must be in (0,1)");
    if (!(g_min > 0.0 && g_min < 1.0)) throw ConfigError("omlsa.g_min must be in (0,1)");
    if (!(xi_min > 0.0)) throw ConfigError("omlsa.xi_min must be positive");
    if (!(q_max > 0.0 && q_max < 1.0)) throw ConfigError("omlsa.q_max must be in (0,1)");
  }
};

// Denominator floor of the PLD ratio, relative to the secondary noise PSD.
inline constexpr double kKappaDenFloor = 0.01;

struct PldFrameState {
  Vec gamma1, gamma2, kappa, psi;
  double psi_tilde = 0.0;
  Vec q_hat, xi, gain;
};

inline Vec posterior_snr(std::span<const double> frame_power, std::span<const double> lambda) {
  if (frame_power.size() != lambda.size()) throw ShapeError("posterior_snr: size mismatch");
  Vec g(frame_power.size());
  for (std::size_t k = 0; k < g.size(); ++k) g[k] = frame_power[k] / lambda[k];
  return g;
}

inline Vec pld_ratio(std::span<const double> power1, std::span<const double> lambda1,
                     std::span<const double> power2, std::span<const double> lambda2) {
  const std::size_t n = power1.size();
  if (lambda1.size() != n || power2.size() != n || lambda2.size() != n) {
    throw ShapeError("pld_ratio: size mismatch");
  }
  Vec kappa(n);
  for (std::size_t k = 0; k < n; ++k) {
    const double num = std::max(power1[k] - lambda1[k], 0.0);
    const double den = std::max(power2[k] - lambda2[k], kKappaDenFloor * lambda2[k]);
    kappa[k] = num / den;
  }
  return kappa;
}

inline double speech_presence_bin(double gamma1, double kappa, const PldConstants& c) {
  if (!(gamma1 > c.gamma_thresh)) return 0.0;
  if (kappa >= c.kappa_high) return 1.0;
  if (kappa > c.kappa_low) return (kappa - c.kappa_low) / (c.kappa_high - c.kappa_low);
  return 0.0;
}

inline Vec speech_presence(std::span<const double> gamma1, std::span<const double> kappa,
                           const PldConstants& c) {
  if (gamma1.size() != kappa.size()) throw ShapeError("speech_presence: size mismatch");
  Vec psi(gamma1.size());
  for (std::size_t k = 0; k < psi.size(); ++k) psi[k] = speech_presence_bin(gamma1[k], kappa[k], c);
  return psi;
}

inline double global_spp(std::span<const double> psi, const PldConstants& c) {
  if (c.k_high >= psi.size() || c.k_low > c.k_high) throw ShapeError("global_spp: band out of range");
  double sum = 0.0;
  for (std::size_t k = c.k_low; k <= c.k_high; ++k) sum += psi[k];
  return sum / static_cast<double>(c.k_high - c.k_low + 1);
}

inline Vec signal_absence(std::span<const double> gamma1, std::span<const double> psi,
                          double psi_tilde, const PldConstants& c) {
  if (gamma1.size() != psi.size()) throw ShapeError("signal_absence: size mismatch");
  Vec q(gamma1.size());
  for (std::size_t k = 0; k < q.size(); ++k) {
    if (gamma1[k] <= c.gamma_low || psi_tilde <= c.psi_tilde_thresh) {
      q[k] = 1.0;
    } else {
      const double ramp = (c.gamma_high - gamma1[k]) / (c.gamma_high - c.gamma_low);
      q[k] = std::clamp(std::max(ramp, 1.0 - psi[k]), 0.0, 1.0);
    }
  }
  return q;
}

// Decision-directed memory carried between frames.
struct OmlsaState {
  Vec prev_gain;
  Vec prev_gamma;
};

struct OmlsaResult {
  Vec gain;
  Vec xi;
};

// Scalar OMLSA gain given the a-priori SNR already computed.
inline double omlsa_gain_bin(double gamma1, double q_hat, double xi, const OmlsaParams& p) {
  if (q_hat >= 1.0) return p.g_min;
  const double v = std::max(gamma1 * xi / (1.0 + xi), 1e-300);
  const double q = std::min(q_hat, p.q_max);
  const double p1 = 1.0 / (1.0 + (q / (1.0 - q)) * (1.0 + xi) * std::exp(-v));
  const double log_gh1 = std::log(xi / (1.0 + xi)) + 0.5 * expint_e1(v);
  const double log_g = p1 * log_gh1 + (1.0 - p1) * std::log(p.g_min);
  return std::clamp(std::exp(std::min(log_g, 0.0)), p.g_min, 1.0);
}

inline double decision_directed_xi(double gamma1, double prev_gain, double prev_gamma,
                                   const OmlsaParams& p) {
  const double xi = p.dd_alpha * prev_gain * prev_gain * prev_gamma +
                    (1.0 - p.dd_alpha) * std::max(gamma1 - 1.0, 0.0);
  return std::max(xi, p.xi_min);
}

inline OmlsaResult omlsa_gain(std::span<const double> gamma1, std::span<const double> q_hat,
                              const OmlsaState& state, const OmlsaParams& p) {
  const std::size_t n = gamma1.size();
  if (q_hat.size() != n) throw ShapeError("omlsa_gain: size mismatch");
  const bool has_prev = state.prev_gain.size() == n && state.prev_gamma.size() == n;
  OmlsaResult r{Vec(n), Vec(n)};
  for (std::size_t k = 0; k < n; ++k) {
    const double pg = has_prev ? state.prev_gain[k] : 0.0;
    const double pgam = has_prev ? state.prev_gamma[k] : 0.0;
    r.xi[k] = decision_directed_xi(gamma1[k], pg, pgam, p);
    r.gain[k] = omlsa_gain_bin(gamma1[k], q_hat[k], r.xi[k], p);
  }
  return r;
}

inline std::vector<cplx> apply_pld(std::span<const cplx> y1, std::span<const double> gain) {
  if (y1.size() != gain.size()) throw ShapeError("apply_pld: size mismatch");
  std::vector<cplx> out(y1.size());
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = gain[k] * y1[k];
  return out;
}

// Frame-by-frame causal processor holding both noise trackers and the OMLSA memory.
class PldProcessor {
 public:
  PldProcessor(PldConstants constants = {}, OmlsaParams omlsa = {}, NoiseTrackerParams tracker = {})
      : c_(constants), omlsa_(omlsa), tracker_params_(tracker) {
    omlsa_.validate();
    tracker_params_.validate();
  }

  std::vector<cplx> process_frame(std::span<const cplx> y1, std::span<const cplx> y2,
                                  PldFrameState* trace = nullptr) {
    const std::size_t n = y1.size();
    if (y2.size() != n) throw ShapeError("pld: channel frame size mismatch");
    Vec p1(n), p2(n);
    for (std::size_t k = 0; k < n; ++k) {
      p1[k] = std::norm(y1[k]);
      p2[k] = std::norm(y2[k]);
    }
    if (!started_) {
      c_.validate(n);
      t1_ = init_tracker(p1, tracker_params_);
      t2_ = init_tracker(p2, tracker_params_);
      started_ = true;
    } else {
      update_tracker(t1_, p1);
      update_tracker(t2_, p2);
    }
    PldFrameState s;
    s.gamma1 = posterior_snr(p1, t1_.lambda);
    s.gamma2 = posterior_snr(p2, t2_.lambda);
    s.kappa = pld_ratio(p1, t1_.lambda, p2, t2_.lambda);
    s.psi = speech_presence(s.gamma1, s.kappa, c_);
    s.psi_tilde = global_spp(s.psi, c_);
    s.q_hat = signal_absence(s.gamma1, s.psi, s.psi_tilde, c_);
    auto g = omlsa_gain(s.gamma1, s.q_hat, memory_, omlsa_);
    s.gain = std::move(g.gain);
    s.xi = std::move(g.xi);
    memory_.prev_gain = s.gain;
    memory_.prev_gamma = s.gamma1;
    auto out = apply_pld(y1, s.gain);
    if (trace != nullptr) *trace = std::move(s);
    return out;
  }

 private:
  PldConstants c_;
  OmlsaParams omlsa_;
  NoiseTrackerParams tracker_params_;
  bool started_ = false;
  NoiseTrackerState t1_, t2_;
  OmlsaState memory_;
};

struct PldResult {
  ComplexSpectrogram x_pld;
  std::vector<PldFrameState> trace;
};

inline PldResult pld_process_stream(const ComplexSpectrogram& y, const PldConstants& constants = {},
                                    const OmlsaParams& omlsa = {},
                                    const NoiseTrackerParams& tracker = {}, bool keep_trace = true) {
  if (y.channels() != 2) {
    throw InvalidInput("pld: expected 2 channels, got " + std::to_string(y.channels()));
  }
  PldProcessor proc(constants, omlsa, tracker);
  PldResult r{ComplexSpectrogram(1, y.frames(), y.config()), {}};
  if (keep_trace) r.trace.resize(y.frames());
  for (std::size_t l = 0; l < y.frames(); ++l) {
    const auto f1 = y.frame(0, l);
    const auto f2 = y.frame(1, l);
    const auto out = proc.process_frame(f1, f2, keep_trace ? &r.trace[l] : nullptr);
    r.x_pld.set_frame(0, l, out);
  }
  return r;
}

}  // namespace pldnet::pld
