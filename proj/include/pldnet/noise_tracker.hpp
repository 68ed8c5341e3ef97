#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "pldnet/error.hpp"

namespace pldnet {

// Minima-controlled recursive averaging of the stationary noise PSD.
struct NoiseTrackerParams {
  double alpha_s = 0.8;         // periodogram smoothing
  double alpha_d = 0.95;        // noise update in speech-absent bins
  std::size_t sub_window_len = 15;  // V frames per sub-window
  std::size_t num_sub_windows = 8;  // U sub-windows in the minimum search
  double bias_comp = 1.5;       // minimum-statistics bias factor
  double absence_zeta = 1.67;   // absence decided when smoothed <= zeta * bias_comp * minimum
  double lambda_floor = 1e-10;

  void validate() const {
    if (!(alpha_s > 0.0 && alpha_s < 1.0)) throw ConfigError("tracker.alpha_s must be in (0,1)");
    if (!(alpha_d > 0.0 && alpha_d < 1.0)) throw ConfigError("tracker.alpha_d must be in (0,1)");
    if (sub_window_len == 0) throw ConfigError("tracker.sub_window_len must be positive");
    if (num_sub_windows == 0) throw ConfigError("tracker.num_sub_windows must be positive");
    if (!(bias_comp >= 1.0)) throw ConfigError("tracker.bias_comp must be >= 1");
    if (!(absence_zeta > 0.0)) throw ConfigError("tracker.absence_zeta must be positive");
    if (!(lambda_floor > 0.0)) throw ConfigError("tracker.lambda_floor must be positive");
  }
};

struct NoiseTrackerState {
  NoiseTrackerParams params;
  std::vector<double> smoothed_psd;
  std::vector<double> running_min;
  std::vector<double> sub_min;                  // minimum of the current sub-window
  std::vector<std::vector<double>> min_buffer;  // ring of completed sub-window minima
  std::size_t ring_pos = 0;
  std::vector<double> lambda_raw;  // recursive average over speech-absent frames
  std::vector<double> lambda;      // bias_comp * lambda_raw, floored
  std::size_t frame_count = 0;

  std::size_t bins() const { return lambda.size(); }
};

// Seeds the tracker with the mean periodogram of `first_frames`.
inline NoiseTrackerState init_tracker(std::span<const std::vector<double>> first_frames,
                                      const NoiseTrackerParams& params = {}) {
  params.validate();
  if (first_frames.empty()) throw InvalidInput("init_tracker: need at least one frame");
  const std::size_t bins = first_frames.front().size();
  if (bins == 0) throw InvalidInput("init_tracker: empty frame");
  std::vector<double> mean(bins, 0.0);
  for (const auto& f : first_frames) {
    if (f.size() != bins) throw InvalidInput("init_tracker: frame size mismatch");
    for (std::size_t k = 0; k < bins; ++k) {
      if (!(f[k] >= 0.0) || !std::isfinite(f[k])) {
        throw InvalidInput("init_tracker: frame power must be finite and non-negative");
      }
      mean[k] += f[k];
    }
  }
  for (double& v : mean) v /= static_cast<double>(first_frames.size());

  NoiseTrackerState s;
  s.params = params;
  s.lambda.resize(bins);
  s.lambda_raw.resize(bins);
  for (std::size_t k = 0; k < bins; ++k) {
    s.lambda[k] = std::max(mean[k], params.lambda_floor);
    s.lambda_raw[k] = s.lambda[k] / params.bias_comp;
  }
  s.smoothed_psd = mean;
  s.running_min = mean;
  s.sub_min = mean;
  s.frame_count = first_frames.size();
  return s;
}

inline NoiseTrackerState init_tracker(const std::vector<double>& first_frame,
                                      const NoiseTrackerParams& params = {}) {
  return init_tracker(std::span<const std::vector<double>>(&first_frame, 1), params);
}

// Advances the tracker by one frame and returns the updated noise PSD.
inline const std::vector<double>& update_tracker(NoiseTrackerState& s,
                                                 std::span<const double> frame_power) {
  const auto& p = s.params;
  const std::size_t bins = s.bins();
  if (frame_power.size() != bins) throw InvalidInput("update_tracker: frame size mismatch");
  for (double v : frame_power) {
    if (!(v >= 0.0) || !std::isfinite(v)) {
      throw InvalidInput("update_tracker: frame power must be finite and non-negative");
    }
  }
  for (std::size_t k = 0; k < bins; ++k) {
    s.smoothed_psd[k] = p.alpha_s * s.smoothed_psd[k] + (1.0 - p.alpha_s) * frame_power[k];
    s.sub_min[k] = std::min(s.sub_min[k], s.smoothed_psd[k]);
    double m = s.sub_min[k];
    for (const auto& past : s.min_buffer) m = std::min(m, past[k]);
    s.running_min[k] = m;
    if (s.smoothed_psd[k] <= p.absence_zeta * p.bias_comp * m) {
      s.lambda_raw[k] = p.alpha_d * s.lambda_raw[k] + (1.0 - p.alpha_d) * frame_power[k];
    }
    // The gate favours low periodogram values, so the raw average reads low.
    s.lambda[k] = std::max(p.bias_comp * s.lambda_raw[k], p.lambda_floor);
  }
  ++s.frame_count;
  if (s.frame_count % p.sub_window_len == 0) {
    if (s.min_buffer.size() < p.num_sub_windows) {
      s.min_buffer.push_back(s.sub_min);
    } else {
      s.min_buffer[s.ring_pos] = s.sub_min;
      s.ring_pos = (s.ring_pos + 1) % p.num_sub_windows;
    }
    s.sub_min = s.smoothed_psd;
  }
  return s.lambda;
}

}  // namespace pldnet
