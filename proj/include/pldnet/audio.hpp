#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "pldnet/error.hpp"

namespace pldnet {

inline constexpr int kSampleRate = 16000;

// Multichannel real audio, channel-major. Channel 0 is the primary microphone.
class AudioBuffer {
 public:
  AudioBuffer() = default;
  AudioBuffer(std::size_t channels, std::size_t num_samples, int sample_rate_hz = kSampleRate)
      : channels_(channels),
        num_samples_(num_samples),
        sample_rate_hz_(sample_rate_hz),
        samples_(channels * num_samples, 0.0) {
    if (channels == 0) throw InvalidInput("audio buffer needs at least one channel");
    if (sample_rate_hz <= 0) throw InvalidInput("sample rate must be positive");
  }

  static AudioBuffer mono(std::vector<double> samples, int sample_rate_hz = kSampleRate) {
    AudioBuffer a(1, samples.size(), sample_rate_hz);
    a.samples_ = std::move(samples);
    return a;
  }

  static AudioBuffer from_channels(const std::vector<std::vector<double>>& chans,
                                   int sample_rate_hz = kSampleRate) {
    if (chans.empty()) throw InvalidInput("audio buffer needs at least one channel");
    AudioBuffer a(chans.size(), chans[0].size(), sample_rate_hz);
    for (std::size_t c = 0; c < chans.size(); ++c) {
      if (chans[c].size() != a.num_samples_) throw InvalidInput("channel length mismatch");
      std::copy(chans[c].begin(), chans[c].end(), a.channel(c).begin());
    }
    return a;
  }

  std::size_t channels() const { return channels_; }
  std::size_t num_samples() const { return num_samples_; }
  int sample_rate_hz() const { return sample_rate_hz_; }
  bool empty() const { return num_samples_ == 0; }

  std::span<double> channel(std::size_t c) {
    return {samples_.data() + c * num_samples_, num_samples_};
  }
  std::span<const double> channel(std::size_t c) const {
    return {samples_.data() + c * num_samples_, num_samples_};
  }
  std::vector<double> channel_copy(std::size_t c) const {
    auto s = channel(c);
    return {s.begin(), s.end()};
  }

  std::span<const double> samples() const { return samples_; }
  std::span<double> samples() { return samples_; }

  bool all_finite() const {
    for (double v : samples_) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

 private:
  std::size_t channels_ = 0;
  std::size_t num_samples_ = 0;
  int sample_rate_hz_ = kSampleRate;
  std::vector<double> samples_;
};

inline void require_pipeline_rate(const AudioBuffer& a) {
  if (a.sample_rate_hz() != kSampleRate) {
    throw InvalidInput("expected 16000 Hz audio, got " + std::to_string(a.sample_rate_hz()));
  }
}

inline double mean_power(std::span<const double> x) {
  if (x.empty()) return 0.0;
  double s = 0.0;
  for (double v : x) s += v * v;
  return s / static_cast<double>(x.size());
}

}  // namespace pldnet
