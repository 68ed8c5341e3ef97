#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "pldnet/audio.hpp"
#include "pldnet/fft.hpp"

// Deterministic stand-ins for speech and noise corpora: voiced syllables with
// formant-shaped harmonics, fricative bursts and pauses; spectrally coloured
// noises and synthetic babble.
namespace pldnet::synth {

namespace detail {

struct Vowel {
  std::array<double, 3> formant;
  std::array<double, 3> bandwidth;
  std::array<double, 3> gain;
};

inline const std::array<Vowel, 5>& vowels() {
  static const std::array<Vowel, 5> v{{
      {{730, 1090, 2440}, {90, 110, 170}, {1.0, 0.5, 0.25}},  // a
      {{530, 1840, 2480}, {70, 100, 150}, {1.0, 0.45, 0.3}},  // e
      {{270, 2290, 3010}, {60, 100, 150}, {1.0, 0.25, 0.2}},  // i
      {{570, 840, 2410}, {80, 90, 160}, {1.0, 0.6, 0.15}},    // o
      {{300, 870, 2240}, {60, 90, 140}, {1.0, 0.35, 0.1}},    // u
  }};
  return v;
}

inline double formant_envelope(const Vowel& v, double f) {
  double e = 0.0;
  for (std::size_t i = 0; i < 3; ++i) {
    const double x = (f - v.formant[i]) / v.bandwidth[i];
    e += v.gain[i] / (1.0 + x * x);
  }
  return e;
}

inline double ramp(std::size_t i, std::size_t n, std::size_t edge) {
  edge = std::min(edge, n / 2);
  if (edge == 0) return 1.0;
  const double pi = std::numbers::pi;
  if (i < edge) return 0.5 - 0.5 * std::cos(pi * static_cast<double>(i) / static_cast<double>(edge));
  if (i >= n - edge) return 0.5 - 0.5 * std::cos(pi * static_cast<double>(n - 1 - i) / static_cast<double>(edge));
  return 1.0;
}

inline void normalize_rms(std::vector<double>& x, double rms) {
  double p = 0.0;
  for (double v : x) p += v * v;
  p = std::sqrt(p / static_cast<double>(std::max<std::size_t>(x.size(), 1)));
  if (p > 0.0) {
    for (double& v : x) v *= rms / p;
  }
}

}  // namespace detail

// Speech-like signal: leading silence, then words of 1-4 syllables separated by pauses.
inline std::vector<double> speech(std::uint64_t seed, double seconds, int fs = kSampleRate) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const auto n = static_cast<std::size_t>(std::llround(seconds * fs));
  std::vector<double> x(n, 0.0);
  const double f0_base = 95.0 + 120.0 * u(rng);
  const double two_pi = 2.0 * std::numbers::pi;
  std::normal_distribution<double> white(0.0, 1.0);
  auto samples = [&](double sec) { return static_cast<std::size_t>(sec * fs); };

  std::size_t pos = samples(0.08 + 0.15 * u(rng));
  while (pos < n) {
    const int syllables = 1 + static_cast<int>(u(rng) * 4.0);
    for (int s = 0; s < syllables && pos < n; ++s) {
      if (u(rng) < 0.4) {
        // Fricative onset: differentiated white noise.
        const std::size_t len = std::min(samples(0.03 + 0.06 * u(rng)), n - pos);
        const double amp = 0.15 + 0.2 * u(rng);
        double prev = 0.0, prev2 = 0.0;
        for (std::size_t i = 0; i < len; ++i) {
          const double w = white(rng);
          const double hp = w - 2.0 * prev + prev2;
          prev2 = prev;
          prev = w;
          x[pos + i] += amp * 0.25 * hp * detail::ramp(i, len, samples(0.008));
        }
        pos += len;
      }
      const std::size_t len = std::min(samples(0.08 + 0.17 * u(rng)), n - pos);
      const auto& v = detail::vowels()[static_cast<std::size_t>(u(rng) * 5.0) % 5];
      const double f0_start = f0_base * (0.9 + 0.25 * u(rng));
      const double f0_end = f0_start * (0.8 + 0.3 * u(rng));
      const double amp = 0.6 + 0.4 * u(rng);
      const std::size_t harmonics = static_cast<std::size_t>(4000.0 / f0_base);
      std::vector<double> hamp(harmonics + 1, 0.0);
      double phase = two_pi * u(rng);
      for (std::size_t i = 0; i < len; ++i) {
        const double frac = static_cast<double>(i) / static_cast<double>(std::max<std::size_t>(len, 1));
        const double f0 = f0_start + (f0_end - f0_start) * frac;
        if (i % 64 == 0) {
          for (std::size_t h = 1; h <= harmonics; ++h) {
            const double f = f0 * static_cast<double>(h);
            hamp[h] = f < 0.45 * fs ? detail::formant_envelope(v, f) / std::sqrt(static_cast<double>(h)) : 0.0;
          }
        }
        phase += two_pi * f0 / fs;
        if (phase > two_pi) phase -= two_pi;
        double acc = 0.0;
        for (std::size_t h = 1; h <= harmonics; ++h) acc += hamp[h] * std::sin(static_cast<double>(h) * phase);
        x[pos + i] += amp * acc * detail::ramp(i, len, samples(0.02));
      }
      pos += len;
    }
    pos += samples(0.05 + 0.25 * u(rng));
  }
  detail::normalize_rms(x, 0.05);
  return x;
}

enum class NoiseKind { kPink, kBrown, kBabble, kHum };

inline std::string noise_name(NoiseKind k) {
  switch (k) {
    case NoiseKind::kPink: return "pink";
    case NoiseKind::kBrown: return "brown";
    case NoiseKind::kBabble: return "babble";
    case NoiseKind::kHum: return "hum";
  }
  return "?";
}

// Gaussian noise with power spectrum proportional to 1/f^exponent above 20 Hz.
inline std::vector<double> coloured_noise(std::uint64_t seed, std::size_t n, double exponent, int fs = kSampleRate) {
  const std::size_t m = next_pow2(std::max<std::size_t>(n, 2));
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> white(0.0, 1.0);
  std::vector<cplx> buf(m);
  for (auto& v : buf) v = white(rng);
  Fft fft(m);
  fft.forward(buf);
  for (std::size_t k = 0; k < m; ++k) {
    const std::size_t kk = std::min(k, m - k);
    const double f = std::max(20.0, static_cast<double>(kk) * fs / static_cast<double>(m));
    buf[k] *= std::pow(f, -0.5 * exponent);
  }
  fft.inverse(buf);
  std::vector<double> x(n);
  for (std::size_t i = 0; i < n; ++i) x[i] = buf[i].real();
  detail::normalize_rms(x, 0.05);
  return x;
}

inline std::vector<double> noise(std::uint64_t seed, double seconds, NoiseKind kind, int fs = kSampleRate) {
  const auto n = static_cast<std::size_t>(std::llround(seconds * fs));
  std::vector<double> x;
  switch (kind) {
    case NoiseKind::kPink: x = coloured_noise(seed, n, 1.0, fs); break;
    case NoiseKind::kBrown: x = coloured_noise(seed, n, 2.0, fs); break;
    case NoiseKind::kBabble: {
      x.assign(n, 0.0);
      for (std::uint64_t talker = 0; talker < 6; ++talker) {
        const auto s = speech(seed * 7919 + talker + 1, seconds, fs);
        for (std::size_t i = 0; i < n; ++i) x[i] += s[i];
      }
      detail::normalize_rms(x, 0.05);
      break;
    }
    case NoiseKind::kHum: {
      x = coloured_noise(seed, n, 1.5, fs);
      std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
      const double f0 = 50.0 + 70.0 * std::uniform_real_distribution<double>(0.0, 1.0)(rng);
      for (std::size_t i = 0; i < n; ++i) {
        const double t = static_cast<double>(i) / fs;
        for (int h = 1; h <= 5; ++h) x[i] += 0.03 / h * std::sin(2.0 * std::numbers::pi * f0 * h * t);
      }
      detail::normalize_rms(x, 0.05);
      break;
    }
  }
  return x;
}

}  // namespace pldnet::synth
