#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iostream>
#include <limits>
#include <numbers>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "pldnet/audio.hpp"
#include "pldnet/error.hpp"
#include "pldnet/fft.hpp"

// Shoebox room acoustics by the image-source method, handset microphone
// geometry and level-calibrated mixing of target, interferers and noise.
namespace pldnet::sim {

struct Vec3 {
  double x = 0.0, y = 0.0, z = 0.0;
};

inline Vec3 operator+(Vec3 a, Vec3 b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
inline Vec3 operator-(Vec3 a, Vec3 b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
inline Vec3 operator*(double s, Vec3 a) { return {s * a.x, s * a.y, s * a.z}; }
inline double norm(Vec3 a) { return std::sqrt(a.x * a.x + a.y * a.y + a.z * a.z); }

// Sabine: alpha = 0.161 V / (S T). Eyring: alpha = 1 - exp(-0.161 V / (S T)).
// Fitted: alpha adjusted until the image set's own Schroeder T20 equals rt60.
enum class AbsorptionModel { kSabine, kEyring, kFitted };

struct RoomSpec {
  Vec3 dims{10.0, 7.0, 3.0};
  double rt60 = 0.3;
  double speed_of_sound = 343.0;
  // Maximum total number of wall reflections per image; negative keeps every
  // image that arrives within the response length.
  int max_image_order = -1;
  AbsorptionModel absorption = AbsorptionModel::kFitted;

  double volume() const { return dims.x * dims.y * dims.z; }
  double surface() const { return 2.0 * (dims.x * dims.y + dims.x * dims.z + dims.y * dims.z); }
  bool contains(Vec3 p) const {
    return p.x > 0.0 && p.x < dims.x && p.y > 0.0 && p.y < dims.y && p.z > 0.0 && p.z < dims.z;
  }
};

inline double formula_absorption(const RoomSpec& room, AbsorptionModel model) {
  if (!(room.rt60 > 0.0)) throw ConfigError("room: rt60 must be positive");
  const double a = 0.161 * room.volume() / (room.surface() * room.rt60);
  return model == AbsorptionModel::kEyring ? 1.0 - std::exp(-a) : a;
}

inline void require_valid_alpha(double alpha, double rt60) {
  if (!(alpha > 0.0 && alpha < 1.0)) {
    throw ConfigError("room: wall absorption " + std::to_string(alpha) + " outside (0,1) for rt60 " +
                      std::to_string(rt60));
  }
}

struct Rir {
  std::vector<double> taps;
  int sample_rate = kSampleRate;
};

inline constexpr int kFracDelayHalf = 40;  // 81-tap windowed sinc

inline std::size_t rir_length(const RoomSpec& room, int fs) {
  return static_cast<std::size_t>(std::ceil(1.2 * room.rt60 * fs));
}

namespace detail {

// Adds amp * windowed-sinc(n - delay) for the 81 taps around the delay.
inline void add_fractional_impulse(std::vector<double>& h, double delay, double amp) {
  const long centre = std::lround(delay);
  const long first = centre - kFracDelayHalf;
  const double pi = std::numbers::pi;
  const double d0 = static_cast<double>(first) - delay;  // offset of the first tap
  // sin(pi (d0 + m)) alternates sign; the Hann window cosine advances by a fixed rotation.
  double s = std::sin(pi * d0);
  const double wstep = pi / (kFracDelayHalf + 1.0);
  double wc = std::cos(wstep * d0), ws = std::sin(wstep * d0);
  const double rc = std::cos(wstep), rs = std::sin(wstep);
  for (long m = 0; m <= 2 * kFracDelayHalf; ++m) {
    const long n = first + m;
    const double x = d0 + static_cast<double>(m);
    if (n >= 0 && n < static_cast<long>(h.size())) {
      const double sinc = std::abs(x) < 1e-12 ? 1.0 : s / (pi * x);
      h[static_cast<std::size_t>(n)] += amp * 0.5 * (1.0 + wc) * sinc;
    }
    s = -s;
    const double nc = wc * rc - ws * rs;
    ws = ws * rc + wc * rs;
    wc = nc;
  }
}

// Calls visit(distance, reflection_count) for every image source of `src`
// within `max_dist` of `mic`.
template <typename Visit>
void for_each_image(const RoomSpec& room, Vec3 src, Vec3 mic, double max_dist, Visit&& visit) {
  const double L[3] = {room.dims.x, room.dims.y, room.dims.z};
  const double s[3] = {src.x, src.y, src.z};
  const double m[3] = {mic.x, mic.y, mic.z};
  struct AxisImage {
    double d;
    int refl;
  };
  std::vector<AxisImage> axis[3];
  for (int a = 0; a < 3; ++a) {
    const int nmax = static_cast<int>(std::ceil(max_dist / (2.0 * L[a]))) + 1;
    for (int n = -nmax; n <= nmax; ++n) {
      for (int p = 0; p <= 1; ++p) {
        const double d = (1 - 2 * p) * s[a] + 2.0 * n * L[a] - m[a];
        if (std::abs(d) <= max_dist) axis[a].push_back({d, std::abs(n - p) + std::abs(n)});
      }
    }
  }
  const double r2 = max_dist * max_dist;
  for (const auto& ix : axis[0]) {
    for (const auto& iy : axis[1]) {
      const double dxy2 = ix.d * ix.d + iy.d * iy.d;
      if (dxy2 > r2) continue;
      for (const auto& iz : axis[2]) {
        const double d2 = dxy2 + iz.d * iz.d;
        if (d2 > r2) continue;
        const int order = ix.refl + iy.refl + iz.refl;
        if (room.max_image_order >= 0 && order > room.max_image_order) continue;
        visit(std::sqrt(d2), order);
      }
    }
  }
}

// Schroeder T20 (-5 dB to -25 dB line fit, extrapolated to -60 dB) of an energy envelope.
inline double decay_time_from_energy(std::span<const double> energy, int fs) {
  std::vector<double> edc(energy.size());
  double acc = 0.0;
  for (std::size_t i = energy.size(); i-- > 0;) {
    acc += energy[i];
    edc[i] = acc;
  }
  if (!(acc > 0.0)) throw InvalidInput("schroeder: zero-energy response");
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  std::size_t cnt = 0;
  for (std::size_t i = 0; i < edc.size(); ++i) {
    const double db = 10.0 * std::log10(std::max(edc[i] / acc, 1e-300));
    if (db <= -5.0 && db >= -25.0) {
      const double t = static_cast<double>(i) / fs;
      sx += t;
      sy += db;
      sxx += t * t;
      sxy += t * db;
      ++cnt;
    }
  }
  if (cnt < 2) throw InvalidInput("schroeder: decay range not covered");
  const auto n = static_cast<double>(cnt);
  const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  return -60.0 / slope;
}

// Decay time of the image set for a given absorption, from a reference pair.
inline double image_decay_time(const RoomSpec& room, double alpha, int fs) {
  const Vec3 src = 0.5 * room.dims;
  const Vec3 mic{0.8 * room.dims.x, 0.7 * room.dims.y, 0.4 * room.dims.z};
  const double c = room.speed_of_sound;
  std::vector<double> energy(rir_length(room, fs), 0.0);
  const double max_dist = static_cast<double>(energy.size()) / fs * c;
  const double beta2 = 1.0 - alpha;
  detail::for_each_image(room, src, mic, max_dist, [&](double dist, int order) {
    const auto i = static_cast<std::size_t>(dist / c * fs);
    if (i < energy.size()) energy[i] += std::pow(beta2, order) / (dist * dist);
  });
  try {
    return decay_time_from_energy(energy, fs);
  } catch (const InvalidInput&) {
    return 0.0;  // decays faster than the sample grid resolves
  }
}

}  // namespace detail

inline double wall_absorption(const RoomSpec& room, int fs = kSampleRate) {
  if (room.absorption != AbsorptionModel::kFitted) {
    const double a = formula_absorption(room, room.absorption);
    require_valid_alpha(a, room.rt60);
    return a;
  }
  // Bisection in log(alpha); decay time falls monotonically as absorption grows.
  double lo = std::log(1e-4), hi = std::log(0.999);
  if (detail::image_decay_time(room, std::exp(hi), fs) > room.rt60) {
    throw ConfigError("room: rt60 " + std::to_string(room.rt60) + " is shorter than any absorption allows");
  }
  for (int it = 0; it < 40; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (detail::image_decay_time(room, std::exp(mid), fs) > room.rt60) {
      lo = mid;
    } else {
      hi = mid;
    }
    if (hi - lo < 1e-4) break;
  }
  const double a = std::exp(0.5 * (lo + hi));
  require_valid_alpha(a, room.rt60);
  return a;
}

// Allen-Berkley image method with reflection coefficient -sqrt(1 - alpha) on every wall.
inline Rir image_method_rir(const RoomSpec& room, Vec3 src, Vec3 mic, int fs = kSampleRate,
                            std::optional<double> alpha = std::nullopt) {
  if (!room.contains(src)) throw InvalidInput("rir: source position outside the room");
  if (!room.contains(mic)) throw InvalidInput("rir: microphone position outside the room");
  const double a = alpha ? *alpha : wall_absorption(room, fs);
  require_valid_alpha(a, room.rt60);
  const double beta = -std::sqrt(1.0 - a);
  const double c = room.speed_of_sound;
  Rir r;
  r.sample_rate = fs;
  const double direct = norm(src - mic) / c * fs;
  r.taps.assign(std::max(rir_length(room, fs), static_cast<std::size_t>(direct) + kFracDelayHalf + 2), 0.0);
  const double max_dist = static_cast<double>(r.taps.size() + kFracDelayHalf) / fs * c;
  const double four_pi = 4.0 * std::numbers::pi;
  detail::for_each_image(room, src, mic, max_dist, [&](double dist, int order) {
    const double amp = std::pow(beta, order) / (four_pi * std::max(dist, 1e-3));
    detail::add_fractional_impulse(r.taps, dist / c * fs, amp);
  });
  return r;
}

// Reverberation time from the Schroeder backward-integrated decay (T20).
inline double schroeder_rt60(std::span<const double> h, int fs = kSampleRate) {
  std::vector<double> e(h.size());
  for (std::size_t i = 0; i < h.size(); ++i) e[i] = h[i] * h[i];
  return detail::decay_time_from_energy(e, fs);
}

// ---------------------------------------------------------------- scenes --

struct SceneLayout {
  std::size_t ring_points = 72;     // candidate interferer positions on the ring
  std::size_t num_interferers = 4;  // drawn without replacement from the ring
  double ring_radius = 3.0;
  std::size_t num_noise = 8;
  double noise_radius = 2.5;
};

// Any field set here pins the corresponding draw.
struct SceneOverrides {
  std::optional<double> rt60;
  std::optional<double> snr_db;  // +inf disables noise
  std::optional<double> sir_db;
  std::optional<double> level_db;
  std::optional<double> mic_distance;
  std::optional<double> zenith_deg;
};

struct SceneSpec {
  std::uint64_t seed = 0;
  RoomSpec room;
  Vec3 source{5.0, 3.5, 1.5};
  Vec3 mic1, mic2;
  double mic_distance = 0.0;  // |mic1 - source|
  double zenith_deg = 0.0;    // of mic2 relative to mic1
  std::vector<Vec3> interferers;
  std::vector<Vec3> noise_sources;
  double snr_db = 0.0;
  double sir_db = 0.0;
  double level_db = 0.0;
};

inline constexpr double kMicSpacing = 0.15;

namespace detail {

inline void check_range(const char* name, double v, double lo, double hi) {
  if (!(v >= lo && v <= hi)) {
    throw InvalidInput(std::string("scene override ") + name + "=" + std::to_string(v) + " outside [" +
                       std::to_string(lo) + ", " + std::to_string(hi) + "]");
  }
}

}  // namespace detail

inline SceneSpec sample_scene(std::uint64_t seed, const SceneOverrides& ov = {}, const SceneLayout& layout = {}) {
  if (layout.num_interferers > layout.ring_points) throw InvalidInput("scene: more interferers than ring positions");
  if (ov.rt60) detail::check_range("rt60", *ov.rt60, 0.2, 0.5);
  if (ov.snr_db && !std::isinf(*ov.snr_db)) detail::check_range("snr_db", *ov.snr_db, 0.0, 20.0);
  if (ov.sir_db) detail::check_range("sir_db", *ov.sir_db, 0.0, 20.0);
  if (ov.level_db) detail::check_range("level_db", *ov.level_db, -40.0, -10.0);
  if (ov.mic_distance) detail::check_range("mic_distance", *ov.mic_distance, 0.02, 0.05);
  if (ov.zenith_deg) detail::check_range("zenith_deg", *ov.zenith_deg, 0.0, 15.0);

  std::mt19937_64 rng(seed);
  auto uni = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  const double two_pi = 2.0 * std::numbers::pi;
  SceneSpec s;
  s.seed = seed;
  // Every draw happens unconditionally so overrides do not shift later draws.
  const double rt60 = uni(0.2, 0.5);
  const double d1 = uni(0.02, 0.05);
  const double az1 = uni(0.0, two_pi);
  const double zen = uni(0.0, 15.0);
  const double az2 = uni(0.0, two_pi);
  const double snr = uni(0.0, 20.0);
  const double sir = uni(0.0, 20.0);
  const double level = uni(-40.0, -10.0);
  const double noise_rot = uni(0.0, two_pi);
  std::vector<std::size_t> ring(layout.ring_points);
  for (std::size_t i = 0; i < ring.size(); ++i) ring[i] = i;
  for (std::size_t i = 0; i < layout.num_interferers; ++i) {
    const auto j = i + static_cast<std::size_t>(uni(0.0, 1.0) * static_cast<double>(ring.size() - i));
    std::swap(ring[i], ring[std::min(j, ring.size() - 1)]);
  }

  s.room.rt60 = ov.rt60.value_or(rt60);
  s.mic_distance = ov.mic_distance.value_or(d1);
  s.zenith_deg = ov.zenith_deg.value_or(zen);
  s.snr_db = ov.snr_db.value_or(snr);
  s.sir_db = ov.sir_db.value_or(sir);
  s.level_db = ov.level_db.value_or(level);
  s.mic1 = s.source + Vec3{s.mic_distance * std::cos(az1), s.mic_distance * std::sin(az1), 0.0};
  const double th = s.zenith_deg * std::numbers::pi / 180.0;
  s.mic2 = s.mic1 + kMicSpacing * Vec3{std::sin(th) * std::cos(az2), std::sin(th) * std::sin(az2), std::cos(th)};
  for (std::size_t i = 0; i < layout.num_interferers; ++i) {
    const double a = two_pi * static_cast<double>(ring[i]) / static_cast<double>(layout.ring_points);
    s.interferers.push_back(s.mic1 + layout.ring_radius * Vec3{std::cos(a), std::sin(a), 0.0});
  }
  for (std::size_t i = 0; i < layout.num_noise; ++i) {
    const double a = noise_rot + two_pi * static_cast<double>(i) / static_cast<double>(layout.num_noise);
    s.noise_sources.push_back(s.mic1 + layout.noise_radius * Vec3{std::cos(a), std::sin(a), 0.0});
  }
  for (const auto& p : s.interferers) {
    if (!s.room.contains(p)) throw InvalidInput("scene: interferer outside the room");
  }
  return s;
}

struct Mixture {
  AudioBuffer mix;     // stereo
  AudioBuffer target;  // mono, reverberant speech at mic1 as it appears in the mix
  bool clipped = false;
};

namespace detail {

// `x` convolved with `h`, keeping the first `n` samples.
inline std::vector<double> reverberate(std::span<const double> x, const Rir& h, std::size_t n) {
  auto y = fft_convolve(x, h.taps);
  y.resize(n, 0.0);
  return y;
}

// Length-n excerpt of a clip, looping when it is shorter.
inline std::vector<double> fit_length(std::span<const double> x, std::size_t n) {
  if (x.empty()) throw InvalidInput("mixture: empty source clip");
  std::vector<double> y(n);
  for (std::size_t i = 0; i < n; ++i) y[i] = x[i % x.size()];
  return y;
}

}  // namespace detail

inline Mixture render_mixture(const SceneSpec& scene, const AudioBuffer& speech,
                              const std::vector<AudioBuffer>& interferers, const std::vector<AudioBuffer>& noise) {
  if (speech.channels() != 1) throw InvalidInput("mixture: speech must be mono");
  require_pipeline_rate(speech);
  const std::size_t n = speech.num_samples();
  const int fs = speech.sample_rate_hz();
  const bool use_noise = !std::isinf(scene.snr_db);
  if (use_noise && noise.empty()) throw InvalidInput("mixture: finite SNR needs at least one noise clip");
  if (!interferers.empty() && interferers.size() != scene.interferers.size()) {
    throw InvalidInput("mixture: expected " + std::to_string(scene.interferers.size()) + " interferer clips, got " +
                       std::to_string(interferers.size()));
  }
  const Vec3 mics[2] = {scene.mic1, scene.mic2};
  const double alpha = wall_absorption(scene.room, fs);
  auto rir = [&](Vec3 src, Vec3 mic) { return image_method_rir(scene.room, src, mic, fs, alpha); };

  std::vector<double> s[2], itf[2], nse[2];
  for (int m = 0; m < 2; ++m) {
    s[m] = detail::reverberate(speech.channel(0), rir(scene.source, mics[m]), n);
    itf[m].assign(n, 0.0);
    nse[m].assign(n, 0.0);
  }
  const double ps = mean_power(s[0]);
  if (!(ps > 0.0)) throw InvalidInput("mixture: speech is silent");

  for (std::size_t j = 0; j < interferers.size(); ++j) {
    const auto clip = detail::fit_length(interferers[j].channel(0), n);
    for (int m = 0; m < 2; ++m) {
      const auto y = detail::reverberate(clip, rir(scene.interferers[j], mics[m]), n);
      for (std::size_t i = 0; i < n; ++i) itf[m][i] += y[i];
    }
  }
  if (use_noise) {
    for (std::size_t q = 0; q < scene.noise_sources.size(); ++q) {
      Vec3 pos = scene.noise_sources[q];
      pos.x = std::clamp(pos.x, 0.05, scene.room.dims.x - 0.05);
      pos.y = std::clamp(pos.y, 0.05, scene.room.dims.y - 0.05);
      const auto clip = detail::fit_length(noise[q % noise.size()].channel(0), n);
      // Distinct clips per position: later positions read the clip with an offset.
      std::vector<double> shifted(n);
      const std::size_t off = (q / noise.size()) * (n / 3 + 1);
      for (std::size_t i = 0; i < n; ++i) shifted[i] = clip[(i + off) % n];
      for (int m = 0; m < 2; ++m) {
        const auto y = detail::reverberate(shifted, rir(pos, mics[m]), n);
        for (std::size_t i = 0; i < n; ++i) nse[m][i] += y[i];
      }
    }
  }

  double gi = 0.0, gn = 0.0;
  if (!interferers.empty()) {
    const double pi = mean_power(itf[0]);
    if (pi > 0.0) gi = std::sqrt(ps / (pi * std::pow(10.0, scene.sir_db / 10.0)));
  }
  if (use_noise) {
    const double pn = mean_power(nse[0]);
    if (!(pn > 0.0)) throw InvalidInput("mixture: noise is silent");
    gn = std::sqrt(ps / (pn * std::pow(10.0, scene.snr_db / 10.0)));
  }
  Mixture out{AudioBuffer(2, n, fs), AudioBuffer(1, n, fs), false};
  for (int m = 0; m < 2; ++m) {
    auto ch = out.mix.channel(static_cast<std::size_t>(m));
    for (std::size_t i = 0; i < n; ++i) ch[i] = s[m][i] + gi * itf[m][i] + gn * nse[m][i];
  }
  // Level calibration on the primary microphone.
  const double rms = std::sqrt(mean_power(out.mix.channel(0)));
  const double g = std::pow(10.0, scene.level_db / 20.0) / rms;
  for (double& v : out.mix.samples()) {
    v *= g;
    if (std::abs(v) > 1.0) {
      v = std::clamp(v, -1.0, 1.0);
      out.clipped = true;
    }
  }
  auto t = out.target.channel(0);
  for (std::size_t i = 0; i < n; ++i) t[i] = g * s[0][i];
  if (out.clipped) std::cerr << "warning: scene " << scene.seed << " clipped after level scaling\n";
  return out;
}

}  // namespace pldnet::sim
