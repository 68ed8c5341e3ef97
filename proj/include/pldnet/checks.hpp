#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "pldnet/metrics.hpp"
#include "pldnet/model.hpp"
#include "pldnet/nn/gradcheck.hpp"
#include "pldnet/pld.hpp"
#include "pldnet/sim.hpp"
#include "pldnet/stft.hpp"

// Invariant suites shared by the `selftest` subcommand and the acceptance
// binary. Each returns a named pass/fail with the measured numbers.
namespace pldnet::checks {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

namespace detail {

using nn::Tensor;

inline Tensor randn(nn::Shape s, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, scale);
  std::vector<double> d(nn::numel(s));
  for (auto& v : d) v = nd(rng);
  return Tensor::from_data(std::move(s), std::move(d));
}

// Random linear functional of y, so every output coordinate reaches the gradient.
inline Tensor probe(const Tensor& y, std::uint64_t seed) { return nn::sum(nn::mul(y, randn(y.shape(), seed))); }

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline std::string fmt(double v) {
  std::ostringstream os;
  os.precision(3);
  os << v;
  return os.str();
}

// Largest absolute difference between frames [t0, t1) of two [B,C,F,T] tensors.
inline double frame_diff(const Tensor& a, const Tensor& b, std::size_t t0, std::size_t t1) {
  const std::size_t t = a.dim(3), rows = a.numel() / t;
  double m = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t l = t0; l < t1; ++l) m = std::max(m, std::abs(a.data()[r * t + l] - b.data()[r * t + l]));
  }
  return m;
}

inline Tensor perturb_frame(const Tensor& x, std::size_t frame, std::uint64_t seed) {
  Tensor y = Tensor::from_data(x.shape(), x.vec());
  const std::size_t t = x.dim(3), rows = x.numel() / t;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  for (std::size_t r = 0; r < rows; ++r) y.data()[r * t + frame] += nd(rng);
  return y;
}

}  // namespace detail

// Layer primitives < 1e-6, one GCAFA module < 1e-4, the composed network
// loss < 1e-3, all in double precision on sampled coordinates.
inline CheckResult gradient_suite(bool include_composed = true) {
  using namespace nn;
  using detail::probe;
  using detail::randn;
  double prim = 0.0;
  auto check = [&](const std::function<Tensor()>& f, std::vector<Tensor> in) {
    prim = std::max(prim, grad_check(f, std::move(in)));
  };
  Tensor a = randn({2, 3, 4, 2}, 17), b = randn({2, 3, 4, 2}, 18);
  auto pv = b.vec();
  for (auto& e : pv) e = 0.5 + std::abs(e);
  Tensor pos = Tensor::from_data(b.shape(), pv);
  check([&] { return probe(add(a, b), 1); }, {a, b});
  check([&] { return probe(sub(a, b), 2); }, {a, b});
  check([&] { return probe(mul(a, b), 3); }, {a, b});
  check([&] { return probe(div(a, pos), 4); }, {a, pos});
  check([&] { return probe(nn::sqrt(pos), 5); }, {pos});
  check([&] { return probe(sigmoid(a), 6); }, {a});
  check([&] { return probe(nn::abs(pos), 7); }, {pos});
  check([&] { return probe(add_scalar(scale(square(a), 0.3), 1.0), 8); }, {a});
  Tensor x = randn({2, 4, 3, 5}, 19), y = randn({2, 4, 3, 5}, 23), g = randn({2, 4, 3, 5}, 22);
  Tensor alpha = Tensor::from_data({4}, {0.1, 0.2, 0.3, 0.4});
  Tensor gamma = randn({4}, 20), beta = randn({4}, 21);
  check([&] { return probe(prelu(x, alpha), 9); }, {x, alpha});
  check([&] { return probe(layer_norm_channels(x, gamma, beta), 10); }, {x, gamma, beta});
  check([&] { return probe(softmax(x, 2), 11); }, {x});
  check([&] { return probe(gate(x, g), 13); }, {x, g});
  check([&] { return probe(compressed_magnitude(x, y, 0.5), 14); }, {x, y});
  check([&] { return probe(concat_channels({x, slice_channels(y, 1, 2)}), 15); }, {x, y});
  check([&] { return probe(sum_channels(x), 16); }, {x});
  ConvSpec pw;
  pw.in_ch = 4;
  pw.out_ch = 6;
  ConvSpec dw;
  dw.in_ch = dw.out_ch = dw.groups = 4;
  dw.kernel_f = dw.kernel_t = 3;
  dw.dilation_t = 2;
  dw.pad_f_left = dw.pad_f_right = 1;
  ConvSpec dc;
  dc.in_ch = 4;
  dc.out_ch = 3;
  dc.kernel_f = 7;
  dc.stride_f = 4;
  dc.pad_f_left = dc.pad_f_right = 3;
  Tensor xc = randn({2, 4, 17, 5}, 24);
  for (const auto* s : {&pw, &dw, &dc}) {
    Tensor w = randn(s->weight_shape(), 25), bias = randn({s->out_ch}, 26);
    check([&] { return probe(conv2d(xc, w, bias, *s), 18); }, {xc, w, bias});
  }
  ConvSpec uc = dc;
  uc.transposed = true;
  Tensor xs = randn({2, 4, 5, 3}, 27), wu = randn(uc.weight_shape(), 28), bu = randn({3}, 29);
  check([&] { return probe(conv2d_transpose(xs, wu, bu, uc), 19); }, {xs, wu, bu});
  Tensor q = randn({1, 2, 6, 3}, 30), k = randn({1, 2, 6, 3}, 31), v = randn({1, 2, 6, 3}, 32);
  check([&] { return probe(freq_attention(q, k, v), 20); }, {q, k, v});
  const StftConfig small(16, 4, 16);
  Tensor wav = randn({2, 40}, 33), spec = randn({2, 2, 9, 10}, 34);
  check([&] { return probe(stft_op(wav, small), 21); }, {wav});
  check([&] { return probe(istft_op(spec, small, 40), 22); }, {spec});

  // One GCAFA module, input and every parameter.
  model::ModelConfig mc;
  mc.enc_channels = {8, 12, 20};
  model::ModelWeights mw = model::init_weights(mc, 3);
  std::vector<Tensor> gin{randn({1, 8, 16, 4}, 35)};
  for (const auto& p : mw.params()) {
    if (p.name.rfind("enc0.gcafa.", 0) == 0) gin.push_back(p.tensor);
  }
  const Tensor r = randn({1, 8, 16, 4}, 36);
  const double gcafa = grad_check([&] { return sum(mul(model::gcafa_forward(mw, "enc0.gcafa", gin[0]), r)); }, gin);

  double composed = 0.0;
  if (include_composed) {
    const model::ModelConfig cfg;
    const model::ModelWeights w = model::init_weights(cfg, 37);
    const std::size_t n = 1536;
    const StftConfig sc;
    const Tensor mix = randn({2, n}, 38, 0.1);
    const Tensor noise = randn({1, n}, 39, 0.1);
    std::vector<double> tgt(n);
    for (std::size_t i = 0; i < n; ++i) tgt[i] = 0.7 * mix.data()[i] + 0.3 * noise.data()[i];
    const Tensor target = Tensor::from_data({1, n}, std::move(tgt));
    const Tensor st = stft_op(mix, sc);
    const std::size_t F = st.dim(2), T = st.dim(3);
    auto channel = [&](std::size_t m) {
      std::vector<double> d(2 * F * T);
      std::copy_n(st.data().begin() + static_cast<long>(m * 2 * F * T), 2 * F * T, d.begin());
      return Tensor::from_data({1, 2, F, T}, std::move(d));
    };
    const Tensor y1 = channel(0), y2 = channel(1);
    std::vector<Tensor> params;
    for (const auto& p : w.params()) params.push_back(p.tensor);
    auto f = [&] { return model::loss_total(istft_op(model::model_forward(cfg, w, y1, y2, y1), sc, n), target); };
    GradCheckOptions opt;
    opt.max_coords = 200;
    opt.seed = 40;
    // Small step to limit PReLU kink crossings; gradients below 1e-7 of the
    // loss are compared absolutely because difference roundoff dominates them.
    opt.eps = 5e-6;
    opt.floor = 1e-7 * f().item();
    composed = grad_check(f, params, opt);
  }
  CheckResult res{"gradients", prim < 1e-6 && gcafa < 1e-4 && composed < 1e-3, ""};
  res.detail = "primitives " + detail::fmt(prim) + " (<1e-6), gcafa " + detail::fmt(gcafa) + " (<1e-4)";
  if (include_composed) res.detail += ", composed " + detail::fmt(composed) + " (<1e-3)";
  return res;
}

// Randomized frames through the pre-filter stay inside their bounds, and the
// tabulated branch cases of the presence and absence rules hold exactly.
inline CheckResult pld_bounds_suite(std::size_t frames = 10000, std::uint64_t seed = 2024) {
  using namespace pld;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  std::uniform_real_distribution<double> lvl(-4.0, 3.0);
  const OmlsaParams p;
  const PldConstants c;
  PldProcessor proc;
  std::size_t violations = 0;
  auto in01 = [](double v) { return v >= 0.0 && v <= 1.0; };
  for (std::size_t l = 0; l < frames; ++l) {
    const double s1 = std::pow(10.0, lvl(rng)), s2 = std::pow(10.0, lvl(rng));
    std::vector<cplx> y1(257), y2(257);
    for (std::size_t k = 0; k < 257; ++k) {
      y1[k] = {s1 * g(rng), s1 * g(rng)};
      y2[k] = {s2 * g(rng), s2 * g(rng)};
    }
    PldFrameState st;
    (void)proc.process_frame(y1, y2, &st);
    if (!in01(st.psi_tilde)) ++violations;
    for (std::size_t k = 0; k < 257; ++k) {
      if (!in01(st.psi[k]) || !in01(st.q_hat[k]) || !(st.gain[k] >= p.g_min && st.gain[k] <= 1.0)) ++violations;
    }
  }
  std::size_t branch_fail = 0;
  if (speech_presence(Vec{2.0}, Vec{4.0}, c)[0] != 1.0) ++branch_fail;
  for (double kappa : {0.0, 2.0, 4.0, 100.0}) {
    if (speech_presence(Vec{1.0}, Vec{kappa}, c)[0] != 0.0) ++branch_fail;
  }
  if (signal_absence(Vec{0.9}, Vec{1.0}, 0.9, c)[0] != 1.0) ++branch_fail;
  if (signal_absence(Vec{3.0, 10.0, 2.0}, Vec{1.0, 1.0, 0.2}, 0.2, c) != Vec{1.0, 1.0, 1.0}) ++branch_fail;
  return {"pld-bounds", violations == 0 && branch_fail == 0,
          std::to_string(frames) + " frames, " + std::to_string(violations) + " bound violations, " +
              std::to_string(branch_fail) + " branch mismatches"};
}

// Transform round trip, conv adjointness, SI-SDR scale invariance, RIR
// direct-path placement and Schroeder decay.
inline CheckResult dsp_fidelity_suite() {
  using detail::randn;
  const StftConfig cfg;
  double rt_err = 0.0;
  for (std::uint64_t s = 0; s < 4; ++s) {
    const std::size_t n = 4000 + 1234 * s;
    const auto x = randn({n}, 100 + s).vec();
    const AudioBuffer in = AudioBuffer::mono(x);
    const auto y = istft(stft(pad_for_analysis(in, cfg), cfg), cfg, n);
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      num += (x[i] - y.channel(0)[i]) * (x[i] - y.channel(0)[i]);
      den += x[i] * x[i];
    }
    rt_err = std::max(rt_err, std::sqrt(num / den));
  }

  double adj = 0.0;
  for (std::uint64_t s = 0; s < 3; ++s) {
    nn::ConvSpec fwd;
    fwd.in_ch = 3;
    fwd.out_ch = 5;
    fwd.kernel_f = 7;
    fwd.stride_f = 4;
    fwd.pad_f_left = fwd.pad_f_right = 3;
    nn::ConvSpec tr = fwd;
    tr.transposed = true;
    tr.in_ch = 5;
    tr.out_ch = 3;
    const auto w = randn(fwd.weight_shape(), 200 + s);
    const auto x = randn({2, 3, 65, 4}, 300 + s), y = randn({2, 5, 17, 4}, 400 + s);
    const double lhs = detail::dot(nn::conv2d(x, w, nn::Tensor(), fwd).data(), y.data());
    const double rhs = detail::dot(x.data(), nn::conv2d_transpose(y, w, nn::Tensor(), tr).data());
    adj = std::max(adj, std::abs(lhs - rhs) / std::max(1.0, std::abs(lhs)));
  }

  double inv = 0.0;
  {
    const auto x = randn({4000}, 500).vec();
    auto e = randn({4000}, 501).vec();
    for (std::size_t i = 0; i < e.size(); ++i) e[i] += x[i];
    const double ref = metrics::si_sdr(e, x);
    for (double a : {1e-3, 0.5, 3.0, 1e3}) {
      auto s = e;
      for (double& v : s) v *= a;
      inv = std::max(inv, std::abs(metrics::si_sdr(s, x) - ref));
    }
  }

  // Direct path on an integer delay in a near-anechoic room: peak exactly there.
  bool direct_ok = true;
  {
    sim::RoomSpec room;
    room.rt60 = 0.2;
    const sim::Vec3 src{5.0, 3.5, 1.5};
    for (int delay : {3, 10, 25}) {
      const double d = delay * room.speed_of_sound / kSampleRate;
      const auto r = sim::image_method_rir(room, src, src + sim::Vec3{d, 0.0, 0.0}, kSampleRate, 1.0 - 1e-8);
      const auto it = std::max_element(r.taps.begin(), r.taps.end(),
                                       [](double p, double q) { return std::abs(p) < std::abs(q); });
      if (it - r.taps.begin() != delay) direct_ok = false;
    }
  }
  double worst_ratio = 1.0;
  bool decay_ok = true;
  for (double rt : {0.2, 0.35, 0.5}) {
    sim::RoomSpec room;
    room.rt60 = rt;
    const double alpha = sim::wall_absorption(room);
    const auto h = sim::image_method_rir(room, {2.5, 2.0, 1.6}, {7.0, 4.5, 1.2}, kSampleRate, alpha);
    const double ratio = sim::schroeder_rt60(h.taps) / rt;
    if (std::abs(ratio - 1.0) > std::abs(worst_ratio - 1.0)) worst_ratio = ratio;
    if (!(ratio >= 0.7 && ratio <= 1.3)) decay_ok = false;
  }
  const bool ok = rt_err <= 1e-6 && adj <= 1e-10 && inv <= 1e-9 && direct_ok && decay_ok;
  return {"dsp-fidelity", ok,
          "stft round trip " + detail::fmt(rt_err) + ", conv adjoint " + detail::fmt(adj) + ", si-sdr scale " +
              detail::fmt(inv) + " dB, direct path " + (direct_ok ? "exact" : "off") + ", decay/rt60 " +
              detail::fmt(worst_ratio)};
}

// Perturbing input frame t never changes an output frame before t.
inline CheckResult causality_suite(std::size_t probes = 16, std::uint64_t seed = 77) {
  using detail::randn;
  std::mt19937_64 rng(seed);
  std::size_t leaks = 0, silent = 0;

  const std::size_t frames = 40;
  const StftConfig cfg;
  AudioBuffer audio(2, (frames - 1) * cfg.hop() + 1);
  const auto noise = randn({2 * audio.num_samples()}, seed + 1).vec();
  std::copy(noise.begin(), noise.end(), audio.samples().begin());
  const ComplexSpectrogram y = stft(audio, cfg);
  const auto base = pld::pld_process_stream(y, {}, {}, {}, false);
  for (std::size_t p = 0; p < probes; ++p) {
    const std::size_t t = rng() % y.frames();
    ComplexSpectrogram z = y;
    auto f = z.frame(p % 2, t);
    for (auto& v : f) v = v * 3.0 + cplx(0.5, -0.25);
    z.set_frame(p % 2, t, f);
    const auto out = pld::pld_process_stream(z, {}, {}, {}, false);
    bool changed = false;
    for (std::size_t l = 0; l < y.frames(); ++l) {
      for (std::size_t k = 0; k < y.bins(); ++k) {
        const bool same = out.x_pld.at(0, k, l) == base.x_pld.at(0, k, l);
        if (l < t && !same) ++leaks;
        if (l >= t && !same) changed = true;
      }
    }
    if (!changed) ++silent;
  }

  nn::NoGradGuard guard;
  const model::ModelConfig mc;
  const model::ModelWeights w = model::init_weights(mc, 5);
  const std::size_t T = 20;
  const auto y1 = randn({1, 2, 257, T}, seed + 2), y2 = randn({1, 2, 257, T}, seed + 3),
             g = randn({1, 2, 257, T}, seed + 4);
  const auto out = model::model_forward(mc, w, y1, y2, g);
  for (std::size_t p = 0; p < probes; ++p) {
    const std::size_t t = rng() % T;
    const std::size_t which = p % 3;
    const auto o2 = model::model_forward(mc, w, which == 0 ? detail::perturb_frame(y1, t, p) : y1,
                                         which == 1 ? detail::perturb_frame(y2, t, p) : y2,
                                         which == 2 ? detail::perturb_frame(g, t, p) : g);
    if (detail::frame_diff(out, o2, 0, t) != 0.0) ++leaks;
    if (detail::frame_diff(out, o2, t, T) == 0.0) ++silent;
  }
  return {"causality", leaks == 0 && silent == 0,
          std::to_string(probes) + " probes each on the pre-filter and the network, " + std::to_string(leaks) +
              " earlier-frame changes, " + std::to_string(silent) + " probes without any effect"};
}

}  // namespace pldnet::checks
