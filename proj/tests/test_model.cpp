#include <gtest/gtest.h>

#include <cmath>
#include <complex>
#include <filesystem>
#include <random>

#include "pldnet/model.hpp"
#include "pldnet/nn/gradcheck.hpp"
#include "pldnet/train.hpp"

using namespace pldnet;
using namespace pldnet::model;
using nn::Shape;
using nn::Tensor;

namespace {

Tensor randn(Shape s, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, scale);
  std::vector<double> d(nn::numel(s));
  for (auto& v : d) v = nd(rng);
  return Tensor::from_data(std::move(s), std::move(d));
}

void zero_param(ModelWeights& w, const std::string& name) {
  for (double& v : w.at(name).data()) v = 0.0;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

// Largest |a - b| over frames [t0, t1) of a [B, C, F, T] pair.
double frame_diff(const Tensor& a, const Tensor& b, std::size_t t0, std::size_t t1) {
  const std::size_t t = a.dim(3), rows = a.numel() / t;
  double m = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t l = t0; l < t1; ++l) m = std::max(m, std::abs(a.data()[r * t + l] - b.data()[r * t + l]));
  }
  return m;
}

Tensor with_frame_perturbed(const Tensor& x, std::size_t frame, std::uint64_t seed) {
  Tensor y = x.detach();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, 1.0);
  const std::size_t t = y.dim(3);
  for (std::size_t r = 0; r < y.numel() / t; ++r) y.data()[r * t + frame] += nd(rng);
  return y;
}

const ModelConfig& cfg() {
  static const ModelConfig c;
  return c;
}

const ModelWeights& weights() {
  static const ModelWeights w = init_weights(cfg(), 11);
  return w;
}

}  // namespace

// ---------------------------------------------------------------- config --

TEST(ModelConfig, ParamCountWithinBand) {
  const std::size_t n = param_count(cfg());
  EXPECT_GE(n, 100000u);
  EXPECT_LE(n, 250000u);
}

TEST(ModelConfig, FrequencyTrace) {
  EXPECT_EQ(cfg().freq_trace(), (std::vector<std::size_t>{257, 65, 17, 5}));
  EXPECT_EQ(cfg().dec_channels(), (std::vector<std::size_t>{24, 16, 4}));
}

TEST(ModelConfig, ManifestRoundTrip) {
  ModelConfig c;
  c.enc_channels = {8, 12, 20};
  c.tfcm_depth = 3;
  const ModelConfig d = ModelConfig::from_manifest(c.to_manifest());
  EXPECT_EQ(d.to_manifest(), c.to_manifest());
  EXPECT_EQ(param_count(d), param_count(c));
}

TEST(ModelConfig, RejectsBadValues) {
  ModelConfig c;
  c.enc_channels = {16, 24};
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_THROW(ModelConfig::from_manifest("bogus_key=1\n"), ConfigError);
}

TEST(ModelConfig, InitIsSeeded) {
  const auto a = init_weights(cfg(), 3), b = init_weights(cfg(), 3), c = init_weights(cfg(), 4);
  for (std::size_t i = 0; i < a.params().size(); ++i) {
    EXPECT_EQ(a.params()[i].tensor.vec(), b.params()[i].tensor.vec());
  }
  EXPECT_NE(a["enc0.dc.w"].vec(), c["enc0.dc.w"].vec());
}

// ------------------------------------------------------------ phase encoder --

TEST(PhaseEncoder, ZeroInputGivesZeroFeatures) {
  const Tensor z = Tensor::zeros({1, 2, 9, 5});
  const Tensor y = phase_encode(cfg(), weights(), z, z, z);
  EXPECT_EQ(y.shape(), (Shape{1, 4, 9, 5}));
  for (double v : y.data()) EXPECT_EQ(v, 0.0);
}

TEST(PhaseEncoder, ImpulseMatchesComplexArithmetic) {
  ModelWeights w = init_weights(cfg(), 1);
  zero_param(w, "pe.wr");
  zero_param(w, "pe.wi");
  // Output channel 0 reads input channel 0 (Y1) with tap 2 (current frame) = a + ib
  // and tap 0 (two frames back) = c.
  const double a = 0.6, b = -0.8, c = 0.5;
  const std::size_t kt = cfg().pe_kernel_t;
  w.at("pe.wr").data()[kt - 1] = a;
  w.at("pe.wi").data()[kt - 1] = b;
  w.at("pe.wr").data()[0] = c;
  const std::size_t F = 4, T = 6, k0 = 2, t0 = 1;
  Tensor y1 = Tensor::zeros({1, 2, F, T});
  const std::complex<double> v(0.3, 0.4);
  y1.data()[(0 * F + k0) * T + t0] = v.real();
  y1.data()[(1 * F + k0) * T + t0] = v.imag();
  const Tensor z = Tensor::zeros({1, 2, F, T});
  const Tensor feat = phase_encode(cfg(), w, y1, z, z);
  auto compress = [&](double mag) { return std::pow(mag * mag + 1e-12, 0.25) - std::pow(1e-12, 0.25); };
  const double now = std::abs(std::complex<double>(a, b) * v);
  const double later = std::abs(c * v);
  for (std::size_t k = 0; k < F; ++k) {
    for (std::size_t t = 0; t < T; ++t) {
      double want = 0.0;
      if (k == k0 && t == t0) want = compress(now);
      if (k == k0 && t == t0 + 2) want = compress(later);
      EXPECT_NEAR(feat.data()[k * T + t], want, 1e-14) << k << "," << t;
    }
  }
  for (std::size_t i = F * T; i < feat.numel(); ++i) EXPECT_EQ(feat.data()[i], 0.0);
}

TEST(PhaseEncoder, CompressionHomogeneity) {
  const Tensor y1 = randn({1, 2, 12, 7}, 1), y2 = randn({1, 2, 12, 7}, 2), g = randn({1, 2, 12, 7}, 3);
  const Tensor f1 = phase_encode(cfg(), weights(), y1, y2, g);
  const double off = std::pow(1e-12, 0.25);  // additive offset of the eps-safe compression
  for (double s : {0.25, 4.0, 9.0}) {
    const Tensor fs = phase_encode(cfg(), weights(), nn::scale(y1, s), nn::scale(y2, s), nn::scale(g, s));
    const double tol = off * std::abs(std::sqrt(s) - 1.0) + 1e-12;
    for (std::size_t i = 0; i < f1.numel(); ++i) EXPECT_NEAR(fs.data()[i], std::sqrt(s) * f1.data()[i], tol);
  }
}

TEST(PhaseEncoder, ShapeMismatchThrows) {
  const Tensor a = Tensor::zeros({1, 2, 9, 5}), b = Tensor::zeros({1, 2, 9, 6});
  EXPECT_THROW(phase_encode(cfg(), weights(), a, b, a), ShapeError);
  EXPECT_THROW(phase_encode(cfg(), weights(), Tensor::zeros({1, 3, 9, 5}), a, a), ShapeError);
}

// -------------------------------------------------------------------- TFCM --

TEST(Tfcm, ZeroFinalPointwiseIsIdentity) {
  ModelWeights w = init_weights(cfg(), 5);
  for (std::size_t i = 0; i < cfg().tfcm_depth; ++i) {
    zero_param(w, "enc0.tfcm." + std::to_string(i) + ".pw2.w");
    zero_param(w, "enc0.tfcm." + std::to_string(i) + ".pw2.b");
  }
  const Tensor x = randn({2, 16, 5, 9}, 7);
  const Tensor y = tfcm_forward(cfg(), w, "enc0.tfcm", x);
  EXPECT_EQ(y.vec(), x.vec());
}

TEST(Tfcm, ReceptiveFieldIs127Frames) {
  const std::size_t T = 180, t0 = 20;
  const Tensor x = randn({1, 16, 3, T}, 8);
  const Tensor y = tfcm_forward(cfg(), weights(), "enc0.tfcm", x);
  const Tensor yp = tfcm_forward(cfg(), weights(), "enc0.tfcm", with_frame_perturbed(x, t0, 9));
  std::size_t first = T, last = 0;
  for (std::size_t t = 0; t < T; ++t) {
    if (frame_diff(y, yp, t, t + 1) > 0.0) {
      first = std::min(first, t);
      last = std::max(last, t);
    }
  }
  EXPECT_EQ(first, t0);
  EXPECT_EQ(last - first + 1, 127u);
}

TEST(Tfcm, Causal) {
  const std::size_t T = 40;
  const Tensor x = randn({1, 24, 4, T}, 10);
  const Tensor y = tfcm_forward(cfg(), weights(), "enc1.tfcm", x);
  for (std::size_t t : {0u, 7u, 39u}) {
    const Tensor yp = tfcm_forward(cfg(), weights(), "enc1.tfcm", with_frame_perturbed(x, t, t + 1));
    EXPECT_EQ(frame_diff(y, yp, 0, t), 0.0) << t;
    EXPECT_GT(frame_diff(y, yp, t, t + 1), 0.0) << t;
  }
}

// ------------------------------------------------------------------- GCAFA --

TEST(Gcafa, ZeroProjectionAndGateIsIdentity) {
  ModelWeights w = init_weights(cfg(), 6);
  for (const char* n : {"enc0.gcafa.proj.w", "enc0.gcafa.proj.b", "enc0.gcafa.b.w", "enc0.gcafa.b.b"}) zero_param(w, n);
  const Tensor x = randn({1, 16, 6, 4}, 12);
  EXPECT_EQ(gcafa_forward(w, "enc0.gcafa", x).vec(), x.vec());
}

TEST(Gcafa, ZeroProjectionPassesInputToBlockB) {
  ModelWeights w = init_weights(cfg(), 6);
  zero_param(w, "enc0.gcafa.proj.w");
  zero_param(w, "enc0.gcafa.proj.b");
  const Tensor x = randn({1, 16, 6, 4}, 13);
  const Tensor want = nn::add(x, gated_pointwise(w, "enc0.gcafa.b", x, 16));
  EXPECT_EQ(gcafa_forward(w, "enc0.gcafa", x).vec(), want.vec());
}

TEST(Gcafa, SingleBinMatchesPerBinOracle) {
  // With F = 1 the attention weight is 1, so the module is a per-bin map.
  const ModelWeights& w = weights();
  const std::string p = "enc1.gcafa";
  const std::size_t C = 24, H = 12, T = 5;
  const Tensor x = randn({1, C, 1, T}, 14);
  const Tensor y = gcafa_forward(w, p, x);
  auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
  auto pw = [&](const std::string& n, const std::vector<double>& in, std::size_t out) {
    std::vector<double> o(out);
    for (std::size_t r = 0; r < out; ++r) {
      double acc = w[n + ".b"].data()[r];
      for (std::size_t c = 0; c < in.size(); ++c) acc += w[n + ".w"].data()[r * in.size() + c] * in[c];
      o[r] = acc;
    }
    return o;
  };
  for (std::size_t t = 0; t < T; ++t) {
    std::vector<double> xv(C);
    for (std::size_t c = 0; c < C; ++c) xv[c] = x.data()[c * T + t];
    const auto za = pw(p + ".a", xv, 6 * H);
    std::vector<double> v(H);
    for (std::size_t c = 0; c < H; ++c) v[c] = za[2 * H + c] * sig(za[3 * H + 2 * H + c]);
    double mu = 0.0, var = 0.0;
    for (double e : v) mu += e;
    mu /= H;
    for (double e : v) var += (e - mu) * (e - mu);
    var /= H;
    std::vector<double> ln(H);
    for (std::size_t c = 0; c < H; ++c) {
      ln[c] = w[p + ".ln.g"].data()[c] * (v[c] - mu) / std::sqrt(var + 1e-5) + w[p + ".ln.b"].data()[c];
    }
    auto pr = pw(p + ".proj", ln, C);
    std::vector<double> r1(C);
    for (std::size_t c = 0; c < C; ++c) {
      const double a = w[p + ".proj.act"].data()[c];
      r1[c] = xv[c] + (pr[c] >= 0.0 ? pr[c] : a * pr[c]);
    }
    const auto zb = pw(p + ".b", r1, 2 * C);
    for (std::size_t c = 0; c < C; ++c) {
      EXPECT_NEAR(y.data()[c * T + t], r1[c] + zb[c] * sig(zb[C + c]), 1e-12) << c << "," << t;
    }
  }
}

TEST(Gcafa, GradCheckOnSmallInput) {
  ModelConfig c;
  c.enc_channels = {8, 12, 20};
  const ModelWeights w = init_weights(c, 15);
  std::vector<Tensor> inputs{randn({1, 8, 16, 4}, 16)};
  for (const char* n : {"enc0.gcafa.a.w", "enc0.gcafa.proj.w", "enc0.gcafa.ln.g", "enc0.gcafa.b.w"}) {
    inputs.push_back(w[n]);
  }
  const Tensor r = randn({1, 8, 16, 4}, 17);
  const double err = nn::grad_check([&] { return nn::sum(nn::mul(gcafa_forward(w, "enc0.gcafa", inputs[0]), r)); },
                                    inputs);
  EXPECT_LT(err, 1e-4);
}

TEST(Gcafa, OddChannelsRejected) {
  ModelWeights w = init_weights(cfg(), 1);
  EXPECT_THROW(gcafa_forward(w, "dec2.gcafa", Tensor::zeros({1, 3, 4, 2})), ConfigError);
}

// ------------------------------------------------------------ down/upsample --

TEST(Sampling, ShapeTraceIsExact) {
  const std::size_t T = 3;
  Tensor x = randn({1, 4, 257, T}, 18);
  std::vector<Tensor> skips;
  std::vector<std::size_t> fs{x.dim(2)};
  for (std::size_t i = 0; i < 3; ++i) {
    x = downsample(cfg(), weights(), x, i);
    EXPECT_EQ(x.dim(3), T);
    skips.push_back(x);
    fs.push_back(x.dim(2));
  }
  EXPECT_EQ(fs, (std::vector<std::size_t>{257, 65, 17, 5}));
  const std::vector<std::size_t> back{17, 65, 257};
  const std::vector<std::size_t> chans{24, 16, 4};
  for (std::size_t i = 0; i < 3; ++i) {
    x = upsample(cfg(), weights(), x, i, skips[2 - i]);
    EXPECT_EQ(x.shape(), (Shape{1, chans[i], back[i], T}));
  }
}

TEST(Sampling, BadStageOrSkipThrows) {
  const Tensor x = Tensor::zeros({1, 40, 5, 2});
  EXPECT_THROW(downsample(cfg(), weights(), x, 3), ShapeError);
  EXPECT_THROW(upsample(cfg(), weights(), x, 0, Tensor::zeros({1, 40, 5, 3})), ShapeError);
}

// --------------------------------------------------------------------- MEA --

TEST(Mea, IdentityTapsReturnInput) {
  const std::size_t F = 7, T = 6;
  const Tensor y1 = randn({2, 2, F, T}, 19);
  std::vector<double> taps(2 * 3 * F * T, 0.0), cs(2 * 2 * F * T, 0.0);
  for (std::size_t n = 0; n < 2; ++n) {
    for (std::size_t i = 0; i < F * T; ++i) {
      taps[(n * 3) * F * T + i] = 1.0;
      cs[(n * 2) * F * T + i] = 1.0;
    }
  }
  const Tensor out = mea_apply(Tensor::from_data({2, 3, F, T}, taps), Tensor::from_data({2, 2, F, T}, cs), y1);
  EXPECT_LT(max_abs_diff(out, y1), 1e-11);
}

TEST(Mea, ZeroTapsGiveZero) {
  const Tensor y1 = randn({1, 2, 5, 4}, 20);
  const Tensor out = mea_apply(Tensor::zeros({1, 3, 5, 4}), randn({1, 2, 5, 4}, 21), y1);
  for (double v : out.data()) EXPECT_EQ(v, 0.0);
}

TEST(Mea, TapBoundAndUnitRotation) {
  const std::size_t F = 9, T = 8;
  const Tensor y1 = randn({1, 2, F, T}, 22);
  const Tensor taps = nn::scale(nn::sigmoid(randn({1, 3, F, T}, 23, 3.0)), 2.0);
  const Tensor cs = randn({1, 2, F, T}, 24);
  const Tensor out = mea_apply(taps, cs, y1);
  auto mag = [&](const Tensor& s, std::size_t k, std::size_t l) {
    return std::hypot(s.data()[k * T + l], s.data()[(F + k) * T + l]);
  };
  for (std::size_t k = 0; k < F; ++k) {
    for (std::size_t l = 0; l < T; ++l) {
      double bound = 0.0, expect_mag = 0.0;
      for (std::size_t j = 0; j < 3 && j <= l; ++j) {
        bound += 2.0 * mag(y1, k, l - j);
        expect_mag += taps.data()[(j * F + k) * T + l] * mag(y1, k, l - j);
      }
      EXPECT_LE(mag(out, k, l), bound + 1e-12);
      // |output| equals the tap-weighted magnitude, so the phase factor has unit modulus.
      EXPECT_NEAR(mag(out, k, l), expect_mag, 1e-6 * std::max(1.0, expect_mag));
      // Rotation: output phase = phase(Y1) + atan2(s, c).
      const std::complex<double> o(out.data()[k * T + l], out.data()[(F + k) * T + l]);
      const std::complex<double> y(y1.data()[k * T + l], y1.data()[(F + k) * T + l]);
      const std::complex<double> r(cs.data()[k * T + l], cs.data()[(F + k) * T + l]);
      if (std::abs(o) > 1e-9) {
        EXPECT_LT(std::abs(o / std::abs(o) - (y / std::abs(y)) * (r / std::abs(r))), 1e-9);
      }
    }
  }
}

TEST(Mea, ShapeMismatchThrows) {
  const Tensor y1 = Tensor::zeros({1, 2, 5, 4});
  EXPECT_THROW(mea_apply(Tensor::zeros({1, 3, 5, 3}), Tensor::zeros({1, 2, 5, 4}), y1), ShapeError);
  EXPECT_THROW(mea_apply(Tensor::zeros({1, 3, 5, 4}), Tensor::zeros({1, 2, 4, 4}), y1), ShapeError);
}

// ------------------------------------------------------------ full network --

TEST(Network, ShapeClosureForShortInputs) {
  nn::NoGradGuard guard;
  for (std::size_t T = 1; T <= 64; ++T) {
    const Tensor y = Tensor::full({1, 2, 257, T}, 0.01);
    const Tensor out = model_forward(cfg(), weights(), y, y, y);
    ASSERT_EQ(out.shape(), y.shape()) << T;
  }
}

TEST(Network, CausalUnderFramePerturbation) {
  nn::NoGradGuard guard;
  const std::size_t T = 24;
  const Tensor y1 = randn({1, 2, 257, T}, 25), y2 = randn({1, 2, 257, T}, 26), g = randn({1, 2, 257, T}, 27);
  const Tensor out = model_forward(cfg(), weights(), y1, y2, g);
  std::mt19937_64 rng(28);
  for (int probe = 0; probe < 4; ++probe) {
    const std::size_t t = rng() % T;
    const Tensor out2 = model_forward(cfg(), weights(), y1, with_frame_perturbed(y2, t, 100 + probe), g);
    EXPECT_EQ(frame_diff(out, out2, 0, t), 0.0) << t;
    EXPECT_GT(frame_diff(out, out2, t, T), 0.0) << t;
  }
}

TEST(Network, InitialOutputIsNearPassThrough) {
  nn::NoGradGuard guard;
  const Tensor y1 = randn({1, 2, 257, 6}, 29);
  const Tensor out = model_forward(cfg(), weights(), y1, randn({1, 2, 257, 6}, 30), y1);
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < out.numel(); ++i) {
    num += (out.data()[i] - y1.data()[i]) * (out.data()[i] - y1.data()[i]);
    den += y1.data()[i] * y1.data()[i];
  }
  EXPECT_LT(num / den, 0.5);
}

TEST(Network, WrongBinCountThrows) {
  const Tensor y = Tensor::zeros({1, 2, 129, 3});
  EXPECT_THROW(model_forward(cfg(), weights(), y, y, y), ShapeError);
}

TEST(Network, MacCounterIsPositive) { EXPECT_GT(macs_per_second(cfg(), weights()), 1e6); }

// ------------------------------------------------------------------ losses --

namespace {

Tensor wave(std::size_t b, std::size_t n, std::uint64_t seed) { return randn({b, n}, seed, 0.1); }

// Direct DFT reimplementation of the spectral terms at one resolution.
std::pair<double, double> spectral_terms_oracle(const std::vector<double>& est, const std::vector<double>& ref,
                                                std::size_t K) {
  const std::size_t hop = K / 4, n = ref.size();
  const std::size_t frames = n >= hop ? n / hop : 0;
  const double pi = std::numbers::pi;
  std::vector<double> win(K);
  for (std::size_t i = 0; i < K; ++i) win[i] = std::sqrt(0.5 - 0.5 * std::cos(2.0 * pi * i / K));
  std::vector<std::complex<double>> X, D;
  for (std::size_t l = 0; l < frames; ++l) {
    const long start = static_cast<long>(l * hop) - static_cast<long>(K - hop);
    for (std::size_t k = 0; k <= K / 2; ++k) {
      std::complex<double> xr, xe;
      for (std::size_t m = 0; m < K; ++m) {
        const long i = start + static_cast<long>(m);
        if (i < 0 || i >= static_cast<long>(n)) continue;
        const std::complex<double> e = std::polar(win[m], -2.0 * pi * static_cast<double>(k * m) / K);
        xr += ref[i] * e;
        xe += est[i] * e;
      }
      X.push_back(xr);
      D.push_back(xe - xr);
    }
  }
  double total = 0.0, diff = 0.0;
  for (auto v : X) total += std::norm(v);
  for (auto v : D) diff += std::norm(v);
  const double eps_bin = 1e-6 * total / static_cast<double>(X.size()) + 1e-12;
  double t2 = 0.0;
  for (std::size_t i = 0; i < X.size(); ++i) t2 += std::norm(D[i]) / (std::norm(X[i]) + eps_bin);
  return {diff / (total + 1e-8), t2};
}

}  // namespace

TEST(Loss, WaveExamples) {
  const Tensor x = wave(2, 300, 31);
  EXPECT_EQ(loss_wave(x, x).item(), 0.0);
  // Both examples are exact up to the eps in the denominator.
  EXPECT_NEAR(loss_wave(Tensor::zeros({2, 300}), x).item(), 1.0, 1e-9);
  EXPECT_NEAR(loss_wave(nn::scale(x, 2.0), x).item(), 1.0, 1e-9);
}

TEST(Loss, SpecExamples) {
  const Tensor x = wave(1, 4096, 32);
  EXPECT_EQ(loss_spec(x, x).item(), 0.0);
  for (std::size_t K : spectral_resolutions()) {
    EXPECT_NEAR(spectral_terms(nn::scale(x, -1.0), x, K).term1.item(), 4.0, 1e-9) << K;
  }
}

TEST(Loss, SpecMatchesDirectDft) {
  const Tensor x = wave(1, 1024, 33), e = wave(1, 1024, 34);
  for (std::size_t K : {64u, 256u}) {
    const auto t = spectral_terms(e, x, K);
    const auto [t1, t2] = spectral_terms_oracle(e.vec(), x.vec(), K);
    EXPECT_NEAR(t.term1.item(), t1, 1e-9 * t1) << K;
    EXPECT_NEAR(t.term2.item(), t2, 1e-9 * t2) << K;
  }
}

TEST(Loss, TotalIsComposition) {
  const Tensor x = wave(2, 2048, 35), e = wave(2, 2048, 36);
  const double w = loss_wave(e, x).item(), s = loss_spec(e, x).item();
  EXPECT_NEAR(loss_total(e, x).item(), w + s, 1e-9 * (w + s));
  EXPECT_NEAR(loss_total(e, x, 0.5).item(), w + 0.5 * s, 1e-9 * (w + s));
  EXPECT_EQ(loss_total(e, x, 0.0).item(), w);
  EXPECT_EQ(loss_total(x, x).item(), 0.0);
}

TEST(Loss, LengthMismatchThrows) {
  EXPECT_THROW(loss_wave(wave(1, 100, 1), wave(1, 101, 2)), ShapeError);
  EXPECT_THROW(loss_spec(wave(1, 100, 1), wave(2, 100, 2)), ShapeError);
}

TEST(Loss, ComposedNetworkGradCheck) {
  // Waveform pair -> STFT -> network -> iSTFT -> loss_total, checked on sampled
  // coordinates across every weight tensor.
  const ModelWeights w = init_weights(cfg(), 37);
  const std::size_t n = 1536;
  const StftConfig sc;
  const Tensor mix = wave(2, n, 38);
  // Target correlated with the primary channel keeps the loss moderate.
  const Tensor noise = wave(1, n, 39);
  std::vector<double> tgt(n);
  for (std::size_t i = 0; i < n; ++i) tgt[i] = 0.7 * mix.data()[i] + 0.3 * noise.data()[i];
  const Tensor target = Tensor::from_data({1, n}, std::move(tgt));
  const Tensor spec = nn::stft_op(mix, sc);
  const std::size_t F = spec.dim(2), T = spec.dim(3);
  auto channel = [&](std::size_t m) {
    std::vector<double> d(2 * F * T);
    for (std::size_t c = 0; c < 2; ++c) {
      std::copy_n(spec.data().begin() + static_cast<long>((m * 2 + c) * F * T), F * T, d.begin() + c * F * T);
    }
    return Tensor::from_data({1, 2, F, T}, std::move(d));
  };
  const Tensor y1 = channel(0), y2 = channel(1);
  std::vector<Tensor> params;
  for (const auto& p : w.params()) params.push_back(p.tensor);
  auto f = [&] {
    const Tensor out = nn::istft_op(model_forward(cfg(), w, y1, y2, y1), sc, n);
    return loss_total(out, target);
  };
  nn::GradCheckOptions opt;
  opt.max_coords = 200;
  opt.seed = 40;
  // A smaller step limits PReLU kink crossings; gradients below 1e-7 of the
  // loss are compared absolutely since roundoff in the differences dominates them.
  opt.eps = 5e-6;
  opt.floor = 1e-7 * f().item();
  EXPECT_LT(nn::grad_check(f, params, opt), 1e-3);
}

// ---------------------------------------------------------------- training --

namespace {

std::vector<train::TrainExample> tiny_dataset() {
  std::vector<train::TrainExample> data;
  for (std::uint64_t s = 0; s < 2; ++s) {
    const Tensor t = wave(1, 1200, 50 + s);
    AudioBuffer mix(2, 1200);
    const Tensor n0 = wave(1, 1200, 60 + s), n1 = wave(1, 1200, 70 + s);
    for (std::size_t i = 0; i < 1200; ++i) {
      mix.channel(0)[i] = t.data()[i] + 0.3 * n0.data()[i];
      mix.channel(1)[i] = 0.5 * t.data()[i] + 0.3 * n1.data()[i];
    }
    data.push_back({mix, AudioBuffer::mono(t.vec())});
  }
  return data;
}

}  // namespace

TEST(Train, ZeroStepsLeavesInitialWeights) {
  train::TrainOptions o;
  o.steps = 0;
  o.seed = 9;
  const auto r = train::train_toy(tiny_dataset(), o);
  const auto init = init_weights(o.model, 9);
  for (std::size_t i = 0; i < init.params().size(); ++i) {
    EXPECT_EQ(r.weights.params()[i].tensor.vec(), init.params()[i].tensor.vec());
  }
  EXPECT_TRUE(r.losses.empty());
  EXPECT_EQ(r.initial_loss, r.final_loss);
}

TEST(Train, SameSeedSameCurve) {
  train::TrainOptions o;
  o.steps = 3;
  o.seed = 2;
  const auto data = tiny_dataset();
  const auto a = train::train_toy(data, o), b = train::train_toy(data, o);
  EXPECT_EQ(a.losses, b.losses);
  EXPECT_EQ(a.final_loss, b.final_loss);
  for (std::size_t i = 0; i < a.weights.params().size(); ++i) {
    EXPECT_EQ(a.weights.params()[i].tensor.vec(), b.weights.params()[i].tensor.vec());
  }
  EXPECT_NE(a.losses.front(), a.final_loss);
}

TEST(Train, EmptyDatasetThrows) { EXPECT_THROW(train::train_toy({}, {}), InvalidInput); }

TEST(Train, MonoTargetRequired) {
  auto data = tiny_dataset();
  data[0].target = data[0].mix;
  EXPECT_THROW(train::train_toy(data, {}), InvalidInput);
}

TEST(Checkpoint, ModelRoundTrip) {
  const auto path = std::filesystem::temp_directory_path() / "pldnet_model_roundtrip.bin";
  const ModelWeights w = init_weights(cfg(), 41);
  save_model(path.string(), cfg(), w);
  const auto m = load_model(path.string());
  EXPECT_EQ(m.config.to_manifest(), cfg().to_manifest());
  ASSERT_EQ(m.weights.params().size(), w.params().size());
  for (std::size_t i = 0; i < w.params().size(); ++i) {
    EXPECT_EQ(m.weights.params()[i].name, w.params()[i].name);
    EXPECT_EQ(m.weights.params()[i].tensor.vec(), w.params()[i].tensor.vec());
  }
  std::filesystem::remove(path);
}

TEST(Checkpoint, LayoutMismatchRejected) {
  const auto path = std::filesystem::temp_directory_path() / "pldnet_model_mismatch.bin";
  ModelWeights w = init_weights(cfg(), 1);
  nn::ParamList params = w.params();
  params.pop_back();
  nn::save_checkpoint(path.string(), nn::Checkpoint{cfg().to_manifest(), params});
  EXPECT_THROW(load_model(path.string()), InvalidInput);
  std::filesystem::remove(path);
}
