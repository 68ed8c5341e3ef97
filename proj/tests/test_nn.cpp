#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "pldnet/nn/attention.hpp"
#include "pldnet/nn/checkpoint.hpp"
#include "pldnet/nn/conv.hpp"
#include "pldnet/nn/gradcheck.hpp"
#include "pldnet/nn/ops.hpp"
#include "pldnet/nn/optim.hpp"
#include "pldnet/nn/spectral.hpp"

using namespace pldnet;
using namespace pldnet::nn;

namespace {

Tensor randn(Shape s, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, scale);
  std::vector<double> d(numel(s));
  for (auto& v : d) v = nd(rng);
  return Tensor::from_data(std::move(s), std::move(d));
}

// Random linear functional so grad checks exercise every output coordinate.
Tensor probe(const Tensor& y, std::uint64_t seed) {
  return sum(mul(y, randn(y.shape(), seed)));
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// Direct nested-loop cross-correlation with causal time padding.
std::vector<double> conv_oracle(const Tensor& x, const Tensor& w, const Tensor& bias, const ConvSpec& s) {
  const std::size_t B = x.dim(0), F = x.dim(2), T = x.dim(3);
  const std::size_t Fo = (F + s.pad_f_left + s.pad_f_right - s.dilation_f * (s.kernel_f - 1) - 1) / s.stride_f + 1;
  const std::size_t To = (T + s.time_pad() - s.dilation_t * (s.kernel_t - 1) - 1) / s.stride_t + 1;
  const std::size_t cig = s.in_ch / s.groups, cog = s.out_ch / s.groups;
  std::vector<double> y(B * s.out_ch * Fo * To, 0.0);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t o = 0; o < s.out_ch; ++o)
      for (std::size_t fo = 0; fo < Fo; ++fo)
        for (std::size_t to = 0; to < To; ++to) {
          double acc = bias.defined() ? bias.data()[o] : 0.0;
          const std::size_t g = o / cog;
          for (std::size_t ic = 0; ic < cig; ++ic)
            for (std::size_t kf = 0; kf < s.kernel_f; ++kf)
              for (std::size_t kt = 0; kt < s.kernel_t; ++kt) {
                const long fi = static_cast<long>(fo * s.stride_f + kf * s.dilation_f) - static_cast<long>(s.pad_f_left);
                const long ti = static_cast<long>(to * s.stride_t + kt * s.dilation_t) - static_cast<long>(s.time_pad());
                if (fi < 0 || fi >= static_cast<long>(F) || ti < 0 || ti >= static_cast<long>(T)) continue;
                const std::size_t i = g * cig + ic;
                acc += w.data()[((o * cig + ic) * s.kernel_f + kf) * s.kernel_t + kt] *
                       x.data()[((b * s.in_ch + i) * F + fi) * T + ti];
              }
          y[((b * s.out_ch + o) * Fo + fo) * To + to] = acc;
        }
  return y;
}

ConvSpec dc_spec(std::size_t cin, std::size_t cout) {
  ConvSpec s;
  s.in_ch = cin;
  s.out_ch = cout;
  s.kernel_f = 7;
  s.stride_f = 4;
  s.pad_f_left = s.pad_f_right = 3;
  return s;
}

}  // namespace

TEST(Backward, SumGivesOnes) {
  Tensor x = randn({2, 3}, 1).set_requires_grad(true);
  sum(x).backward();
  for (double g : x.grad()) EXPECT_EQ(g, 1.0);
}

TEST(Backward, SumOfSquaresGivesTwoX) {
  Tensor x = randn({5}, 2).set_requires_grad(true);
  sum(square(x)).backward();
  for (std::size_t i = 0; i < 5; ++i) EXPECT_DOUBLE_EQ(x.grad()[i], 2.0 * x.data()[i]);
}

TEST(Backward, NonScalarLossRejected) {
  Tensor x = randn({3}, 3).set_requires_grad(true);
  EXPECT_THROW(square(x).backward(), InvalidInput);
}

TEST(Backward, SharedSubexpressionAccumulates) {
  Tensor x = Tensor::from_data({1}, {3.0}, true);
  Tensor y = mul(x, x);
  sum(add(y, y)).backward();
  EXPECT_DOUBLE_EQ(x.grad()[0], 12.0);
}

TEST(Backward, NoGradGuardSkipsGraph) {
  Tensor x = randn({3}, 4).set_requires_grad(true);
  NoGradGuard g;
  EXPECT_FALSE(square(x).requires_grad());
}

TEST(Conv2d, OneByOneIdentity) {
  ConvSpec s;
  s.in_ch = s.out_ch = 3;
  Tensor w = Tensor::zeros(s.weight_shape());
  for (std::size_t c = 0; c < 3; ++c) w.data()[c * 3 + c] = 1.0;
  Tensor x = randn({2, 3, 5, 4}, 5);
  Tensor y = conv2d(x, w, Tensor(), s);
  EXPECT_EQ(y.vec(), x.vec());
}

TEST(Conv2d, OnesKernelSumsInput) {
  ConvSpec s;
  s.kernel_f = 2;
  s.kernel_t = 2;
  Tensor x = Tensor::from_data({1, 1, 2, 2}, {1.0, 2.0, 3.0, 4.0});
  Tensor y = conv2d(x, Tensor::full(s.weight_shape(), 1.0), Tensor(), s);
  // Causal time padding prepends one zero frame; the last frame sees the full 2x2 window.
  ASSERT_EQ(y.shape(), (Shape{1, 1, 1, 2}));
  EXPECT_DOUBLE_EQ(y.data()[1], 10.0);
  EXPECT_DOUBLE_EQ(y.data()[0], 4.0);
}

TEST(Conv2d, MatchesLoopOracle) {
  std::vector<ConvSpec> specs;
  ConvSpec a;
  a.in_ch = 3;
  a.out_ch = 4;
  a.kernel_f = 3;
  a.kernel_t = 2;
  a.pad_f_left = 1;
  a.pad_f_right = 1;
  specs.push_back(a);
  ConvSpec b = a;
  b.stride_f = 2;
  b.dilation_t = 2;
  b.kernel_t = 3;
  specs.push_back(b);
  ConvSpec c;
  c.in_ch = c.out_ch = c.groups = 3;
  c.kernel_f = c.kernel_t = 3;
  c.dilation_t = 4;
  c.pad_f_left = c.pad_f_right = 1;
  specs.push_back(c);
  ConvSpec d = a;
  d.stride_t = 2;
  specs.push_back(d);
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const auto& s = specs[i];
    Tensor x = randn({1, 3, 9, 8}, 10 + i);
    Tensor w = randn(s.weight_shape(), 20 + i);
    Tensor bias = randn({s.out_ch}, 30 + i);
    Tensor y = conv2d(x, w, bias, s);
    const auto ref = conv_oracle(x, w, bias, s);
    ASSERT_EQ(y.numel(), ref.size());
    for (std::size_t j = 0; j < ref.size(); ++j) EXPECT_NEAR(y.data()[j], ref[j], 1e-12);
  }
}

TEST(Conv2d, OutputSizeFormula) {
  EXPECT_EQ(dc_spec(1, 1).conv_out_f(257), 65u);
  EXPECT_EQ(dc_spec(1, 1).conv_out_f(65), 17u);
  EXPECT_EQ(dc_spec(1, 1).conv_out_f(17), 5u);
}

TEST(Conv2d, ShapeErrors) {
  ConvSpec s;
  s.in_ch = 2;
  EXPECT_THROW(conv2d(randn({1, 3, 4, 4}, 1), Tensor::zeros(s.weight_shape()), Tensor(), s), ShapeError);
  EXPECT_THROW(conv2d(randn({1, 2, 4, 4}, 1), Tensor::zeros({1, 1, 1, 1}), Tensor(), s), ShapeError);
}

TEST(Conv2d, TimeAxisIsCausal) {
  ConvSpec s;
  s.in_ch = s.out_ch = 2;
  s.kernel_f = s.kernel_t = 3;
  s.dilation_t = 2;
  s.pad_f_left = s.pad_f_right = 1;
  Tensor w = randn(s.weight_shape(), 7);
  Tensor x = randn({1, 2, 6, 10}, 8);
  Tensor y0 = conv2d(x, w, Tensor(), s);
  x.data()[(1 * 6 + 3) * 10 + 5] += 1.0;
  Tensor y1 = conv2d(x, w, Tensor(), s);
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t f = 0; f < 6; ++f)
      for (std::size_t t = 0; t < 5; ++t) {
        const std::size_t i = (c * 6 + f) * 10 + t;
        EXPECT_EQ(y0.data()[i], y1.data()[i]);
      }
}

TEST(Conv2dTranspose, StrideOneIdentity) {
  ConvSpec s;
  s.in_ch = s.out_ch = 2;
  s.transposed = true;
  Tensor w = Tensor::zeros(s.weight_shape());
  w.data()[0] = w.data()[3] = 1.0;
  Tensor x = randn({1, 2, 5, 3}, 9);
  EXPECT_EQ(conv2d_transpose(x, w, Tensor(), s).vec(), x.vec());
}

TEST(Conv2dTranspose, AdjointIdentity) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    ConvSpec fwd = dc_spec(3, 5);
    ConvSpec tr = fwd;
    tr.transposed = true;
    tr.in_ch = 5;
    tr.out_ch = 3;
    // Transposed weight [in=5, out=3, kf, 1] shares storage with forward [5, 3, kf, 1].
    Tensor w = randn(fwd.weight_shape(), 100 + seed);
    Tensor x = randn({2, 3, 65, 4}, 200 + seed);
    Tensor y = randn({2, 5, 17, 4}, 300 + seed);
    const double lhs = dot(conv2d(x, w, Tensor(), fwd).data(), y.data());
    const double rhs = dot(x.data(), conv2d_transpose(y, w, Tensor(), tr).data());
    EXPECT_NEAR(lhs, rhs, 1e-10 * std::max(1.0, std::abs(lhs)));
  }
}

TEST(Conv2dTranspose, RestoresFrequencyTrace) {
  std::vector<std::size_t> trace{257};
  Tensor x = randn({1, 2, 257, 3}, 11);
  for (int i = 0; i < 3; ++i) {
    ConvSpec s = dc_spec(2, 2);
    x = conv2d(x, randn(s.weight_shape(), 12 + i), Tensor(), s);
    trace.push_back(x.dim(2));
  }
  for (int i = 0; i < 3; ++i) {
    ConvSpec s = dc_spec(2, 2);
    s.transposed = true;
    x = conv2d_transpose(x, randn(s.weight_shape(), 22 + i), Tensor(), s);
    trace.push_back(x.dim(2));
    EXPECT_EQ(x.dim(3), 3u);
  }
  EXPECT_EQ(trace, (std::vector<std::size_t>{257, 65, 17, 5, 17, 65, 257}));
}

TEST(Attention, SingleBinReturnsValue) {
  Tensor q = randn({2, 3, 1, 4}, 1), k = randn({2, 3, 1, 4}, 2), v = randn({2, 3, 1, 4}, 3);
  Tensor y = freq_attention(q, k, v);
  for (std::size_t i = 0; i < y.numel(); ++i) EXPECT_NEAR(y.data()[i], v.data()[i], 1e-15);
}

TEST(Attention, ConstantQueriesKeysAverageValues) {
  const std::size_t C = 2, F = 5, T = 3;
  Tensor q = Tensor::full({1, C, F, T}, 0.7), k = Tensor::full({1, C, F, T}, -1.3);
  Tensor v = randn({1, C, F, T}, 4);
  Tensor y = freq_attention(q, k, v);
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t t = 0; t < T; ++t) {
      double m = 0.0;
      for (std::size_t f = 0; f < F; ++f) m += v.data()[(c * F + f) * T + t] / F;
      for (std::size_t f = 0; f < F; ++f) EXPECT_NEAR(y.data()[(c * F + f) * T + t], m, 1e-12);
    }
}

TEST(Attention, MatchesScalarOracle) {
  const std::size_t C = 2, F = 4;
  Tensor q = randn({1, C, F, 1}, 5), k = randn({1, C, F, 1}, 6), v = randn({1, C, F, 1}, 7);
  Tensor y = freq_attention(q, k, v);
  for (std::size_t i = 0; i < F; ++i) {
    double logits[4], z = 0.0;
    for (std::size_t j = 0; j < F; ++j) {
      logits[j] = (q.data()[i] * k.data()[j] + q.data()[F + i] * k.data()[F + j]) / std::sqrt(2.0);
      z += std::exp(logits[j]);
    }
    for (std::size_t c = 0; c < C; ++c) {
      double o = 0.0;
      for (std::size_t j = 0; j < F; ++j) o += std::exp(logits[j]) / z * v.data()[c * F + j];
      EXPECT_NEAR(y.data()[c * F + i], o, 1e-12);
    }
  }
}

TEST(Attention, OutputInsideValueEnvelope) {
  Tensor q = randn({1, 3, 9, 4}, 8, 3.0), k = randn({1, 3, 9, 4}, 9, 3.0), v = randn({1, 3, 9, 4}, 10);
  Tensor y = freq_attention(q, k, v);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t t = 0; t < 4; ++t) {
      double lo = 1e300, hi = -1e300;
      for (std::size_t f = 0; f < 9; ++f) {
        lo = std::min(lo, v.data()[(c * 9 + f) * 4 + t]);
        hi = std::max(hi, v.data()[(c * 9 + f) * 4 + t]);
      }
      for (std::size_t f = 0; f < 9; ++f) {
        EXPECT_GE(y.data()[(c * 9 + f) * 4 + t], lo - 1e-12);
        EXPECT_LE(y.data()[(c * 9 + f) * 4 + t], hi + 1e-12);
      }
    }
}

TEST(Attention, ShapeMismatch) {
  EXPECT_THROW(freq_attention(randn({1, 2, 3, 4}, 1), randn({1, 2, 3, 5}, 2), randn({1, 2, 3, 4}, 3)),
               ShapeError);
}

TEST(Primitives, SigmoidAtZero) { EXPECT_EQ(sigmoid(Tensor::scalar(0.0)).item(), 0.5); }

TEST(Primitives, SoftmaxRowsSumToOneAndDominantLogitWins) {
  Tensor x = randn({3, 4, 5}, 11, 4.0);
  for (std::size_t axis = 0; axis < 3; ++axis) {
    Tensor y = softmax(x, axis);
    const auto& s = x.shape();
    std::size_t inner = 1;
    for (std::size_t a = axis + 1; a < 3; ++a) inner *= s[a];
    const std::size_t outer = x.numel() / (inner * s[axis]);
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t i = 0; i < inner; ++i) {
        double tot = 0.0;
        for (std::size_t j = 0; j < s[axis]; ++j) tot += y.data()[(o * s[axis] + j) * inner + i];
        EXPECT_NEAR(tot, 1.0, 1e-12);
      }
  }
  Tensor hot = Tensor::from_data({1, 3}, {50.0, 0.0, 0.0});
  Tensor p = softmax(hot, 1);
  EXPECT_NEAR(p.data()[0], 1.0, 1e-20);
  EXPECT_LT(p.data()[1], 1e-20);
}

TEST(Primitives, LayerNormStatistics) {
  const std::size_t C = 6;
  Tensor x = randn({2, C, 3, 4}, 12, 5.0);
  Tensor y = layer_norm_channels(x, Tensor::full({C}, 1.0), Tensor::zeros({C}), 0.0);
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t p = 0; p < 12; ++p) {
      double m = 0.0, v = 0.0;
      for (std::size_t c = 0; c < C; ++c) m += y.data()[(b * C + c) * 12 + p] / C;
      for (std::size_t c = 0; c < C; ++c) v += std::pow(y.data()[(b * C + c) * 12 + p] - m, 2) / C;
      EXPECT_NEAR(m, 0.0, 1e-10);
      EXPECT_NEAR(v, 1.0, 1e-10);
    }
}

TEST(Primitives, PreluSlopes) {
  Tensor x = Tensor::from_data({1, 2, 1, 2}, {-2.0, 3.0, -4.0, 5.0});
  Tensor y = prelu(x, Tensor::from_data({2}, {0.25, 0.5}));
  EXPECT_EQ(y.vec(), (std::vector<double>{-0.5, 3.0, -2.0, 5.0}));
}

TEST(Primitives, ChannelPlumbing) {
  Tensor a = randn({2, 2, 3, 2}, 13), b = randn({2, 3, 3, 2}, 14);
  Tensor c = concat_channels({a, b});
  ASSERT_EQ(c.shape(), (Shape{2, 5, 3, 2}));
  EXPECT_EQ(slice_channels(c, 0, 2).vec(), a.vec());
  EXPECT_EQ(slice_channels(c, 2, 3).vec(), b.vec());
  EXPECT_THROW(concat_channels({a, randn({2, 2, 4, 2}, 1)}), ShapeError);
}

TEST(GradCheck, QuadraticFormExact) {
  Tensor x = randn({6}, 15);
  Tensor a = randn({6}, 16);
  const double err = grad_check([&] { return sum(mul(a, square(x))); }, {x});
  EXPECT_LT(err, 1e-9);
}

class PrimitiveGrad : public ::testing::Test {
 protected:
  static constexpr double kTol = 1e-6;
};

TEST_F(PrimitiveGrad, Elementwise) {
  Tensor a = randn({2, 3, 4, 2}, 17), b = randn({2, 3, 4, 2}, 18);
  Tensor pos = Tensor::from_data(b.shape(), [&] {
    auto v = b.vec();
    for (auto& e : v) e = 0.5 + std::abs(e);
    return v;
  }());
  EXPECT_LT(grad_check([&] { return probe(add(a, b), 1); }, {a, b}), kTol);
  EXPECT_LT(grad_check([&] { return probe(sub(a, b), 2); }, {a, b}), kTol);
  EXPECT_LT(grad_check([&] { return probe(mul(a, b), 3); }, {a, b}), kTol);
  EXPECT_LT(grad_check([&] { return probe(div(a, pos), 4); }, {a, pos}), kTol);
  EXPECT_LT(grad_check([&] { return probe(sqrt(pos), 5); }, {pos}), kTol);
  EXPECT_LT(grad_check([&] { return probe(sigmoid(a), 6); }, {a}), kTol);
  EXPECT_LT(grad_check([&] { return probe(abs(pos), 7); }, {pos}), kTol);
  EXPECT_LT(grad_check([&] { return probe(add_scalar(scale(square(a), 0.3), 1.0), 8); }, {a}), kTol);
  EXPECT_LT(grad_check([&] { return mean(square(a)); }, {a}), kTol);
}

TEST_F(PrimitiveGrad, LayerPrimitives) {
  Tensor x = randn({2, 4, 3, 5}, 19);
  Tensor alpha = Tensor::from_data({4}, {0.1, 0.2, 0.3, 0.4});
  Tensor gamma = randn({4}, 20), beta = randn({4}, 21);
  EXPECT_LT(grad_check([&] { return probe(prelu(x, alpha), 9); }, {x, alpha}), kTol);
  EXPECT_LT(grad_check([&] { return probe(layer_norm_channels(x, gamma, beta), 10); }, {x, gamma, beta}), kTol);
  EXPECT_LT(grad_check([&] { return probe(softmax(x, 2), 11); }, {x}), kTol);
  EXPECT_LT(grad_check([&] { return probe(softmax(x, 1), 12); }, {x}), kTol);
  Tensor g = randn({2, 4, 3, 5}, 22);
  EXPECT_LT(grad_check([&] { return probe(gate(x, g), 13); }, {x, g}), kTol);
  Tensor y = randn({2, 4, 3, 5}, 23);
  EXPECT_LT(grad_check([&] { return probe(compressed_magnitude(x, y, 0.5), 14); }, {x, y}), kTol);
  EXPECT_LT(grad_check([&] { return probe(concat_channels({x, slice_channels(y, 1, 2)}), 15); }, {x, y}), kTol);
  EXPECT_LT(grad_check([&] { return probe(sum_channels(x), 16); }, {x}), kTol);
  EXPECT_LT(grad_check([&] { return probe(select(x, 1), 17); }, {x}), kTol);
}

TEST_F(PrimitiveGrad, Convolutions) {
  ConvSpec pw;
  pw.in_ch = 4;
  pw.out_ch = 6;
  ConvSpec dw;
  dw.in_ch = dw.out_ch = dw.groups = 4;
  dw.kernel_f = dw.kernel_t = 3;
  dw.dilation_t = 2;
  dw.pad_f_left = dw.pad_f_right = 1;
  ConvSpec dc = dc_spec(4, 3);
  ConvSpec uc = dc_spec(4, 3);
  uc.transposed = true;
  Tensor x = randn({2, 4, 17, 5}, 24);
  for (const auto* s : {&pw, &dw, &dc}) {
    Tensor w = randn(s->weight_shape(), 25), b = randn({s->out_ch}, 26);
    EXPECT_LT(grad_check([&] { return probe(conv2d(x, w, b, *s), 18); }, {x, w, b}), kTol);
  }
  Tensor xs = randn({2, 4, 5, 3}, 27);
  Tensor w = randn(uc.weight_shape(), 28), b = randn({3}, 29);
  EXPECT_LT(grad_check([&] { return probe(conv2d_transpose(xs, w, b, uc), 19); }, {xs, w, b}), kTol);
}

TEST_F(PrimitiveGrad, Attention) {
  Tensor q = randn({1, 2, 6, 3}, 30), k = randn({1, 2, 6, 3}, 31), v = randn({1, 2, 6, 3}, 32);
  EXPECT_LT(grad_check([&] { return probe(freq_attention(q, k, v), 20); }, {q, k, v}), kTol);
}

TEST_F(PrimitiveGrad, SpectralOps) {
  const StftConfig cfg(16, 4, 16);
  Tensor x = randn({2, 40}, 33);
  EXPECT_LT(grad_check([&] { return probe(stft_op(x, cfg), 21); }, {x}), kTol);
  Tensor s = randn({2, 2, 9, 10}, 34);
  EXPECT_LT(grad_check([&] { return probe(istft_op(s, cfg, 40), 22); }, {s}), kTol);
}

TEST(SpectralOps, MatchPlainTransforms) {
  const StftConfig cfg;
  Tensor x = randn({1, 1600}, 35);
  Tensor s = stft_op(x, cfg);
  auto ref = stft_rows(x.data(), 1, 1600, cfg);
  ASSERT_EQ(s.shape(), (Shape{1, 2, 257, ref.frames()}));
  for (std::size_t k = 0; k < 257; ++k)
    for (std::size_t l = 0; l < ref.frames(); ++l) {
      EXPECT_EQ(s.data()[k * ref.frames() + l], ref.at(0, k, l).real());
      EXPECT_EQ(s.data()[(257 + k) * ref.frames() + l], ref.at(0, k, l).imag());
    }
  Tensor y = istft_op(s, cfg, 1600);
  // Samples after the start of the last frame are covered by a single window.
  for (std::size_t i = 0; i < (ref.frames() - 1) * cfg.hop(); ++i) EXPECT_NEAR(y.data()[i], x.data()[i], 1e-9);
}

TEST(Optimizer, CosineSchedule) {
  EXPECT_DOUBLE_EQ(cosine_lr(3e-3, 0, 500), 3e-3);
  EXPECT_NEAR(cosine_lr(3e-3, 250, 500), 1.5e-3, 1e-15);
  EXPECT_EQ(cosine_lr(3e-3, 500, 500), 0.0);
}

TEST(Optimizer, ZeroGradientLeavesParameters) {
  for (auto kind : {OptimizerKind::kNovoGrad, OptimizerKind::kAdam}) {
    Tensor w = randn({3, 4}, 36);
    const auto before = w.vec();
    OptimizerConfig cfg;
    cfg.kind = kind;
    Optimizer opt({{"w", w}}, cfg);
    for (int i = 0; i < 5; ++i) {
      w.zero_grad();
      (void)w.grad();
      opt.step();
    }
    EXPECT_EQ(w.vec(), before);
  }
}

TEST(Optimizer, QuadraticBowlDecreases) {
  for (auto kind : {OptimizerKind::kNovoGrad, OptimizerKind::kAdam}) {
    Tensor w = Tensor::from_data({1}, {2.0}, true);
    OptimizerConfig cfg;
    cfg.kind = kind;
    // Small enough that momentum cannot carry the iterate past the minimum.
    cfg.lr = kind == OptimizerKind::kAdam ? 0.01 : 5e-4;
    cfg.budget = 100;
    Optimizer opt({{"w", w}}, cfg);
    double prev = 1e300;
    for (int i = 0; i < 100; ++i) {
      opt.zero_grad();
      Tensor loss = sum(square(add_scalar(w, -0.5)));
      EXPECT_LT(loss.item(), prev) << optimizer_name(kind) << " step " << i;
      prev = loss.item();
      loss.backward();
      opt.step();
    }
  }
}

TEST(Optimizer, RejectsBadConfig) {
  OptimizerConfig cfg;
  cfg.beta1 = 1.0;
  EXPECT_THROW(Optimizer({}, cfg), ConfigError);
  EXPECT_THROW(parse_optimizer("sgd"), ConfigError);
}

TEST(Optimizer, DeterministicTrajectory) {
  auto run = [] {
    Tensor w = randn({8}, 37).set_requires_grad(true);
    Tensor t = randn({8}, 38);
    Optimizer opt({{"w", w}}, OptimizerConfig{});
    for (int i = 0; i < 20; ++i) {
      opt.zero_grad();
      sum(square(sub(w, t))).backward();
      opt.step();
    }
    return w.vec();
  };
  EXPECT_EQ(run(), run());
}

TEST(Checkpoint, BitExactRoundTrip) {
  Checkpoint ck;
  ck.manifest = "pe_out_ch=4\nenc_channels=16,24,40\n";
  ck.tensors.push_back({"a.weight", randn({2, 3, 1, 4}, 39)});
  ck.tensors.push_back({"b.bias", Tensor::from_data({3}, {-0.0, 1e-310, 3.5})});
  const auto path = (std::filesystem::temp_directory_path() / "pldnet_ck_test.bin").string();
  save_checkpoint(path, ck);
  const auto back = load_checkpoint(path);
  EXPECT_EQ(back.manifest, ck.manifest);
  ASSERT_EQ(back.tensors.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(back.tensors[i].name, ck.tensors[i].name);
    EXPECT_EQ(back.tensors[i].tensor.shape(), ck.tensors[i].tensor.shape());
    EXPECT_EQ(std::memcmp(back.tensors[i].tensor.data().data(), ck.tensors[i].tensor.data().data(),
                          ck.tensors[i].tensor.numel() * sizeof(double)),
              0);
  }
  EXPECT_EQ(encode_checkpoint(back), encode_checkpoint(ck));
  std::filesystem::remove(path);
}

TEST(Checkpoint, RejectsCorruptInput) {
  Checkpoint ck;
  ck.tensors.push_back({"w", randn({4}, 40)});
  auto bytes = encode_checkpoint(ck);
  auto bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(decode_checkpoint(bad), InvalidInput);
  bytes.pop_back();
  EXPECT_THROW(decode_checkpoint(bytes), InvalidInput);
}
