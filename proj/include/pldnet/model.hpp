#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "pldnet/nn/attention.hpp"
#include "pldnet/nn/checkpoint.hpp"
#include "pldnet/nn/conv.hpp"
#include "pldnet/nn/ops.hpp"
#include "pldnet/nn/optim.hpp"
#include "pldnet/nn/spectral.hpp"

// Lightweight U-Net speech enhancer operating on three aligned complex
// spectra: the two microphone spectra and a guidance spectrum. Complex
// spectra are tensors [B, 2, F, T] (real part, imaginary part).
namespace pldnet::model {

using nn::ConvSpec;
using nn::Shape;
using nn::Tensor;

struct ModelConfig {
  std::size_t pe_out_ch = 4;
  std::vector<std::size_t> enc_channels{16, 24, 40};
  std::size_t pe_kernel_t = 3;
  double pe_power = 0.5;
  std::size_t dc_kernel = 7;
  std::size_t dc_stride = 4;
  std::size_t dc_pad = 3;
  std::size_t tfcm_depth = 6;
  std::size_t tfcm_kernel = 3;
  // Channel layer norm after the first pointwise conv of each TFCM unit.
  bool tfcm_norm = true;
  std::size_t backbone_blocks = 2;
  std::size_t mea_taps = 3;
  std::size_t fft_bins = 257;

  std::vector<std::size_t> dec_channels() const { return {enc_channels[1], enc_channels[0], pe_out_ch}; }

  // Frequency sizes at the PE output and after each downsampling stage.
  std::vector<std::size_t> freq_trace() const {
    std::vector<std::size_t> f{fft_bins};
    for (std::size_t i = 0; i < enc_channels.size(); ++i) f.push_back(dc_spec(i, 1, 1).conv_out_f(f.back()));
    return f;
  }

  ConvSpec dc_spec(std::size_t /*stage*/, std::size_t in, std::size_t out) const {
    ConvSpec s;
    s.in_ch = in;
    s.out_ch = out;
    s.kernel_f = dc_kernel;
    s.stride_f = dc_stride;
    s.pad_f_left = s.pad_f_right = dc_pad;
    return s;
  }

  // Upsampling spec mapping frequency size f_in back to f_out.
  ConvSpec uc_spec(std::size_t in, std::size_t out, std::size_t f_in, std::size_t f_out) const {
    ConvSpec s = dc_spec(0, in, out);
    s.transposed = true;
    const std::size_t base = s.transpose_out_f(f_in);
    if (f_out < base || f_out - base >= dc_stride) {
      throw ConfigError("model: upsampling cannot restore " + std::to_string(f_out) + " bins from " +
                        std::to_string(f_in));
    }
    s.output_padding_f = f_out - base;
    return s;
  }

  void validate() const {
    if (enc_channels.size() != 3) throw ConfigError("model: enc_channels must have 3 entries");
    auto even = [](std::size_t c) { return c >= 2 && c % 2 == 0; };
    if (!even(pe_out_ch)) throw ConfigError("model: pe_out_ch must be even and >= 2");
    for (auto c : enc_channels) {
      if (!even(c)) throw ConfigError("model: encoder channels must be even and >= 2");
    }
    if (pe_kernel_t == 0 || tfcm_depth == 0 || tfcm_kernel == 0 || tfcm_kernel % 2 == 0 || mea_taps == 0 ||
        dc_stride == 0 || dc_kernel == 0) {
      throw ConfigError("model: kernel sizes and depths must be positive (tfcm_kernel odd)");
    }
    if (!(pe_power > 0.0 && pe_power <= 1.0)) throw ConfigError("model: pe_power must be in (0, 1]");
    const auto f = freq_trace();
    for (std::size_t i = 0; i < 3; ++i) (void)uc_spec(1, 1, f[i + 1], f[i]);
  }

  std::string to_manifest() const {
    std::ostringstream os;
    os.precision(17);
    os << "pe_out_ch=" << pe_out_ch << "\n"
       << "enc_channels=" << enc_channels[0] << "," << enc_channels[1] << "," << enc_channels[2] << "\n"
       << "pe_kernel_t=" << pe_kernel_t << "\n"
       << "pe_power=" << pe_power << "\n"
       << "dc_kernel=" << dc_kernel << "\n"
       << "dc_stride=" << dc_stride << "\n"
       << "dc_pad=" << dc_pad << "\n"
       << "tfcm_depth=" << tfcm_depth << "\n"
       << "tfcm_kernel=" << tfcm_kernel << "\n"
       << "tfcm_norm=" << (tfcm_norm ? 1 : 0) << "\n"
       << "backbone_blocks=" << backbone_blocks << "\n"
       << "mea_taps=" << mea_taps << "\n"
       << "fft_bins=" << fft_bins << "\n";
    return os.str();
  }

  static ModelConfig from_manifest(const std::string& text) {
    ModelConfig c;
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw ConfigError("model manifest: malformed line '" + line + "'");
      const std::string key = line.substr(0, eq), val = line.substr(eq + 1);
      auto num = [&] {
        try {
          return static_cast<std::size_t>(std::stoull(val));
        } catch (const std::exception&) {
          throw ConfigError("model manifest: bad value for " + key);
        }
      };
      if (key == "pe_out_ch") c.pe_out_ch = num();
      else if (key == "pe_kernel_t") c.pe_kernel_t = num();
      else if (key == "pe_power") c.pe_power = std::stod(val);
      else if (key == "dc_kernel") c.dc_kernel = num();
      else if (key == "dc_stride") c.dc_stride = num();
      else if (key == "dc_pad") c.dc_pad = num();
      else if (key == "tfcm_depth") c.tfcm_depth = num();
      else if (key == "tfcm_kernel") c.tfcm_kernel = num();
      else if (key == "tfcm_norm") c.tfcm_norm = num() != 0;
      else if (key == "backbone_blocks") c.backbone_blocks = num();
      else if (key == "mea_taps") c.mea_taps = num();
      else if (key == "fft_bins") c.fft_bins = num();
      else if (key == "enc_channels") {
        c.enc_channels.clear();
        std::istringstream vs(val);
        std::string part;
        while (std::getline(vs, part, ',')) c.enc_channels.push_back(static_cast<std::size_t>(std::stoull(part)));
      } else {
        throw ConfigError("model manifest: unknown key " + key);
      }
    }
    c.validate();
    return c;
  }
};

// Named trainable tensors in creation order.
class ModelWeights {
 public:
  Tensor& add(const std::string& name, Tensor t) {
    if (index_.count(name) != 0) throw ConfigError("duplicate parameter " + name);
    t.set_requires_grad(true);
    index_[name] = params_.size();
    params_.push_back({name, std::move(t)});
    return params_.back().tensor;
  }

  const Tensor& operator[](const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("missing parameter " + name);
    return params_[it->second].tensor;
  }
  Tensor& at(const std::string& name) { return const_cast<Tensor&>(std::as_const(*this)[name]); }
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  nn::ParamList& params() { return params_; }
  const nn::ParamList& params() const { return params_; }
  std::size_t param_count() const { return nn::count_params(params_); }

  // Deep copy with fresh gradient state.
  ModelWeights clone() const {
    ModelWeights w;
    for (const auto& p : params_) w.add(p.name, p.tensor.detach());
    return w;
  }

 private:
  nn::ParamList params_;
  std::map<std::string, std::size_t> index_;
};

namespace detail {

class Initializer {
 public:
  Initializer(ModelWeights& w, std::uint64_t seed) : w_(w), rng_(seed) {}

  // Uniform in +-gain/sqrt(fan_in).
  void uniform(const std::string& name, Shape s, std::size_t fan_in, double gain = 1.0) {
    const double bound = gain / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> u(-bound, bound);
    std::vector<double> d(nn::numel(s));
    for (auto& v : d) v = u(rng_);
    w_.add(name, Tensor::from_data(std::move(s), std::move(d)));
  }
  void constant(const std::string& name, Shape s, double v) { w_.add(name, Tensor::full(std::move(s), v)); }
  void values(const std::string& name, std::vector<double> v) {
    const std::size_t n = v.size();
    w_.add(name, Tensor::from_data({n}, std::move(v)));
  }

  void conv(const std::string& name, const ConvSpec& s, double gain = 1.0) {
    const std::size_t fan_in = (s.transposed ? s.out_ch : s.in_ch / s.groups) * s.kernel_f * s.kernel_t;
    uniform(name + ".w", s.weight_shape(), fan_in, gain);
    uniform(name + ".b", {s.out_ch}, fan_in, gain);
  }
  void prelu(const std::string& name, std::size_t c) { constant(name, {c}, 0.25); }

 private:
  ModelWeights& w_;
  std::mt19937_64 rng_;
};

inline ConvSpec pointwise_spec(std::size_t in, std::size_t out) {
  ConvSpec s;
  s.in_ch = in;
  s.out_ch = out;
  return s;
}

inline ConvSpec tfcm_dw_spec(const ModelConfig& cfg, std::size_t c, std::size_t i) {
  ConvSpec s;
  s.in_ch = s.out_ch = s.groups = c;
  s.kernel_f = s.kernel_t = cfg.tfcm_kernel;
  s.pad_f_left = s.pad_f_right = cfg.tfcm_kernel / 2;
  s.dilation_t = std::size_t{1} << i;
  return s;
}

inline ConvSpec pe_spec(const ModelConfig& cfg) {
  ConvSpec s;
  s.in_ch = 3;
  s.out_ch = cfg.pe_out_ch;
  s.kernel_t = cfg.pe_kernel_t;
  return s;
}

inline void init_tfcm(Initializer& in, const ModelConfig& cfg, const std::string& p, std::size_t c) {
  for (std::size_t i = 0; i < cfg.tfcm_depth; ++i) {
    const std::string q = p + "." + std::to_string(i);
    in.conv(q + ".pw1", pointwise_spec(c, c));
    if (cfg.tfcm_norm) {
      in.constant(q + ".ln.g", {c}, 1.0);
      in.constant(q + ".ln.b", {c}, 0.0);
    }
    in.prelu(q + ".act1", c);
    in.conv(q + ".dw", tfcm_dw_spec(cfg, c, i));
    in.prelu(q + ".act2", c);
    in.conv(q + ".pw2", pointwise_spec(c, c));
  }
}

inline void init_gcafa(Initializer& in, const std::string& p, std::size_t c) {
  const std::size_t h = c / 2;
  in.conv(p + ".a", pointwise_spec(c, 6 * h));
  in.constant(p + ".ln.g", {h}, 1.0);
  in.constant(p + ".ln.b", {h}, 0.0);
  in.conv(p + ".proj", pointwise_spec(h, c));
  in.prelu(p + ".proj.act", c);
  in.conv(p + ".b", pointwise_spec(c, 2 * c));
}

}  // namespace detail

inline ModelWeights init_weights(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ModelWeights w;
  detail::Initializer in(w, seed);
  const auto pe = detail::pe_spec(cfg);
  in.uniform("pe.wr", pe.weight_shape(), 2 * 3 * cfg.pe_kernel_t);
  in.uniform("pe.wi", pe.weight_shape(), 2 * 3 * cfg.pe_kernel_t);

  const auto f = cfg.freq_trace();
  std::size_t prev = cfg.pe_out_ch;
  for (std::size_t i = 0; i < 3; ++i) {
    const std::string p = "enc" + std::to_string(i);
    const std::size_t c = cfg.enc_channels[i];
    in.conv(p + ".dc", cfg.dc_spec(i, prev, c));
    in.prelu(p + ".dc.act", c);
    detail::init_tfcm(in, cfg, p + ".tfcm", c);
    detail::init_gcafa(in, p + ".gcafa", c);
    prev = c;
  }
  for (std::size_t b = 0; b < cfg.backbone_blocks; ++b) {
    const std::string p = "bb" + std::to_string(b);
    detail::init_tfcm(in, cfg, p + ".tfcm0", prev);
    detail::init_tfcm(in, cfg, p + ".tfcm1", prev);
    detail::init_gcafa(in, p + ".gcafa", prev);
  }
  const auto dec = cfg.dec_channels();
  for (std::size_t i = 0; i < 3; ++i) {
    const std::string p = "dec" + std::to_string(i);
    const std::size_t skip = cfg.enc_channels[2 - i];
    in.conv(p + ".uc", cfg.uc_spec(prev + skip, dec[i], f[3 - i], f[2 - i]));
    in.prelu(p + ".uc.act", dec[i]);
    detail::init_tfcm(in, cfg, p + ".tfcm", dec[i]);
    detail::init_gcafa(in, p + ".gcafa", dec[i]);
    prev = dec[i];
  }
  // Heads start near the identity mask: tap 0 ~ 1, later taps ~ 0, no rotation.
  in.uniform("mea.taps.w", {cfg.mea_taps, prev, 1, 1}, prev, 0.1);
  std::vector<double> tb(cfg.mea_taps, -4.0);
  tb[0] = 0.0;
  in.values("mea.taps.b", tb);
  in.uniform("mea.phase.w", {2, prev, 1, 1}, prev, 0.1);
  in.values("mea.phase.b", {1.0, 0.0});
  return w;
}

inline std::size_t param_count(const ModelConfig& cfg) { return init_weights(cfg, 0).param_count(); }

inline Tensor conv_layer(const Tensor& x, const ModelWeights& w, const std::string& name, const ConvSpec& s) {
  return s.transposed ? nn::conv2d_transpose(x, w[name + ".w"], w[name + ".b"], s)
                      : nn::conv2d(x, w[name + ".w"], w[name + ".b"], s);
}

inline void require_spectrum(const Tensor& x, const char* what) {
  if (x.ndim() != 4 || x.dim(1) != 2) {
    throw ShapeError(std::string(what) + ": expected complex spectrum [B,2,F,T], got " + nn::shape_str(x.shape()));
  }
}

// Complex causal convolution over the stacked spectra, then compressed magnitude.
inline Tensor phase_encode(const ModelConfig& cfg, const ModelWeights& w, const Tensor& y1, const Tensor& y2,
                           const Tensor& x_pld) {
  for (const auto* t : {&y1, &y2, &x_pld}) require_spectrum(*t, "phase_encode");
  if (y1.shape() != y2.shape() || y1.shape() != x_pld.shape()) {
    throw ShapeError("phase_encode: input spectra must share [B,2,F,T]");
  }
  using nn::slice_channels;
  const Tensor re = nn::concat_channels({slice_channels(y1, 0, 1), slice_channels(y2, 0, 1), slice_channels(x_pld, 0, 1)});
  const Tensor im = nn::concat_channels({slice_channels(y1, 1, 1), slice_channels(y2, 1, 1), slice_channels(x_pld, 1, 1)});
  const ConvSpec s = detail::pe_spec(cfg);
  const Tensor& wr = w["pe.wr"];
  const Tensor& wi = w["pe.wi"];
  const Tensor out_re = nn::sub(nn::conv2d(re, wr, Tensor(), s), nn::conv2d(im, wi, Tensor(), s));
  const Tensor out_im = nn::add(nn::conv2d(re, wi, Tensor(), s), nn::conv2d(im, wr, Tensor(), s));
  return nn::compressed_magnitude(out_re, out_im, cfg.pe_power, 1e-12);
}

inline Tensor tfcm_forward(const ModelConfig& cfg, const ModelWeights& w, const std::string& p, const Tensor& x) {
  const std::size_t c = x.dim(1);
  Tensor h = x;
  for (std::size_t i = 0; i < cfg.tfcm_depth; ++i) {
    const std::string q = p + "." + std::to_string(i);
    Tensor u = conv_layer(h, w, q + ".pw1", detail::pointwise_spec(c, c));
    if (cfg.tfcm_norm) u = nn::layer_norm_channels(u, w[q + ".ln.g"], w[q + ".ln.b"]);
    u = nn::prelu(u, w[q + ".act1"]);
    u = nn::prelu(conv_layer(u, w, q + ".dw", detail::tfcm_dw_spec(cfg, c, i)), w[q + ".act2"]);
    u = conv_layer(u, w, q + ".pw2", detail::pointwise_spec(c, c));
    h = nn::add(h, u);
  }
  return h;
}

// Pointwise conv to 2*out channels; first half gated by the sigmoid of the second.
inline Tensor gated_pointwise(const ModelWeights& w, const std::string& name, const Tensor& x, std::size_t out) {
  const Tensor z = conv_layer(x, w, name, detail::pointwise_spec(x.dim(1), 2 * out));
  return nn::gate(nn::slice_channels(z, 0, out), nn::slice_channels(z, out, out));
}

inline Tensor gcafa_forward(const ModelWeights& w, const std::string& p, const Tensor& x) {
  if (x.ndim() != 4) throw ShapeError("gcafa: expected [B,C,F,T], got " + nn::shape_str(x.shape()));
  const std::size_t c = x.dim(1);
  if (c % 2 != 0) throw ConfigError("gcafa: channel count must be even, got " + std::to_string(c));
  const std::size_t h = c / 2;
  const Tensor qkv = gated_pointwise(w, p + ".a", x, 3 * h);
  const Tensor att = nn::freq_attention(nn::slice_channels(qkv, 0, h), nn::slice_channels(qkv, h, h),
                                        nn::slice_channels(qkv, 2 * h, h));
  Tensor proj = nn::layer_norm_channels(att, w[p + ".ln.g"], w[p + ".ln.b"]);
  proj = nn::prelu(conv_layer(proj, w, p + ".proj", detail::pointwise_spec(h, c)), w[p + ".proj.act"]);
  const Tensor r1 = nn::add(x, proj);
  return nn::add(r1, gated_pointwise(w, p + ".b", r1, c));
}

inline Tensor downsample(const ModelConfig& cfg, const ModelWeights& w, const Tensor& x, std::size_t stage) {
  if (stage >= 3) throw ShapeError("downsample: stage must be 0, 1 or 2");
  const std::string p = "enc" + std::to_string(stage);
  const ConvSpec s = cfg.dc_spec(stage, x.dim(1), cfg.enc_channels[stage]);
  return nn::prelu(conv_layer(x, w, p + ".dc", s), w[p + ".dc.act"]);
}

// Concatenates the skip tensor, then upsamples frequency to `f_out`.
inline Tensor upsample(const ModelConfig& cfg, const ModelWeights& w, const Tensor& x, std::size_t stage,
                       const Tensor& skip) {
  if (stage >= 3) throw ShapeError("upsample: stage must be 0, 1 or 2");
  if (skip.dim(2) != x.dim(2) || skip.dim(3) != x.dim(3)) {
    throw ShapeError("upsample: skip " + nn::shape_str(skip.shape()) + " does not match " + nn::shape_str(x.shape()));
  }
  const auto f = cfg.freq_trace();
  const std::string p = "dec" + std::to_string(stage);
  const Tensor cat = nn::concat_channels({x, skip});
  const ConvSpec s = cfg.uc_spec(cat.dim(1), cfg.dec_channels()[stage], x.dim(2), f[2 - stage]);
  return nn::prelu(conv_layer(cat, w, p + ".uc", s), w[p + ".uc.act"]);
}

// Applies real deep-filter taps [B,J,F,T] over |Y1| at lags 0..J-1 and a
// unit-modulus rotation from the (c, s) pair [B,2,F,T] to the phase of Y1.
inline Tensor mea_apply(const Tensor& taps, const Tensor& cs, const Tensor& y1) {
  require_spectrum(y1, "mea_apply");
  const std::size_t b = y1.dim(0), f = y1.dim(2), t = y1.dim(3), j = taps.dim(1);
  if (taps.ndim() != 4 || taps.dim(0) != b || taps.dim(2) != f || taps.dim(3) != t) {
    throw ShapeError("mea_apply: taps shape " + nn::shape_str(taps.shape()));
  }
  if (cs.shape() != y1.shape()) throw ShapeError("mea_apply: phase head shape " + nn::shape_str(cs.shape()));
  const auto y = y1.data();
  std::vector<double> delayed(b * j * f * t, 0.0), cphi(b * f * t, 1.0), sphi(b * f * t, 0.0);
  for (std::size_t n = 0; n < b; ++n) {
    for (std::size_t k = 0; k < f; ++k) {
      for (std::size_t l = 0; l < t; ++l) {
        const double re = y[((n * 2 + 0) * f + k) * t + l], im = y[((n * 2 + 1) * f + k) * t + l];
        const double mag = std::hypot(re, im);
        if (mag > 0.0) {
          cphi[(n * f + k) * t + l] = re / mag;
          sphi[(n * f + k) * t + l] = im / mag;
        }
        for (std::size_t d = 0; d < j && l + d < t; ++d) delayed[((n * j + d) * f + k) * t + l + d] = mag;
      }
    }
  }
  const Tensor m = Tensor::from_data({b, j, f, t}, std::move(delayed));
  const Tensor cp = Tensor::from_data({b, 1, f, t}, std::move(cphi));
  const Tensor sp = Tensor::from_data({b, 1, f, t}, std::move(sphi));
  const Tensor mag = nn::sum_channels(nn::mul(taps, m));
  const Tensor c = nn::slice_channels(cs, 0, 1), s = nn::slice_channels(cs, 1, 1);
  const Tensor norm = nn::sqrt(nn::add_scalar(nn::add(nn::square(c), nn::square(s)), 1e-12));
  const Tensor cd = nn::div(c, norm), sd = nn::div(s, norm);
  const Tensor re = nn::mul(mag, nn::sub(nn::mul(cp, cd), nn::mul(sp, sd)));
  const Tensor im = nn::mul(mag, nn::add(nn::mul(sp, cd), nn::mul(cp, sd)));
  return nn::concat_channels({re, im});
}

struct MeaHeads {
  Tensor taps;  // [B, J, F, T] in [0, 2]
  Tensor cs;    // [B, 2, F, T] unnormalized rotation
};

inline MeaHeads mea_heads(const ModelConfig& cfg, const ModelWeights& w, const Tensor& x) {
  const Tensor logits = conv_layer(x, w, "mea.taps", detail::pointwise_spec(x.dim(1), cfg.mea_taps));
  return {nn::scale(nn::sigmoid(logits), 2.0), conv_layer(x, w, "mea.phase", detail::pointwise_spec(x.dim(1), 2))};
}

inline Tensor model_forward(const ModelConfig& cfg, const ModelWeights& w, const Tensor& y1, const Tensor& y2,
                            const Tensor& x_pld) {
  if (y1.ndim() == 4 && y1.dim(2) != cfg.fft_bins) {
    throw ShapeError("model_forward: expected " + std::to_string(cfg.fft_bins) + " bins, got " +
                     std::to_string(y1.dim(2)));
  }
  Tensor x = phase_encode(cfg, w, y1, y2, x_pld);
  std::vector<Tensor> skips;
  for (std::size_t i = 0; i < 3; ++i) {
    const std::string p = "enc" + std::to_string(i);
    x = downsample(cfg, w, x, i);
    x = tfcm_forward(cfg, w, p + ".tfcm", x);
    x = gcafa_forward(w, p + ".gcafa", x);
    skips.push_back(x);
  }
  for (std::size_t b = 0; b < cfg.backbone_blocks; ++b) {
    const std::string p = "bb" + std::to_string(b);
    x = tfcm_forward(cfg, w, p + ".tfcm0", x);
    x = tfcm_forward(cfg, w, p + ".tfcm1", x);
    x = gcafa_forward(w, p + ".gcafa", x);
  }
  for (std::size_t i = 0; i < 3; ++i) {
    const std::string p = "dec" + std::to_string(i);
    x = upsample(cfg, w, x, i, skips[2 - i]);
    x = tfcm_forward(cfg, w, p + ".tfcm", x);
    x = gcafa_forward(w, p + ".gcafa", x);
  }
  const MeaHeads heads = mea_heads(cfg, w, x);
  return mea_apply(heads.taps, heads.cs, y1);
}

// Multiply-accumulates per second of 16 kHz audio for one forward pass.
inline double macs_per_second(const ModelConfig& cfg, const ModelWeights& w, std::size_t frames = 63) {
  nn::NoGradGuard guard;
  const Tensor z = Tensor::full({1, 2, cfg.fft_bins, frames}, 1e-3);
  const std::size_t before = nn::detail::mac_counter();
  (void)model_forward(cfg, w, z, z, z);
  const double macs = static_cast<double>(nn::detail::mac_counter() - before);
  const double seconds = static_cast<double>(frames) * 256.0 / 16000.0;
  return macs / seconds;
}

// Checkpoint I/O with the config manifest; loading validates names and shapes.
inline void save_model(const std::string& path, const ModelConfig& cfg, const ModelWeights& w) {
  save_checkpoint(path, nn::Checkpoint{cfg.to_manifest(), w.params()});
}

struct LoadedModel {
  ModelConfig config;
  ModelWeights weights;
};

inline LoadedModel load_model(const std::string& path) {
  auto ck = nn::load_checkpoint(path);
  LoadedModel m{ModelConfig::from_manifest(ck.manifest), {}};
  const auto ref = init_weights(m.config, 0);
  if (ck.tensors.size() != ref.params().size()) {
    throw InvalidInput(path + ": checkpoint has " + std::to_string(ck.tensors.size()) + " tensors, model needs " +
                       std::to_string(ref.params().size()));
  }
  for (std::size_t i = 0; i < ck.tensors.size(); ++i) {
    const auto& want = ref.params()[i];
    auto& got = ck.tensors[i];
    if (got.name != want.name || got.tensor.shape() != want.tensor.shape()) {
      throw InvalidInput(path + ": tensor " + got.name + " does not match model layout (" + want.name + ")");
    }
    m.weights.add(got.name, got.tensor);
  }
  return m;
}

// ---- losses on waveforms [B, N]; each returns the batch mean ----

inline constexpr double kLossEps = 1e-8;
// Per-bin floor of the relative spectral term, as a fraction of the mean bin power.
inline constexpr double kDefaultBinFloor = 1e-6;

inline void require_pair(const Tensor& est, const Tensor& ref, const char* what) {
  if (est.ndim() != 2 || est.shape() != ref.shape() || est.dim(1) == 0) {
    throw ShapeError(std::string(what) + ": expected equal [B,N] waveforms, got " + nn::shape_str(est.shape()) +
                     " and " + nn::shape_str(ref.shape()));
  }
}

inline Tensor loss_wave(const Tensor& est, const Tensor& ref) {
  require_pair(est, ref, "loss_wave");
  const std::size_t b = ref.dim(0), n = ref.dim(1);
  std::vector<double> wts(b * n);
  for (std::size_t r = 0; r < b; ++r) {
    double l1 = 0.0;
    for (std::size_t i = 0; i < n; ++i) l1 += std::abs(ref.data()[r * n + i]);
    std::fill_n(wts.begin() + static_cast<std::ptrdiff_t>(r * n), n, 1.0 / ((l1 + kLossEps) * static_cast<double>(b)));
  }
  return nn::sum(nn::mul(nn::abs(nn::sub(est, ref.detach())), Tensor::from_data(ref.shape(), std::move(wts))));
}

inline const std::vector<std::size_t>& spectral_resolutions() {
  static const std::vector<std::size_t> k{64, 128, 256, 512, 1024, 2048};
  return k;
}

struct SpectralTerms {
  Tensor term1;
  Tensor term2;
};

// Both terms of the spectral loss at one resolution (window K, hop K/4).
inline SpectralTerms spectral_terms(const Tensor& est, const Tensor& ref, std::size_t k,
                                    double bin_floor = kDefaultBinFloor) {
  require_pair(est, ref, "loss_spec");
  const StftConfig cfg(k, k / 4, k);
  const Tensor xr = nn::stft_op(ref.detach(), cfg);
  const Tensor d = nn::sub(nn::stft_op(est, cfg), xr);
  const std::size_t b = xr.dim(0), f = xr.dim(2), t = xr.dim(3), plane = f * t;
  std::vector<double> w1(xr.numel()), w2(xr.numel());
  const auto x = xr.data();
  for (std::size_t n = 0; n < b; ++n) {
    const double* re = x.data() + (n * 2) * plane;
    const double* im = re + plane;
    double total = 0.0;
    for (std::size_t i = 0; i < plane; ++i) total += re[i] * re[i] + im[i] * im[i];
    const double eps_bin = bin_floor * total / static_cast<double>(plane) + 1e-12;
    const double inv_b = 1.0 / static_cast<double>(b);
    for (std::size_t i = 0; i < plane; ++i) {
      const double wb = inv_b / (re[i] * re[i] + im[i] * im[i] + eps_bin);
      const double wt = inv_b / (total + kLossEps);
      w1[(n * 2) * plane + i] = w1[(n * 2 + 1) * plane + i] = wt;
      w2[(n * 2) * plane + i] = w2[(n * 2 + 1) * plane + i] = wb;
    }
  }
  const Tensor sq = nn::square(d);
  return {nn::sum(nn::mul(sq, Tensor::from_data(xr.shape(), std::move(w1)))),
          nn::sum(nn::mul(sq, Tensor::from_data(xr.shape(), std::move(w2))))};
}

inline Tensor loss_spec(const Tensor& est, const Tensor& ref, double bin_floor = kDefaultBinFloor) {
  Tensor total;
  for (std::size_t k : spectral_resolutions()) {
    const auto t = spectral_terms(est, ref, k, bin_floor);
    const Tensor both = nn::add(t.term1, t.term2);
    total = total.defined() ? nn::add(total, both) : both;
  }
  return total;
}

inline Tensor loss_total(const Tensor& est, const Tensor& ref, double alpha = 1.0,
                         double bin_floor = kDefaultBinFloor) {
  const Tensor wave = loss_wave(est, ref);
  if (alpha == 0.0) return wave;
  return nn::add(wave, nn::scale(loss_spec(est, ref, bin_floor), alpha));
}

}  // namespace pldnet::model
