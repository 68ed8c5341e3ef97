#pragma once

#include <string>
#include <vector>

#include "pldnet/audio.hpp"
#include "pldnet/model.hpp"
#include "pldnet/pld.hpp"
#include "pldnet/stft.hpp"

namespace pldnet {

// pld: pre-filter only. net: network on raw spectra, with Y1 standing in for
// the guidance input. full: network guided by the pre-filter output.
enum class EnhanceMode { kPld, kNet, kFull };

inline std::string mode_name(EnhanceMode m) {
  switch (m) {
    case EnhanceMode::kPld: return "pld";
    case EnhanceMode::kNet: return "net";
    case EnhanceMode::kFull: return "full";
  }
  return "?";
}

inline EnhanceMode parse_mode(const std::string& s) {
  if (s == "pld") return EnhanceMode::kPld;
  if (s == "net") return EnhanceMode::kNet;
  if (s == "full") return EnhanceMode::kFull;
  throw ConfigError("mode: expected pld, net or full, got '" + s + "'");
}

struct PipelineConfig {
  StftConfig stft;
  pld::PldConstants pld;
  pld::OmlsaParams omlsa;
  NoiseTrackerParams tracker;
};

inline void require_stereo(const AudioBuffer& mix) {
  if (mix.channels() != 2) {
    throw InvalidInput("expected 2 channels (primary, secondary), got " + std::to_string(mix.channels()));
  }
  require_pipeline_rate(mix);
  if (mix.empty()) throw InvalidInput("empty input audio");
}

inline nn::Tensor spectrum_tensor(const ComplexSpectrogram& s, std::size_t channel) {
  return nn::spectrogram_to_tensor(s.channel(channel));
}

// Network inputs for one stereo clip, each [1, 2, F, T].
struct PreparedInput {
  nn::Tensor y1, y2, guide;
  std::size_t num_samples = 0;
  std::size_t padded_len = 0;
};

inline PreparedInput prepare_input(const AudioBuffer& mix, EnhanceMode mode, const PipelineConfig& cfg = {}) {
  require_stereo(mix);
  const AudioBuffer padded = pad_for_analysis(mix, cfg.stft);
  const ComplexSpectrogram y = stft(padded, cfg.stft);
  PreparedInput p;
  p.y1 = spectrum_tensor(y, 0);
  p.y2 = spectrum_tensor(y, 1);
  if (mode == EnhanceMode::kNet) {
    p.guide = p.y1;
  } else {
    const auto r = pld::pld_process_stream(y, cfg.pld, cfg.omlsa, cfg.tracker, false);
    p.guide = nn::spectrogram_to_tensor(r.x_pld);
  }
  p.num_samples = mix.num_samples();
  p.padded_len = padded.num_samples();
  return p;
}

// Stacks equally sized prepared inputs along the batch axis.
inline PreparedInput stack_inputs(const std::vector<const PreparedInput*>& items) {
  if (items.empty()) throw InvalidInput("stack_inputs: nothing to stack");
  auto cat = [&](auto member) {
    const nn::Shape s0 = (items[0]->*member).shape();
    std::vector<double> d;
    for (const auto* it : items) {
      const auto& t = it->*member;
      if (t.shape() != s0) throw ShapeError("stack_inputs: clip lengths differ");
      d.insert(d.end(), t.data().begin(), t.data().end());
    }
    nn::Shape s = s0;
    s[0] = items.size();
    return nn::Tensor::from_data(s, std::move(d));
  };
  PreparedInput out;
  out.y1 = cat(&PreparedInput::y1);
  out.y2 = cat(&PreparedInput::y2);
  out.guide = cat(&PreparedInput::guide);
  out.num_samples = items[0]->num_samples;
  out.padded_len = items[0]->padded_len;
  return out;
}

// Waveforms [B, num_samples] produced by the network for prepared inputs.
inline nn::Tensor network_waveform(const model::ModelConfig& mc, const model::ModelWeights& w,
                                   const PreparedInput& in, const StftConfig& stft_cfg) {
  const nn::Tensor spec = model::model_forward(mc, w, in.y1, in.y2, in.guide);
  return nn::slice_last(nn::istft_op(spec, stft_cfg, in.padded_len), 0, in.num_samples);
}

// Pre-filter only; optional per-frame trace of the internal quantities.
inline AudioBuffer enhance_pld(const AudioBuffer& mix, const PipelineConfig& cfg = {},
                               std::vector<pld::PldFrameState>* trace = nullptr) {
  require_stereo(mix);
  const AudioBuffer padded = pad_for_analysis(mix, cfg.stft);
  const auto r = pld::pld_process_stream(stft(padded, cfg.stft), cfg.pld, cfg.omlsa, cfg.tracker, trace != nullptr);
  if (trace != nullptr) *trace = r.trace;
  auto out = istft_rows(r.x_pld, cfg.stft, padded.num_samples());
  out.resize(mix.num_samples());
  return AudioBuffer::mono(std::move(out));
}

inline AudioBuffer enhance_net(const AudioBuffer& mix, EnhanceMode mode, const model::ModelConfig& mc,
                               const model::ModelWeights& w, const PipelineConfig& cfg = {}) {
  if (mode == EnhanceMode::kPld) throw ConfigError("enhance_net: mode must be net or full");
  nn::NoGradGuard guard;
  const PreparedInput in = prepare_input(mix, mode, cfg);
  const nn::Tensor y = network_waveform(mc, w, in, cfg.stft);
  return AudioBuffer::mono(y.vec());
}

}  // namespace pldnet
