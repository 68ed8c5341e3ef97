#pragma once

#include <charconv>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "pldnet/error.hpp"
#include "pldnet/model.hpp"
#include "pldnet/nn/optim.hpp"
#include "pldnet/pipeline.hpp"

namespace pldnet {

// Everything a run depends on. Text form: one `key = value` per line, `#`
// starts a comment. Unknown keys and unparsable values raise ConfigError
// naming the field.
struct RunConfig {
  EnhanceMode mode = EnhanceMode::kPld;
  std::size_t stft_win_len = 512;
  std::size_t stft_hop = 256;
  std::size_t stft_fft_size = 512;
  PipelineConfig pipeline;  // stft is rebuilt from the three fields above
  model::ModelConfig model;
  nn::OptimizerConfig optimizer;
  std::size_t train_steps = 500;
  double loss_alpha = 1.0;
  double loss_bin_floor = model::kDefaultBinFloor;
  std::uint64_t seed = 0;
  std::size_t threads = 1;

  void set(const std::string& key, const std::string& value);
  std::string get(const std::string& key) const;
  static const std::vector<std::string>& keys();

  PipelineConfig pipeline_config() const {
    PipelineConfig p = pipeline;
    p.stft = StftConfig(stft_win_len, stft_hop, stft_fft_size);
    return p;
  }

  void validate() const {
    const StftConfig stft = pipeline_config().stft;
    pipeline.pld.validate(stft.bins());
    pipeline.omlsa.validate();
    pipeline.tracker.validate();
    model.validate();
    optimizer.validate();
    if (model.fft_bins != stft.bins()) {
      throw ConfigError("model.fft_bins (" + std::to_string(model.fft_bins) + ") must equal stft bins (" +
                        std::to_string(stft.bins()) + ")");
    }
    if (!(loss_bin_floor > 0.0)) throw ConfigError("loss.bin_floor must be positive");
    if (threads == 0) throw ConfigError("threads must be positive");
  }

  std::string to_text() const {
    std::ostringstream os;
    for (const auto& k : keys()) os << k << " = " << get(k) << "\n";
    return os.str();
  }

  void load_text(const std::string& text, const std::string& origin = "config") {
    std::istringstream is(text);
    std::string line;
    std::size_t no = 0;
    while (std::getline(is, line)) {
      ++no;
      if (const auto h = line.find('#'); h != std::string::npos) line.erase(h);
      const auto eq = line.find('=');
      auto trim = [](std::string s) {
        const auto a = s.find_first_not_of(" \t\r");
        const auto b = s.find_last_not_of(" \t\r");
        return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
      };
      if (trim(line).empty()) continue;
      if (eq == std::string::npos) {
        throw ConfigError(origin + ":" + std::to_string(no) + ": expected key = value");
      }
      set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
  }

  void load_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    load_text(ss.str(), path);
  }
};

namespace detail {

struct ConfigField {
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <typename T>
T parse_value(const std::string& key, const std::string& v) {
  std::istringstream is(v);
  T out{};
  if constexpr (std::is_same_v<T, bool>) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError("config " + key + ": expected true/false, got '" + v + "'");
  } else if constexpr (std::is_unsigned_v<T>) {
    if (v.empty() || v[0] == '-') throw ConfigError("config " + key + ": expected a non-negative integer, got '" + v + "'");
    unsigned long long x = 0;
    is >> x;
    out = static_cast<T>(x);
  } else {
    is >> out;
  }
  if (is.fail() || !(is >> std::ws).eof()) {
    throw ConfigError("config " + key + ": cannot parse '" + v + "'");
  }
  return out;
}

template <typename T>
std::string format_value(const T& v) {
  if constexpr (std::is_same_v<T, bool>) {
    return v ? "true" : "false";
  } else if constexpr (std::is_floating_point_v<T>) {
    // Shortest text that parses back to the same value.
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
  } else {
    return std::to_string(v);
  }
}

// Binds a config key to a member reached through `access`.
template <typename Access>
ConfigField field(const std::string& key, Access access) {
  using T = std::remove_reference_t<decltype(access(std::declval<RunConfig&>()))>;
  return {[key, access](RunConfig& c, const std::string& v) { access(c) = parse_value<T>(key, v); },
          [access](const RunConfig& c) { return format_value(access(const_cast<RunConfig&>(c))); }};
}

inline const std::vector<std::pair<std::string, ConfigField>>& config_fields() {
  static const std::vector<std::pair<std::string, ConfigField>> fields = [] {
    std::vector<std::pair<std::string, ConfigField>> f;
    auto add = [&](const std::string& key, auto access) { f.emplace_back(key, field(key, access)); };
    f.emplace_back("mode", ConfigField{[](RunConfig& c, const std::string& v) { c.mode = parse_mode(v); },
                                       [](const RunConfig& c) { return mode_name(c.mode); }});
    add("stft.win_len", [](RunConfig& c) -> auto& { return c.stft_win_len; });
    add("stft.hop", [](RunConfig& c) -> auto& { return c.stft_hop; });
    add("stft.fft_size", [](RunConfig& c) -> auto& { return c.stft_fft_size; });
    add("pld.k_low", [](RunConfig& c) -> auto& { return c.pipeline.pld.k_low; });
    add("pld.k_high", [](RunConfig& c) -> auto& { return c.pipeline.pld.k_high; });
    add("pld.gamma_thresh", [](RunConfig& c) -> auto& { return c.pipeline.pld.gamma_thresh; });
    add("pld.psi_tilde_thresh", [](RunConfig& c) -> auto& { return c.pipeline.pld.psi_tilde_thresh; });
    add("pld.kappa_low", [](RunConfig& c) -> auto& { return c.pipeline.pld.kappa_low; });
    add("pld.kappa_high", [](RunConfig& c) -> auto& { return c.pipeline.pld.kappa_high; });
    add("pld.gamma_low", [](RunConfig& c) -> auto& { return c.pipeline.pld.gamma_low; });
    add("pld.gamma_high", [](RunConfig& c) -> auto& { return c.pipeline.pld.gamma_high; });
    add("omlsa.dd_alpha", [](RunConfig& c) -> auto& { return c.pipeline.omlsa.dd_alpha; });
    add("omlsa.xi_min", [](RunConfig& c) -> auto& { return c.pipeline.omlsa.xi_min; });
    add("omlsa.g_min", [](RunConfig& c) -> auto& { return c.pipeline.omlsa.g_min; });
    add("omlsa.q_max", [](RunConfig& c) -> auto& { return c.pipeline.omlsa.q_max; });
    add("tracker.alpha_s", [](RunConfig& c) -> auto& { return c.pipeline.tracker.alpha_s; });
    add("tracker.alpha_d", [](RunConfig& c) -> auto& { return c.pipeline.tracker.alpha_d; });
    add("tracker.sub_window_len", [](RunConfig& c) -> auto& { return c.pipeline.tracker.sub_window_len; });
    add("tracker.num_sub_windows", [](RunConfig& c) -> auto& { return c.pipeline.tracker.num_sub_windows; });
    add("tracker.bias_comp", [](RunConfig& c) -> auto& { return c.pipeline.tracker.bias_comp; });
    add("tracker.absence_zeta", [](RunConfig& c) -> auto& { return c.pipeline.tracker.absence_zeta; });
    add("tracker.lambda_floor", [](RunConfig& c) -> auto& { return c.pipeline.tracker.lambda_floor; });
    add("model.pe_out_ch", [](RunConfig& c) -> auto& { return c.model.pe_out_ch; });
    f.emplace_back("model.enc_channels",
                   ConfigField{[](RunConfig& c, const std::string& v) {
                                 std::vector<std::size_t> ch;
                                 std::istringstream is(v);
                                 for (std::string part; std::getline(is, part, ',');) {
                                   ch.push_back(parse_value<std::size_t>("model.enc_channels", part));
                                 }
                                 c.model.enc_channels = ch;
                               },
                               [](const RunConfig& c) {
                                 std::string s;
                                 for (std::size_t i = 0; i < c.model.enc_channels.size(); ++i) {
                                   s += (i ? "," : "") + std::to_string(c.model.enc_channels[i]);
                                 }
                                 return s;
                               }});
    add("model.pe_kernel_t", [](RunConfig& c) -> auto& { return c.model.pe_kernel_t; });
    add("model.pe_power", [](RunConfig& c) -> auto& { return c.model.pe_power; });
    add("model.dc_kernel", [](RunConfig& c) -> auto& { return c.model.dc_kernel; });
    add("model.dc_stride", [](RunConfig& c) -> auto& { return c.model.dc_stride; });
    add("model.dc_pad", [](RunConfig& c) -> auto& { return c.model.dc_pad; });
    add("model.tfcm_depth", [](RunConfig& c) -> auto& { return c.model.tfcm_depth; });
    add("model.tfcm_kernel", [](RunConfig& c) -> auto& { return c.model.tfcm_kernel; });
    add("model.tfcm_norm", [](RunConfig& c) -> auto& { return c.model.tfcm_norm; });
    add("model.backbone_blocks", [](RunConfig& c) -> auto& { return c.model.backbone_blocks; });
    add("model.mea_taps", [](RunConfig& c) -> auto& { return c.model.mea_taps; });
    add("model.fft_bins", [](RunConfig& c) -> auto& { return c.model.fft_bins; });
    f.emplace_back("train.optimizer",
                   ConfigField{[](RunConfig& c, const std::string& v) { c.optimizer.kind = nn::parse_optimizer(v); },
                               [](const RunConfig& c) {
                                 return std::string(c.optimizer.kind == nn::OptimizerKind::kAdam ? "adam" : "novograd");
                               }});
    add("train.lr", [](RunConfig& c) -> auto& { return c.optimizer.lr; });
    add("train.beta1", [](RunConfig& c) -> auto& { return c.optimizer.beta1; });
    add("train.beta2", [](RunConfig& c) -> auto& { return c.optimizer.beta2; });
    add("train.weight_decay", [](RunConfig& c) -> auto& { return c.optimizer.weight_decay; });
    add("train.steps", [](RunConfig& c) -> auto& { return c.train_steps; });
    add("loss.alpha", [](RunConfig& c) -> auto& { return c.loss_alpha; });
    add("loss.bin_floor", [](RunConfig& c) -> auto& { return c.loss_bin_floor; });
    add("seed", [](RunConfig& c) -> auto& { return c.seed; });
    add("threads", [](RunConfig& c) -> auto& { return c.threads; });
    return f;
  }();
  return fields;
}

inline const ConfigField& find_field(const std::string& key) {
  for (const auto& [k, f] : config_fields()) {
    if (k == key) return f;
  }
  throw ConfigError("config: unknown key '" + key + "'");
}

}  // namespace detail

inline void RunConfig::set(const std::string& key, const std::string& value) {
  try {
    detail::find_field(key).set(*this, value);
  } catch (const ConfigError& e) {
    const std::string what = e.what();
    throw ConfigError(what.find(key) == std::string::npos ? "config " + key + ": " + what : what);
  }
}

inline std::string RunConfig::get(const std::string& key) const { return detail::find_field(key).get(*this); }

inline const std::vector<std::string>& RunConfig::keys() {
  static const std::vector<std::string> k = [] {
    std::vector<std::string> out;
    for (const auto& [name, f] : detail::config_fields()) out.push_back(name);
    return out;
  }();
  return k;
}

}  // namespace pldnet
