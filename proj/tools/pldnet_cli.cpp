#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "pldnet/checks.hpp"
#include "pldnet/config.hpp"
#include "pldnet/dataset.hpp"
#include "pldnet/metrics.hpp"
#include "pldnet/parallel.hpp"
#include "pldnet/pipeline.hpp"
#include "pldnet/sim.hpp"
#include "pldnet/synth.hpp"
#include "pldnet/train.hpp"
#include "pldnet/wav.hpp"

namespace fs = std::filesystem;
using namespace pldnet;

namespace {

// Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

struct Common {
  std::string config_file;
  std::vector<std::string> overrides;
  std::optional<std::size_t> threads;
};

// Defaults, then the config file, then --set pairs, then dedicated flags.
RunConfig resolve_config(const Common& c, const std::vector<std::pair<std::string, std::string>>& flags = {}) {
  RunConfig cfg;
  if (!c.config_file.empty()) cfg.load_file(c.config_file);
  for (const auto& kv : c.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  for (const auto& [k, v] : flags) cfg.set(k, v);
  if (c.threads) cfg.threads = *c.threads;
  cfg.validate();
  return cfg;
}

void write_sidecar(const std::string& output, const RunConfig& cfg) {
  const std::string path = output + ".config.txt";
  std::ofstream out(path);
  if (!out) throw InvalidInput("cannot write " + path);
  out << "# effective configuration; rerun with --config " << path << "\n" << cfg.to_text();
}

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config_file, "Flat key = value config file")->check(CLI::ExistingFile);
  sub->add_option("--set", c.overrides, "Override one config key (key=value); repeatable");
  sub->add_option("--threads", c.threads, "Worker threads for per-file work");
}



void write_trace(const std::string& path, const std::vector<pld::PldFrameState>& trace) {
  std::ofstream out(path);
  if (!out) throw InvalidInput("cannot write " + path);
  out << std::setprecision(10) << "frame,psi_tilde,mean_gain,mean_qhat\n";
  for (std::size_t l = 0; l < trace.size(); ++l) {
    const auto& s = trace[l];
    double g = 0.0, q = 0.0;
    for (double v : s.gain) g += v;
    for (double v : s.q_hat) q += v;
    const auto n = static_cast<double>(s.gain.size());
    out << l << ',' << s.psi_tilde << ',' << g / n << ',' << q / n << '\n';
  }
}

// Enhancer for one mode; network modes take the model layout from the checkpoint.
struct Enhancer {
  RunConfig cfg;
  std::optional<model::LoadedModel> net;

  Enhancer(RunConfig c, const std::string& checkpoint) : cfg(std::move(c)) {
    if (cfg.mode != EnhanceMode::kPld) {
      if (checkpoint.empty()) throw ConfigError("mode " + mode_name(cfg.mode) + " needs --checkpoint");
      net = model::load_model(checkpoint);
      cfg.model = net->config;
    }
  }

  AudioBuffer operator()(const AudioBuffer& mix, std::vector<pld::PldFrameState>* trace = nullptr) const {
    const PipelineConfig pc = cfg.pipeline_config();
    if (cfg.mode == EnhanceMode::kPld) return enhance_pld(mix, pc, trace);
    require_stereo(mix);
    if (trace != nullptr) (void)enhance_pld(mix, pc, trace);
    return enhance_net(mix, cfg.mode, net->config, net->weights, pc);
  }
};

int run_selftest(bool quick) {
  std::vector<checks::CheckResult> results;
  results.push_back(checks::pld_bounds_suite());
  results.push_back(checks::dsp_fidelity_suite());
  results.push_back(checks::causality_suite());
  results.push_back(checks::gradient_suite(!quick));
  bool ok = true;
  for (const auto& r : results) {
    std::cout << (r.passed ? "PASS " : "FAIL ") << r.name << ": " << r.detail << "\n";
    ok = ok && r.passed;
  }
  std::cout << (ok ? "selftest passed" : "selftest failed") << std::endl;
  return ok ? 0 : kExitRuntime;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dual-microphone speech enhancement: PLD pre-filter, U-Net enhancer, scene simulator, evaluation"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "pldnet 0.1");

  // simulate
  Common sim_c;
  std::size_t sim_scenes = 0;
  std::uint64_t sim_seed = 0;
  std::string sim_speech, sim_noise, sim_out;
  std::optional<std::size_t> sim_interferers;
  std::optional<double> sim_rt60, sim_snr, sim_sir;
  double sim_seconds = 2.0;
  auto* simulate = app.add_subcommand("simulate", "Render a simulated two-microphone corpus with manifest.csv");
  add_common(simulate, sim_c);
  simulate->add_option("--scenes", sim_scenes, "Number of scenes")->required();
  simulate->add_option("--seed", sim_seed, "Corpus seed");
  simulate->add_option("--speech", sim_speech, "Directory of mono speech WAVs")->required();
  simulate->add_option("--noise", sim_noise, "Directory of mono noise WAVs")->required();
  simulate->add_option("--out", sim_out, "Output directory")->required();
  simulate->add_option("--interferers", sim_interferers, "Interfering talkers per scene (default 4)");
  simulate->add_option("--rt60", sim_rt60, "Fix RT60 in seconds [0.2, 0.5]");
  simulate->add_option("--snr", sim_snr, "Fix SNR in dB [0, 20]");
  simulate->add_option("--sir", sim_sir, "Fix SIR in dB [0, 20]");
  simulate->add_option("--clip-seconds", sim_seconds, "Speech excerpt length in seconds");

  // enhance
  Common enh_c;
  std::optional<std::string> enh_mode;
  std::string enh_in, enh_out, enh_ckpt, enh_trace;
  auto* enhance = app.add_subcommand("enhance", "Enhance a stereo WAV (channel 0 = primary mic) or a directory of them");
  add_common(enhance, enh_c);
  enhance->add_option("--mode", enh_mode, "pld, net or full")->check(CLI::IsMember({"pld", "net", "full"}));
  enhance->add_option("--in", enh_in, "Input WAV or directory")->required();
  enhance->add_option("--out", enh_out, "Output WAV or directory")->required();
  enhance->add_option("--checkpoint", enh_ckpt, "Model checkpoint for net and full modes");
  enhance->add_option("--dump-trace", enh_trace, "Per-frame pre-filter trace CSV (single-file input)");

  // train
  Common tr_c;
  std::string tr_data, tr_out, tr_log;
  std::optional<std::size_t> tr_steps;
  std::optional<std::uint64_t> tr_seed;
  std::optional<std::string> tr_mode;
  auto* train = app.add_subcommand("train", "Train the network on a simulated corpus (full-batch)");
  add_common(train, tr_c);
  train->add_option("--data", tr_data, "Corpus directory containing manifest.csv")->required();
  train->add_option("--out", tr_out, "Checkpoint path")->required();
  train->add_option("--steps", tr_steps, "Optimizer steps");
  train->add_option("--seed", tr_seed, "Initialization seed");
  train->add_option("--mode", tr_mode, "net or full")->check(CLI::IsMember({"net", "full"}));
  train->add_option("--log", tr_log, "Loss curve CSV (step,loss)");

  // eval
  Common ev_c;
  std::string ev_manifest, ev_ckpt, ev_out;
  std::optional<std::string> ev_mode;
  auto* eval = app.add_subcommand("eval", "Score an enhancement mode on a manifest (SI-SDR, segmental SNR)");
  add_common(eval, ev_c);
  eval->add_option("--manifest", ev_manifest, "Manifest CSV")->required()->check(CLI::ExistingFile);
  eval->add_option("--mode", ev_mode, "pld, net or full")->check(CLI::IsMember({"pld", "net", "full"}));
  eval->add_option("--checkpoint", ev_ckpt, "Model checkpoint for net and full modes");
  eval->add_option("--out", ev_out, "Report CSV")->required();

  // rir
  double rir_dist = 1.0, rir_rt60 = 0.3;
  std::string rir_out, rir_abs = "fitted";
  auto* rir = app.add_subcommand("rir", "Write one image-method room impulse response as a mono WAV");
  rir->add_option("--dist", rir_dist, "Source-microphone distance in metres")->required();
  rir->add_option("--rt60", rir_rt60, "Reverberation time in seconds")->required();
  rir->add_option("--out", rir_out, "Output WAV")->required();
  rir->add_option("--absorption", rir_abs, "fitted, sabine or eyring")
      ->check(CLI::IsMember({"fitted", "sabine", "eyring"}));

  // selftest
  bool st_quick = false;
  auto* selftest = app.add_subcommand("selftest", "Run the invariant suites and print pass/fail");
  selftest->add_flag("--quick", st_quick, "Skip the composed-network gradient check");

  // synth
  std::size_t sy_speech = 4, sy_noise = 2;
  double sy_seconds = 2.0;
  std::uint64_t sy_seed = 0;
  std::string sy_out;
  auto* synth_cmd = app.add_subcommand("synth", "Write a synthetic speech and noise corpus for demos and tests");
  synth_cmd->add_option("--speech", sy_speech, "Number of speech clips");
  synth_cmd->add_option("--noise", sy_noise, "Number of noise clips");
  synth_cmd->add_option("--seconds", sy_seconds, "Clip length in seconds");
  synth_cmd->add_option("--seed", sy_seed, "Seed");
  synth_cmd->add_option("--out", sy_out, "Output directory (speech/ and noise/ are created)")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    (void)app.exit(e);
    return kExitUsage;
  }

  try {
    if (*simulate) {
      const RunConfig cfg = resolve_config(sim_c);
      DatasetOptions o;
      o.clip_seconds = sim_seconds;
      o.threads = cfg.threads;
      if (sim_interferers) o.layout.num_interferers = *sim_interferers;
      o.overrides.rt60 = sim_rt60;
      o.overrides.snr_db = sim_snr;
      o.overrides.sir_db = sim_sir;
      const Manifest m = build_dataset(sim_scenes, sim_speech, sim_noise, sim_out, sim_seed, o);
      write_sidecar((fs::path(sim_out) / "manifest.csv").string(), cfg);
      std::cout << "wrote " << m.rows.size() << " scenes to " << sim_out << "\n";
      return 0;
    }
    if (*enhance) {
      std::vector<std::pair<std::string, std::string>> flags;
      if (enh_mode) flags.emplace_back("mode", *enh_mode);
      const Enhancer enh(resolve_config(enh_c, flags), enh_ckpt);
      if (fs::is_directory(enh_in)) {
        if (!enh_trace.empty()) throw ConfigError("--dump-trace needs a single input file");
        fs::create_directories(enh_out);
        std::vector<std::string> files = list_wavs(enh_in);
        parallel_for(files.size(), enh.cfg.threads, [&](std::size_t i) {
          const auto out = (fs::path(enh_out) / fs::path(files[i]).filename()).string();
          wav::write(out, enh(wav::read(files[i])));
        });
        write_sidecar((fs::path(enh_out) / "enhance").string(), enh.cfg);
        std::cout << "enhanced " << files.size() << " files into " << enh_out << "\n";
      } else {
        std::vector<pld::PldFrameState> trace;
        const AudioBuffer out = enh(wav::read(enh_in), enh_trace.empty() ? nullptr : &trace);
        wav::write(enh_out, out);
        if (!enh_trace.empty()) write_trace(enh_trace, trace);
        write_sidecar(enh_out, enh.cfg);
      }
      return 0;
    }
    if (*train) {
      std::vector<std::pair<std::string, std::string>> flags;
      if (tr_steps) flags.emplace_back("train.steps", std::to_string(*tr_steps));
      if (tr_seed) flags.emplace_back("seed", std::to_string(*tr_seed));
      if (tr_mode) flags.emplace_back("mode", *tr_mode);
      RunConfig cfg = resolve_config(tr_c, flags);
      if (!tr_mode && cfg.mode == EnhanceMode::kPld) cfg.mode = EnhanceMode::kFull;
      if (cfg.mode == EnhanceMode::kPld) throw ConfigError("mode: training needs net or full");
      const Manifest m = read_manifest((fs::path(tr_data) / "manifest.csv").string());
      std::vector<train::TrainExample> data;
      for (const auto& r : m.rows) {
        AudioBuffer mix = wav::read(m.resolve(r.mix_path));
        AudioBuffer target = wav::read(m.resolve(r.target_path));
        const std::size_t n = std::min(mix.num_samples(), target.num_samples());
        if (mix.num_samples() != n || target.num_samples() != n) {
          throw InvalidInput(r.scene_id + ": mixture and target lengths differ");
        }
        data.push_back({std::move(mix), std::move(target)});
      }
      train::TrainOptions o;
      o.steps = cfg.train_steps;
      o.seed = cfg.seed;
      o.mode = cfg.mode;
      o.alpha = cfg.loss_alpha;
      o.bin_floor = cfg.loss_bin_floor;
      o.model = cfg.model;
      o.optimizer = cfg.optimizer;
      o.pipeline = cfg.pipeline_config();
      std::ofstream log;
      if (!tr_log.empty()) {
        log.open(tr_log);
        if (!log) throw InvalidInput("cannot write " + tr_log);
        log << std::setprecision(17) << "step,loss\n";
      }
      o.on_step = [&](std::size_t s, double loss) {
        if (log.is_open()) log << s << ',' << loss << '\n';
        if (s % 10 == 0) std::cout << "step " << s << " loss " << loss << std::endl;
      };
      const auto r = train::train_toy(data, o);
      if (log.is_open()) log << o.steps << ',' << r.final_loss << '\n';
      model::save_model(tr_out, cfg.model, r.weights);
      write_sidecar(tr_out, cfg);
      std::cout << "initial loss " << r.initial_loss << ", final loss " << r.final_loss << "\n";
      return 0;
    }
    if (*eval) {
      std::vector<std::pair<std::string, std::string>> flags;
      if (ev_mode) flags.emplace_back("mode", *ev_mode);
      const Enhancer enh(resolve_config(ev_c, flags), ev_ckpt);
      const Manifest m = read_manifest(ev_manifest);
      const auto rep = metrics::evaluate_manifest(
          m, [&](const AudioBuffer& mix) { return enh(mix); }, ev_out, enh.cfg.threads);
      write_sidecar(ev_out, enh.cfg);
      for (const auto& row : rep.rows) {
        if (!row.error.empty()) std::cerr << "warning: " << row.file_id << ": " << row.error << "\n";
      }
      std::cout << std::fixed << std::setprecision(3) << "evaluated " << rep.evaluated << "/" << rep.rows.size()
                << " files: si_sdr_in " << rep.mean_si_sdr_in << " dB, si_sdr_out " << rep.mean_si_sdr_out
                << " dB, delta " << rep.mean_delta << " dB\n";
      return 0;
    }
    if (*rir) {
      sim::RoomSpec room;
      room.rt60 = rir_rt60;
      room.absorption = rir_abs == "sabine"   ? sim::AbsorptionModel::kSabine
                        : rir_abs == "eyring" ? sim::AbsorptionModel::kEyring
                                              : sim::AbsorptionModel::kFitted;
      const sim::Vec3 src{room.dims.x / 2, room.dims.y / 2, 1.5};
      const auto h = sim::image_method_rir(room, src, src + sim::Vec3{rir_dist, 0.0, 0.0});
      wav::write(rir_out, AudioBuffer::mono(h.taps));
      std::cout << "wrote " << h.taps.size() << " taps to " << rir_out << "\n";
      return 0;
    }
    if (*selftest) return run_selftest(st_quick);
    if (*synth_cmd) {
      const fs::path sp = fs::path(sy_out) / "speech", nz = fs::path(sy_out) / "noise";
      fs::create_directories(sp);
      fs::create_directories(nz);
      for (std::size_t i = 0; i < sy_speech; ++i) {
        std::ostringstream name;
        name << "speech_" << std::setw(3) << std::setfill('0') << i << ".wav";
        wav::write((sp / name.str()).string(), AudioBuffer::mono(synth::speech(sy_seed * 1000 + i, sy_seconds)));
      }
      const synth::NoiseKind kinds[] = {synth::NoiseKind::kPink, synth::NoiseKind::kBabble,
                                        synth::NoiseKind::kBrown, synth::NoiseKind::kHum};
      for (std::size_t i = 0; i < sy_noise; ++i) {
        const auto kind = kinds[i % 4];
        std::ostringstream name;
        name << "noise_" << std::setw(3) << std::setfill('0') << i << "_" << synth::noise_name(kind) << ".wav";
        wav::write((nz / name.str()).string(),
                   AudioBuffer::mono(synth::noise(sy_seed * 1000 + 500 + i, sy_seconds, kind)));
      }
      std::cout << "wrote " << sy_speech << " speech and " << sy_noise << " noise clips to " << sy_out << "\n";
      return 0;
    }
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const InvalidInput& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}
