#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "pldnet/audio.hpp"
#include "pldnet/error.hpp"
#include "pldnet/parallel.hpp"
#include "pldnet/sim.hpp"
#include "pldnet/wav.hpp"

namespace pldnet {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

inline std::string csv_quote(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

inline std::vector<std::string> csv_split(const std::string& line) {
  std::vector<std::string> out(1);
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        out.back() += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        out.back() += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.emplace_back();
    } else if (c != '\r') {
      out.back() += c;
    }
  }
  return out;
}

// One rendered scene. Audio paths are relative to the manifest directory.
struct ManifestRow {
  std::string scene_id;
  std::uint64_t scene_seed = 0;
  std::string mix_path;
  std::string target_path;
  std::string speech_file;
  std::size_t speech_offset = 0;
  std::vector<std::string> interferer_files;
  std::string noise_file;
  double rt60 = 0.0;
  double mic_distance = 0.0;
  double zenith_deg = 0.0;
  double snr_db = 0.0;
  double sir_db = 0.0;
  double level_db = 0.0;
  bool clipped = false;
};

inline const char* kManifestHeader =
    "scene_id,scene_seed,mix,target,speech,speech_offset,interferers,noise,rt60,mic_distance,zenith_deg,snr_db,"
    "sir_db,level_db,clipped";

struct Manifest {
  std::filesystem::path base_dir;
  std::vector<ManifestRow> rows;

  std::string resolve(const std::string& p) const {
    const std::filesystem::path path(p);
    return (path.is_absolute() ? path : base_dir / path).string();
  }
};

inline std::string format_manifest(const Manifest& m) {
  std::ostringstream os;
  os << std::setprecision(17) << kManifestHeader << '\n';
  for (const auto& r : m.rows) {
    std::string itf;
    for (std::size_t i = 0; i < r.interferer_files.size(); ++i) itf += (i ? ";" : "") + r.interferer_files[i];
    os << csv_quote(r.scene_id) << ',' << r.scene_seed << ',' << csv_quote(r.mix_path) << ','
       << csv_quote(r.target_path) << ',' << csv_quote(r.speech_file) << ',' << r.speech_offset << ','
       << csv_quote(itf) << ',' << csv_quote(r.noise_file) << ',' << r.rt60 << ',' << r.mic_distance << ','
       << r.zenith_deg << ',' << r.snr_db << ',' << r.sir_db << ',' << r.level_db << ',' << (r.clipped ? 1 : 0)
       << '\n';
  }
  return os.str();
}

inline void write_manifest(const Manifest& m, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InvalidInput("cannot write " + path);
  out << format_manifest(m);
  if (!out) throw InvalidInput("write failed for " + path);
}

// Reads a manifest. Only scene_id, mix and target are required columns, so
// hand-written manifests of existing recordings also work.
inline Manifest read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("cannot open manifest " + path);
  Manifest m;
  m.base_dir = std::filesystem::path(path).parent_path();
  std::string line;
  if (!std::getline(in, line)) return m;
  const auto header = csv_split(line);
  auto col = [&](const std::string& name) -> int {
    const auto it = std::find(header.begin(), header.end(), name);
    return it == header.end() ? -1 : static_cast<int>(it - header.begin());
  };
  const int c_id = col("scene_id"), c_mix = col("mix"), c_target = col("target");
  if (c_id < 0 || c_mix < 0 || c_target < 0) {
    throw InvalidInput(path + ": manifest needs scene_id, mix and target columns");
  }
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto f = csv_split(line);
    if (f.size() != header.size()) {
      throw InvalidInput(path + ":" + std::to_string(line_no) + ": expected " + std::to_string(header.size()) +
                         " fields, got " + std::to_string(f.size()));
    }
    auto get = [&](const char* name) -> std::string {
      const int c = col(name);
      return c < 0 ? std::string() : f[static_cast<std::size_t>(c)];
    };
    auto num = [&](const char* name) {
      const std::string v = get(name);
      if (v.empty()) return 0.0;
      try {
        return std::stod(v);
      } catch (const std::exception&) {
        throw InvalidInput(path + ":" + std::to_string(line_no) + ": bad value for " + name);
      }
    };
    ManifestRow r;
    r.scene_id = get("scene_id");
    r.mix_path = get("mix");
    r.target_path = get("target");
    r.speech_file = get("speech");
    r.noise_file = get("noise");
    if (const auto s = get("scene_seed"); !s.empty()) r.scene_seed = std::stoull(s);
    if (const auto s = get("speech_offset"); !s.empty()) r.speech_offset = std::stoull(s);
    std::istringstream itf(get("interferers"));
    for (std::string part; std::getline(itf, part, ';');) {
      if (!part.empty()) r.interferer_files.push_back(part);
    }
    r.rt60 = num("rt60");
    r.mic_distance = num("mic_distance");
    r.zenith_deg = num("zenith_deg");
    r.snr_db = num("snr_db");
    r.sir_db = num("sir_db");
    r.level_db = num("level_db");
    r.clipped = num("clipped") != 0.0;
    m.rows.push_back(std::move(r));
  }
  return m;
}

// Sorted WAV files of a directory; fails when there are none.
inline std::vector<std::string> list_wavs(const std::string& dir) {
  std::error_code ec;
  if (!std::filesystem::is_directory(dir, ec)) throw InvalidInput("not a directory: " + dir);
  std::vector<std::string> out;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    auto ext = e.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (e.is_regular_file() && ext == ".wav") out.push_back(e.path().string());
  }
  std::sort(out.begin(), out.end());
  if (out.empty()) throw InvalidInput("no WAV files in " + dir);
  return out;
}

struct DatasetOptions {
  double clip_seconds = 2.0;
  sim::SceneOverrides overrides;
  sim::SceneLayout layout;
  std::size_t threads = 1;
};

inline AudioBuffer read_mono(const std::string& path) {
  AudioBuffer a = wav::read(path);
  if (a.channels() != 1) return AudioBuffer::mono(a.channel_copy(0));
  return a;
}

// Renders n scenes into out_dir (mixture and target WAVs plus manifest.csv).
// Scene i uses seed splitmix64(seed + i) for both geometry and file choice.
inline Manifest build_dataset(std::size_t n_scenes, const std::string& speech_dir, const std::string& noise_dir,
                              const std::string& out_dir, std::uint64_t seed, const DatasetOptions& opt = {}) {
  if (!(opt.clip_seconds > 0.0)) throw ConfigError("dataset: clip_seconds must be positive");
  std::filesystem::create_directories(out_dir);
  Manifest m;
  m.base_dir = out_dir;
  m.rows.resize(n_scenes);
  if (n_scenes > 0) {
    const auto speech_files = list_wavs(speech_dir);
    const auto noise_files = list_wavs(noise_dir);
    const auto clip_len = static_cast<std::size_t>(opt.clip_seconds * kSampleRate);
    parallel_for(n_scenes, opt.threads, [&](std::size_t i) {
      ManifestRow& r = m.rows[i];
      r.scene_seed = splitmix64(seed + i);
      std::ostringstream id;
      id << "scene_" << std::setw(5) << std::setfill('0') << i;
      r.scene_id = id.str();
      const sim::SceneSpec scene = sim::sample_scene(r.scene_seed, opt.overrides, opt.layout);
      std::mt19937_64 rng(splitmix64(r.scene_seed));
      auto pick = [&](std::size_t size) { return static_cast<std::size_t>(rng() % size); };

      const std::size_t si = pick(speech_files.size());
      r.speech_file = speech_files[si];
      const AudioBuffer full = read_mono(r.speech_file);
      const std::size_t len = std::min(clip_len, full.num_samples());
      r.speech_offset = full.num_samples() > len ? pick(full.num_samples() - len + 1) : 0;
      const auto sp = full.channel(0).subspan(r.speech_offset, len);
      const AudioBuffer speech = AudioBuffer::mono({sp.begin(), sp.end()});

      std::vector<AudioBuffer> interferers;
      for (std::size_t j = 0; j < scene.interferers.size(); ++j) {
        // Other talkers than the target whenever the corpus allows it.
        std::size_t k = pick(speech_files.size());
        if (speech_files.size() > 1 && k == si) k = (k + 1) % speech_files.size();
        r.interferer_files.push_back(speech_files[k]);
        interferers.push_back(read_mono(speech_files[k]));
      }
      r.noise_file = noise_files[pick(noise_files.size())];
      const std::vector<AudioBuffer> noise{read_mono(r.noise_file)};

      sim::Mixture mix;
      try {
        mix = sim::render_mixture(scene, speech, interferers, noise);
      } catch (const InvalidInput& e) {
        throw InvalidInput(r.scene_id + " (" + r.speech_file + "): " + e.what());
      }
      r.mix_path = r.scene_id + "_mix.wav";
      r.target_path = r.scene_id + "_target.wav";
      wav::write((std::filesystem::path(out_dir) / r.mix_path).string(), mix.mix);
      wav::write((std::filesystem::path(out_dir) / r.target_path).string(), mix.target);
      r.rt60 = scene.room.rt60;
      r.mic_distance = scene.mic_distance;
      r.zenith_deg = scene.zenith_deg;
      r.snr_db = scene.snr_db;
      r.sir_db = scene.sir_db;
      r.level_db = scene.level_db;
      r.clipped = mix.clipped;
    });
  }
  write_manifest(m, (std::filesystem::path(out_dir) / "manifest.csv").string());
  return m;
}

}  // namespace pldnet
