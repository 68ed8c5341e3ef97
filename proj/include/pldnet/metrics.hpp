#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "pldnet/audio.hpp"
#include "pldnet/dataset.hpp"
#include "pldnet/error.hpp"
#include "pldnet/parallel.hpp"
#include "pldnet/wav.hpp"

namespace pldnet::metrics {

inline constexpr double kSiSdrCapDb = 60.0;

// Scale-invariant SDR in dB, capped at kSiSdrCapDb.
inline double si_sdr(std::span<const double> estimate, std::span<const double> reference) {
  if (estimate.size() != reference.size()) {
    throw InvalidInput("si_sdr: length mismatch (" + std::to_string(estimate.size()) + " vs " +
                       std::to_string(reference.size()) + ")");
  }
  double ex = 0.0, xx = 0.0;
  for (std::size_t i = 0; i < reference.size(); ++i) {
    ex += estimate[i] * reference[i];
    xx += reference[i] * reference[i];
  }
  if (!(xx > 0.0)) throw InvalidInput("si_sdr: reference has zero energy");
  const double a = ex / xx;
  double target = 0.0, resid = 0.0;
  for (std::size_t i = 0; i < reference.size(); ++i) {
    const double s = a * reference[i];
    const double e = estimate[i] - s;
    target += s * s;
    resid += e * e;
  }
  if (resid == 0.0) return kSiSdrCapDb;
  if (target == 0.0) return -kSiSdrCapDb;
  return std::clamp(10.0 * std::log10(target / resid), -kSiSdrCapDb, kSiSdrCapDb);
}

struct SegSnrOptions {
  std::size_t frame = 512;
  std::size_t hop = 256;
  double voiced_dbfs = -60.0;  // reference frame mean power threshold
  double min_db = -10.0;
  double max_db = 35.0;
};

// Mean per-frame SNR over frames whose reference power exceeds the threshold.
// Returns NaN when no frame qualifies.
inline double segmental_snr(std::span<const double> estimate, std::span<const double> reference,
                            const SegSnrOptions& o = {}) {
  if (estimate.size() != reference.size()) throw InvalidInput("segmental_snr: length mismatch");
  if (o.frame == 0 || o.hop == 0) throw ConfigError("segmental_snr: frame and hop must be positive");
  const double thresh = std::pow(10.0, o.voiced_dbfs / 10.0);
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t start = 0; start + o.frame <= reference.size(); start += o.hop) {
    double sig = 0.0, err = 0.0;
    for (std::size_t i = start; i < start + o.frame; ++i) {
      const double e = estimate[i] - reference[i];
      sig += reference[i] * reference[i];
      err += e * e;
    }
    if (sig / static_cast<double>(o.frame) <= thresh) continue;
    const double db = err == 0.0 ? o.max_db : 10.0 * std::log10(sig / err);
    sum += std::clamp(db, o.min_db, o.max_db);
    ++count;
  }
  return count == 0 ? std::numeric_limits<double>::quiet_NaN() : sum / static_cast<double>(count);
}

struct EvalRow {
  std::string file_id;
  double si_sdr_in = 0.0;
  double si_sdr_out = 0.0;
  double delta = 0.0;
  double seg_snr_out = 0.0;
  std::string error;  // non-empty when the row could not be evaluated
};

struct EvalReport {
  std::vector<EvalRow> rows;
  std::size_t evaluated = 0;
  double mean_si_sdr_in = 0.0;
  double mean_si_sdr_out = 0.0;
  double mean_delta = 0.0;
  double mean_seg_snr_out = 0.0;  // over rows with voiced frames
};

// Scores one enhanced signal against the reference, truncating to the shorter.
inline EvalRow score(std::string file_id, std::span<const double> input, std::span<const double> output,
                     std::span<const double> reference) {
  const std::size_t n = std::min({input.size(), output.size(), reference.size()});
  EvalRow r;
  r.file_id = std::move(file_id);
  r.si_sdr_in = si_sdr(input.first(n), reference.first(n));
  r.si_sdr_out = si_sdr(output.first(n), reference.first(n));
  r.delta = r.si_sdr_out - r.si_sdr_in;
  r.seg_snr_out = segmental_snr(output.first(n), reference.first(n));
  return r;
}

inline void summarize(EvalReport& rep) {
  rep.evaluated = 0;
  rep.mean_si_sdr_in = rep.mean_si_sdr_out = rep.mean_delta = rep.mean_seg_snr_out = 0.0;
  std::size_t voiced = 0;
  for (const auto& r : rep.rows) {
    if (!r.error.empty()) continue;
    ++rep.evaluated;
    rep.mean_si_sdr_in += r.si_sdr_in;
    rep.mean_si_sdr_out += r.si_sdr_out;
    rep.mean_delta += r.delta;
    if (std::isfinite(r.seg_snr_out)) {
      rep.mean_seg_snr_out += r.seg_snr_out;
      ++voiced;
    }
  }
  if (rep.evaluated > 0) {
    const double n = static_cast<double>(rep.evaluated);
    rep.mean_si_sdr_in /= n;
    rep.mean_si_sdr_out /= n;
    rep.mean_delta /= n;
  }
  rep.mean_seg_snr_out = voiced > 0 ? rep.mean_seg_snr_out / static_cast<double>(voiced) : 0.0;
}

inline void write_report_csv(const EvalReport& rep, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw InvalidInput("cannot write " + path);
  out << std::setprecision(10);
  out << "file_id,si_sdr_in,si_sdr_out,delta,seg_snr_out,error\n";
  for (const auto& r : rep.rows) {
    if (r.error.empty()) {
      out << r.file_id << ',' << r.si_sdr_in << ',' << r.si_sdr_out << ',' << r.delta << ',' << r.seg_snr_out << ",\n";
    } else {
      out << r.file_id << ",,,,," << csv_quote(r.error) << '\n';
    }
  }
  out << "mean," << rep.mean_si_sdr_in << ',' << rep.mean_si_sdr_out << ',' << rep.mean_delta << ','
      << rep.mean_seg_snr_out << ",\n";
  if (!out) throw InvalidInput("write failed for " + path);
}

using Enhancer = std::function<AudioBuffer(const AudioBuffer& mix)>;

// Enhances every manifest row and scores it against its target. Rows whose
// files are missing or unreadable are reported with an error and skipped.
inline EvalReport evaluate_manifest(const Manifest& manifest, const Enhancer& enhance,
                                    const std::string& out_csv = {}, std::size_t threads = 1) {
  EvalReport rep;
  rep.rows.resize(manifest.rows.size());
  parallel_for(manifest.rows.size(), threads, [&](std::size_t i) {
    const auto& row = manifest.rows[i];
    EvalRow& r = rep.rows[i];
    try {
      const AudioBuffer mix = wav::read(manifest.resolve(row.mix_path));
      const AudioBuffer target = wav::read(manifest.resolve(row.target_path));
      if (target.channels() != 1) throw InvalidInput(row.target_path + ": target must be mono");
      const AudioBuffer out = enhance(mix);
      r = score(row.scene_id, mix.channel(0), out.channel(0), target.channel(0));
    } catch (const std::exception& e) {
      r = EvalRow{};
      r.error = e.what();
    }
    r.file_id = row.scene_id;
  });
  summarize(rep);
  if (!out_csv.empty()) write_report_csv(rep, out_csv);
  return rep;
}

}  // namespace pldnet::metrics
