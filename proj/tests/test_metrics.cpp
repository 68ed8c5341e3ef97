#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "pldnet/dataset.hpp"
#include "pldnet/metrics.hpp"
#include "pldnet/synth.hpp"

using namespace pldnet;
using metrics::segmental_snr;
using metrics::si_sdr;

namespace {

std::vector<double> randn(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  std::vector<double> v(n);
  for (auto& x : v) x = g(rng);
  return v;
}

// Noise orthogonal to x with energy ||x||^2 / ratio.
std::vector<double> orthogonal_noise(const std::vector<double>& x, double ratio, std::uint64_t seed) {
  auto n = randn(x.size(), seed);
  double nx = 0.0, xx = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    nx += n[i] * x[i];
    xx += x[i] * x[i];
  }
  for (std::size_t i = 0; i < x.size(); ++i) n[i] -= nx / xx * x[i];
  double nn = 0.0;
  for (double v : n) nn += v * v;
  const double g = std::sqrt(xx / ratio / nn);
  for (double& v : n) v *= g;
  return n;
}

std::vector<double> plus(const std::vector<double>& a, const std::vector<double>& b) {
  std::vector<double> c(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) c[i] = a[i] + b[i];
  return c;
}

std::filesystem::path temp_dir(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / ("pldnet_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST(SiSdr, IdenticalAndScaledAreCapped) {
  const auto x = randn(4000, 1);
  EXPECT_EQ(si_sdr(x, x), metrics::kSiSdrCapDb);
  std::vector<double> y(x);
  for (double& v : y) v *= 2.0;
  EXPECT_EQ(si_sdr(y, x), metrics::kSiSdrCapDb);
}

TEST(SiSdr, OrthogonalNoiseAtTenthPowerIsTenDb) {
  const auto x = randn(4000, 2);
  EXPECT_NEAR(si_sdr(plus(x, orthogonal_noise(x, 10.0, 3)), x), 10.0, 1e-9);
}

TEST(SiSdr, HalvingNoisePowerAddsThreeDb) {
  const auto x = randn(4000, 4);
  const auto n = orthogonal_noise(x, 10.0, 5);
  std::vector<double> half(n);
  for (double& v : half) v /= std::sqrt(2.0);
  EXPECT_NEAR(si_sdr(plus(x, half), x) - si_sdr(plus(x, n), x), 10.0 * std::log10(2.0), 1e-6);
}

TEST(SiSdr, ScaleInvariant) {
  const auto x = randn(4000, 6);
  const auto e = plus(x, randn(4000, 7));
  const double ref = si_sdr(e, x);
  for (double a : {1e-3, 0.5, 3.0, 1e3}) {
    std::vector<double> s(e);
    for (double& v : s) v *= a;
    EXPECT_NEAR(si_sdr(s, x), ref, 1e-9) << a;
  }
}

TEST(SiSdr, Errors) {
  const std::vector<double> x(10, 0.0), y(10, 1.0), z(9, 1.0);
  EXPECT_THROW(si_sdr(y, x), InvalidInput);
  EXPECT_THROW(si_sdr(y, z), InvalidInput);
}

TEST(SegmentalSnr, ClampsAndZeroDbFrame) {
  const auto x = randn(4096, 8);
  EXPECT_DOUBLE_EQ(segmental_snr(x, x), 35.0);
  // Anti-phase doubles the error amplitude: 10*log10(1/4) per frame, above the floor.
  std::vector<double> anti(x), far(x);
  for (double& v : anti) v = -v;
  EXPECT_NEAR(segmental_snr(anti, x), -10.0 * std::log10(4.0), 1e-9);
  for (double& v : far) v *= -3.0;
  EXPECT_DOUBLE_EQ(segmental_snr(far, x), -10.0);
  // Estimate 2x: error equals the reference in every frame.
  std::vector<double> twice(x);
  for (double& v : twice) v *= 2.0;
  EXPECT_NEAR(segmental_snr(twice, x), 0.0, 1e-9);
}

TEST(SegmentalSnr, SkipsSilentFrames) {
  std::vector<double> ref(2048, 0.0), est(2048, 0.0);
  const auto loud = randn(512, 9);
  for (std::size_t i = 0; i < 512; ++i) {
    ref[i] = 0.1 * loud[i];
    est[i] = 0.2 * loud[i];
  }
  for (std::size_t i = 512; i < ref.size(); ++i) est[i] = 0.5;  // loud error in silent frames
  // Frames 0 and 1 overlap the voiced part; every later frame is silent.
  const double f1_sig = [&] {
    double s = 0.0;
    for (std::size_t i = 256; i < 512; ++i) s += ref[i] * ref[i];
    return s;
  }();
  const double f1_err = [&] {
    double s = 0.0;
    for (std::size_t i = 256; i < 768; ++i) s += (est[i] - ref[i]) * (est[i] - ref[i]);
    return s;
  }();
  const double f1 = std::clamp(10.0 * std::log10(f1_sig / f1_err), -10.0, 35.0);
  EXPECT_NEAR(segmental_snr(est, ref), (0.0 + f1) / 2.0, 1e-9);
  const std::vector<double> quiet(2048, 0.0);
  EXPECT_TRUE(std::isnan(segmental_snr(est, quiet)));
}

TEST(Score, DeltaAndTruncation) {
  const auto x = randn(3000, 10);
  const auto in = plus(x, orthogonal_noise(x, 1.0, 11));
  auto out = plus(x, orthogonal_noise(x, 10.0, 12));
  out.resize(3100, 0.0);
  const auto r = metrics::score("a", in, out, x);
  EXPECT_NEAR(r.si_sdr_in, 0.0, 1e-9);
  EXPECT_NEAR(r.si_sdr_out, 10.0, 1e-9);
  EXPECT_DOUBLE_EQ(r.delta, r.si_sdr_out - r.si_sdr_in);
}

TEST(Csv, QuoteSplitRoundTrip) {
  const std::vector<std::string> fields{"plain", "with,comma", "say \"hi\"", ""};
  std::string line;
  for (std::size_t i = 0; i < fields.size(); ++i) line += (i ? "," : "") + csv_quote(fields[i]);
  EXPECT_EQ(csv_split(line), fields);
}

class DatasetTest : public ::testing::Test {
 protected:
  void SetUp() override {
    root_ = temp_dir(::testing::UnitTest::GetInstance()->current_test_info()->name());
    std::filesystem::create_directories(root_ / "speech");
    std::filesystem::create_directories(root_ / "noise");
    for (int i = 0; i < 3; ++i) {
      wav::write((root_ / "speech" / ("s" + std::to_string(i) + ".wav")).string(),
                 AudioBuffer::mono(synth::speech(100 + i, 1.0)));
    }
    wav::write((root_ / "noise" / "pink.wav").string(),
               AudioBuffer::mono(synth::noise(7, 1.0, synth::NoiseKind::kPink)));
  }
  void TearDown() override { std::filesystem::remove_all(root_); }

  Manifest build(std::size_t n, const std::string& out, std::uint64_t seed = 5) {
    DatasetOptions o;
    o.clip_seconds = 0.5;
    return build_dataset(n, (root_ / "speech").string(), (root_ / "noise").string(), (root_ / out).string(), seed, o);
  }

  std::filesystem::path root_;
};

TEST_F(DatasetTest, EmptyCorpusHasHeaderOnlyManifest) {
  const auto m = build(0, "out");
  EXPECT_TRUE(m.rows.empty());
  EXPECT_EQ(slurp(root_ / "out" / "manifest.csv"), std::string(kManifestHeader) + "\n");
  EXPECT_TRUE(read_manifest((root_ / "out" / "manifest.csv").string()).rows.empty());
}

TEST_F(DatasetTest, SameSeedIsByteIdentical) {
  build(2, "a");
  build(2, "b");
  for (const auto& e : std::filesystem::directory_iterator(root_ / "a")) {
    const auto name = e.path().filename();
    EXPECT_EQ(slurp(e.path()), slurp(root_ / "b" / name)) << name;
  }
  build(1, "c", 6);
  EXPECT_NE(slurp(root_ / "a" / "scene_00000_mix.wav"), slurp(root_ / "c" / "scene_00000_mix.wav"));
}

TEST_F(DatasetTest, RowsRevalidate) {
  const auto built = build(4, "out");
  const auto m = read_manifest((root_ / "out" / "manifest.csv").string());
  ASSERT_EQ(m.rows.size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) {
    const auto& r = m.rows[i];
    EXPECT_EQ(r.scene_id, built.rows[i].scene_id);
    EXPECT_EQ(r.scene_seed, splitmix64(5 + i));
    EXPECT_EQ(r.interferer_files.size(), 4u);
    const auto spec = sim::sample_scene(r.scene_seed);
    EXPECT_DOUBLE_EQ(r.snr_db, spec.snr_db);
    const AudioBuffer mix = wav::read(m.resolve(r.mix_path));
    const AudioBuffer target = wav::read(m.resolve(r.target_path));
    ASSERT_EQ(mix.channels(), 2u);
    ASSERT_EQ(target.channels(), 1u);
    EXPECT_EQ(mix.num_samples(), 8000u);
    EXPECT_EQ(target.num_samples(), 8000u);
    // Level is calibrated in double precision; float storage adds < 1e-6 dB.
    const double level = 10.0 * std::log10(mean_power(mix.channel(0)));
    if (!r.clipped) {
      EXPECT_NEAR(level, r.level_db, 0.1);
    }
    EXPECT_LT(metrics::si_sdr(mix.channel(0), target.channel(0)), metrics::kSiSdrCapDb);
  }
}

TEST_F(DatasetTest, MissingInputsAreReported) {
  EXPECT_THROW(build_dataset(1, (root_ / "nope").string(), (root_ / "noise").string(), (root_ / "o").string(), 1),
               InvalidInput);
  std::filesystem::create_directories(root_ / "empty");
  EXPECT_THROW(build_dataset(1, (root_ / "empty").string(), (root_ / "noise").string(), (root_ / "o").string(), 1),
               InvalidInput);
}

TEST_F(DatasetTest, EvaluateManifestIdentityAndMissingRows) {
  build(2, "out");
  auto m = read_manifest((root_ / "out" / "manifest.csv").string());
  m.rows.push_back(m.rows[0]);
  m.rows.back().scene_id = "ghost";
  m.rows.back().mix_path = "missing.wav";
  const auto csv = (root_ / "report.csv").string();
  const auto rep = metrics::evaluate_manifest(
      m, [](const AudioBuffer& mix) { return AudioBuffer::mono(mix.channel_copy(0)); }, csv);
  ASSERT_EQ(rep.rows.size(), 3u);
  EXPECT_EQ(rep.evaluated, 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_TRUE(rep.rows[i].error.empty());
    EXPECT_EQ(rep.rows[i].delta, 0.0);
  }
  EXPECT_EQ(rep.rows[2].file_id, "ghost");
  EXPECT_NE(rep.rows[2].error.find("missing.wav"), std::string::npos);
  const std::string text = slurp(csv);
  EXPECT_EQ(text.rfind("file_id,si_sdr_in,si_sdr_out,delta,seg_snr_out,error\n", 0), 0u);
  EXPECT_NE(text.find("\nmean,"), std::string::npos);
}

TEST(EvaluateManifest, EmptyManifestGivesEmptyReport) {
  const auto rep = metrics::evaluate_manifest(Manifest{}, [](const AudioBuffer& a) { return a; });
  EXPECT_TRUE(rep.rows.empty());
  EXPECT_EQ(rep.evaluated, 0u);
}

TEST(ParallelFor, CoversEveryIndexAndRethrows) {
  std::vector<int> hits(100, 0);
  parallel_for(hits.size(), 4, [&](std::size_t i) { hits[i] += 1; });
  for (int h : hits) EXPECT_EQ(h, 1);
  EXPECT_THROW(parallel_for(10, 3, [](std::size_t i) { if (i == 7) throw InvalidInput("boom"); }), InvalidInput);
}
