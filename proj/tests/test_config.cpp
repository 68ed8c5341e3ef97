#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "pldnet/config.hpp"

using namespace pldnet;

namespace {

std::string error_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const ConfigError& e) {
    return e.what();
  }
  return {};
}

}  // namespace

TEST(RunConfig, DefaultsValidate) { EXPECT_NO_THROW(RunConfig{}.validate()); }

TEST(RunConfig, TextRoundTripIsExact) {
  RunConfig a;
  a.set("mode", "full");
  a.set("pld.gamma_thresh", "1.7");
  a.set("omlsa.g_min", "0.1");
  a.set("model.enc_channels", "8,12,20");
  a.set("model.tfcm_norm", "false");
  a.set("train.optimizer", "adam");
  a.set("seed", "18446744073709551615");
  RunConfig b;
  b.load_text(a.to_text());
  EXPECT_EQ(a.to_text(), b.to_text());
  EXPECT_EQ(b.mode, EnhanceMode::kFull);
  EXPECT_EQ(b.pipeline.pld.gamma_thresh, 1.7);
  EXPECT_EQ(b.model.enc_channels, (std::vector<std::size_t>{8, 12, 20}));
  EXPECT_FALSE(b.model.tfcm_norm);
  EXPECT_EQ(b.optimizer.kind, nn::OptimizerKind::kAdam);
  EXPECT_EQ(b.seed, 18446744073709551615ULL);
}

TEST(RunConfig, FloatsPrintShortest) {
  RunConfig c;
  EXPECT_EQ(c.get("omlsa.dd_alpha"), "0.92");
  EXPECT_EQ(c.get("train.lr"), "0.003");
}

TEST(RunConfig, CommentsAndBlankLines) {
  RunConfig c;
  c.load_text("# header\n\n  pld.k_low = 10   # trailing\n\tthreads=3\n");
  EXPECT_EQ(c.pipeline.pld.k_low, 10u);
  EXPECT_EQ(c.threads, 3u);
}

TEST(RunConfig, ErrorsNameTheKey) {
  RunConfig c;
  EXPECT_NE(error_of([&] { c.set("pld.k_lo", "3"); }).find("pld.k_lo"), std::string::npos);
  EXPECT_NE(error_of([&] { c.set("pld.k_low", "abc"); }).find("pld.k_low"), std::string::npos);
  EXPECT_NE(error_of([&] { c.set("pld.k_low", "-1"); }).find("pld.k_low"), std::string::npos);
  EXPECT_NE(error_of([&] { c.set("train.lr", "0.1x"); }).find("train.lr"), std::string::npos);
  EXPECT_NE(error_of([&] { c.set("model.tfcm_norm", "yes"); }).find("model.tfcm_norm"), std::string::npos);
  EXPECT_NE(error_of([&] { c.set("mode", "loud"); }).find("mode"), std::string::npos);
  EXPECT_NE(error_of([&] { c.load_text("just words\n", "cfg.txt"); }).find("cfg.txt:1"), std::string::npos);
}

TEST(RunConfig, ValidateRejectsInconsistentLayout) {
  RunConfig c;
  c.set("stft.win_len", "256");
  c.set("stft.fft_size", "256");
  c.set("stft.hop", "128");
  EXPECT_NE(error_of([&] { c.validate(); }).find("model.fft_bins"), std::string::npos);
  c.set("model.fft_bins", "129");
  c.set("pld.k_high", "60");
  EXPECT_NO_THROW(c.validate());
  EXPECT_EQ(c.pipeline_config().stft.bins(), 129u);

  RunConfig z;
  z.set("threads", "0");
  EXPECT_THROW(z.validate(), ConfigError);
  RunConfig f;
  f.set("loss.bin_floor", "0");
  EXPECT_THROW(f.validate(), ConfigError);
}

TEST(RunConfig, LoadFile) {
  const auto path = std::filesystem::temp_directory_path() / "pldnet_test_config.txt";
  {
    std::ofstream out(path);
    out << "mode = net\nloss.alpha = 0.5\n";
  }
  RunConfig c;
  c.load_file(path.string());
  EXPECT_EQ(c.mode, EnhanceMode::kNet);
  EXPECT_EQ(c.loss_alpha, 0.5);
  std::filesystem::remove(path);
  EXPECT_THROW(c.load_file(path.string()), ConfigError);
}

TEST(RunConfig, EveryKeyRoundTripsThroughGetSet) {
  RunConfig c;
  for (const auto& k : RunConfig::keys()) {
    const std::string v = c.get(k);
    EXPECT_NO_THROW(c.set(k, v)) << k;
    EXPECT_EQ(c.get(k), v) << k;
  }
}
