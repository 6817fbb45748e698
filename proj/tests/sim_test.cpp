#include <gtest/gtest.h>

#include <cmath>

#include "glim/sim.hpp"

namespace glim {
namespace {

SimConfig quick_config(std::vector<double> snr) {
  SimConfig cfg;
  cfg.snr_grid_db = std::move(snr);
  cfg.min_bits = 20'000;
  cfg.max_bits = 100'000;
  return cfg;
}

TEST(SigmaFromSnr, Examples) {
  EXPECT_NEAR(sigma_from_snr(10.0), 0.05, 1e-15);
  EXPECT_NEAR(sigma_from_snr(0.0), 0.5, 1e-15);
  EXPECT_NEAR(sigma_from_snr(-10.0), 5.0, 1e-12);
  for (double db = -40; db < 60; db += 0.5) EXPECT_GT(sigma_from_snr(db), sigma_from_snr(db + 0.5));
}

TEST(CountBitErrors, Examples) {
  const Bits a{0, 1, 1, 0}, b{0, 1, 1, 0}, c{1, 1, 0, 0};
  EXPECT_EQ(count_bit_errors(a, b), 0u);
  EXPECT_EQ(count_bit_errors(a, c), 2u);
  EXPECT_EQ(count_bit_errors(Bits{}, Bits{}), 0u);
  EXPECT_THROW(count_bit_errors(a, Bits{0, 1}), DimensionError);
}

TEST(SimConfig, ValidationNamesTheFlag) {
  SimConfig cfg = quick_config({10});
  cfg.qam_order = 5;
  try {
    validate(cfg);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("--qam"), std::string::npos);
  }
  cfg = quick_config({10, 5});
  EXPECT_THROW(validate(cfg), ConfigError);
  cfg = quick_config({10});
  cfg.selection = SelectionMode::fixed;
  EXPECT_THROW(validate(cfg), ConfigError);
  cfg.fixed_mapping = LedMapping::sequential(4);
  EXPECT_THROW(validate(cfg), ConfigError);
}

TEST(Sweep, NoiselessIsErrorFree) {
  for (int order : {4, 16}) {
    SimConfig cfg = quick_config({100});
    cfg.qam_order = order;
    cfg.noise_var_override = 0.0;
    cfg.detectors = {DetectorKind::zf, DetectorKind::mmse, DetectorKind::map};
    for (const auto& r : run_ber_sweep(cfg)) {
      EXPECT_EQ(r.bit_errors, 0u) << to_string(r.detector) << " " << order;
      const std::uint64_t batch_bits = kFramesPerBatch * 64 * static_cast<std::uint64_t>(order == 4 ? 2 : 4);
      EXPECT_GE(r.bits_sent, cfg.max_bits);
      EXPECT_LT(r.bits_sent, cfg.max_bits + batch_bits);
    }
  }
}

TEST(Sweep, DeepNoiseIsCoinFlip) {
  SimConfig cfg = quick_config({-40});
  cfg.min_bits = cfg.max_bits = 100'000;
  cfg.detectors = {DetectorKind::zf, DetectorKind::mmse, DetectorKind::map};
  for (const auto& r : run_ber_sweep(cfg)) EXPECT_NEAR(r.ber, 0.5, 0.02) << to_string(r.detector);
}

TEST(Sweep, WorkerCountDoesNotChangeRecords) {
  SimConfig cfg = quick_config({15, 25});
  cfg.detectors = {DetectorKind::mmse, DetectorKind::map};
  const auto serial = run_ber_sweep(cfg);
  for (int w : {2, 3, 5}) {
    cfg.workers = w;
    EXPECT_EQ(run_ber_sweep(cfg), serial) << w << " workers";
  }
}

TEST(Sweep, SameSeedSameRecordsDifferentSeedDifferentRecords) {
  SimConfig cfg = quick_config({20});
  const auto a = run_ber_sweep(cfg);
  EXPECT_EQ(run_ber_sweep(cfg), a);
  cfg.seed = 2;
  EXPECT_NE(run_ber_sweep(cfg).front().bit_errors, a.front().bit_errors);
}

TEST(Sweep, BitsAreWholeFramesAndStoppingRuleHolds) {
  for (int order : {4, 8, 16}) {
    SimConfig cfg = quick_config({0, 20, 35});
    cfg.qam_order = order;
    cfg.detectors = {DetectorKind::mmse};
    const std::uint64_t frame_bits = 64 * static_cast<std::uint64_t>(Constellation(order).bits_per_symbol());
    for (const auto& r : run_ber_sweep(cfg)) {
      EXPECT_EQ(r.bits_sent % (frame_bits * kFramesPerBatch), 0u);
      EXPECT_EQ(r.ber, static_cast<double>(r.bit_errors) / static_cast<double>(r.bits_sent));
      EXPECT_TRUE((r.bits_sent >= cfg.min_bits && r.bit_errors >= cfg.min_errors) || r.bits_sent >= cfg.max_bits);
      // The rule stops at the first batch that satisfies it.
      EXPECT_LT(r.bits_sent - frame_bits * kFramesPerBatch, std::max(cfg.max_bits, cfg.min_bits));
      EXPECT_EQ(r.qam_order, order);
      EXPECT_EQ(r.selection, "auto:1-3|2-4|5-7|6-8");
    }
  }
}

TEST(Sweep, BerDoesNotGrowWithSnr) {
  SimConfig cfg = quick_config({0, 5, 10, 15, 20, 25, 30});
  cfg.max_bits = 400'000;
  cfg.detectors = {DetectorKind::zf, DetectorKind::mmse, DetectorKind::map};
  const auto rec = run_ber_sweep(cfg);
  for (std::size_t i = 0; i + 1 < rec.size(); ++i) {
    if (rec[i].detector != rec[i + 1].detector) continue;
    if (rec[i].bit_errors < 100 || rec[i + 1].bit_errors < 100) continue;
    EXPECT_LE(rec[i + 1].ber, 1.5 * rec[i].ber) << to_string(rec[i].detector) << " at " << rec[i + 1].snr_db;
  }
}

TEST(Sweep, DetectorOrderingAtModerateSnr) {
  SimConfig cfg = quick_config({25});
  cfg.min_bits = cfg.max_bits = 1'000'000;
  cfg.detectors = {DetectorKind::zf, DetectorKind::mmse, DetectorKind::map};
  const auto rec = run_ber_sweep(cfg);
  ASSERT_EQ(rec.size(), 3u);
  const double zf = rec[0].ber, mmse = rec[1].ber, map = rec[2].ber;
  EXPECT_LE(map, mmse);
  EXPECT_LE(mmse, 1.05 * zf);
}

TEST(Sweep, UnclippedMetricIsASeparateVariant) {
  SimConfig cfg = quick_config({25});
  cfg.min_bits = cfg.max_bits = 200'000;
  const auto clipped = run_ber_sweep(cfg);
  cfg.map_metric = MetricPoint::unclipped;
  const auto unclipped = run_ber_sweep(cfg);
  EXPECT_NE(clipped.front().bit_errors, unclipped.front().bit_errors);
  cfg.noise_var_override = 0.0;
  EXPECT_EQ(run_ber_sweep(cfg).front().bit_errors, 0u);
}

TEST(Sweep, ChannelShapeMismatchIsConfigError) {
  SimConfig cfg = quick_config({10});
  cfg.n_tx = 4;
  EXPECT_THROW(run_ber_sweep(cfg), ConfigError);
}

TEST(Sweep, OddBlockRemainderIsPadded) {
  // 2N = 128 real samples over 3 pairs leaves a partial last block.
  SimConfig cfg = quick_config({200});
  cfg.n_tx = 6;
  cfg.n_rx = 6;
  RoomGeometry g;
  g.led_positions = square_perimeter_layout(6, 4.0, 2.15);
  g.pd_positions = square_perimeter_layout(6, 1.0, 0.0);
  cfg.channel = GeometrySource{g};
  cfg.detectors = {DetectorKind::mmse};
  const auto rec = run_ber_sweep(cfg);
  EXPECT_EQ(rec.front().bit_errors, 0u);
}

}  // namespace
}  // namespace glim
