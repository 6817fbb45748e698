#pragma once

// Seeded Monte Carlo BER engine. Every OFDM frame draws its bits and noise
// from its own generator keyed by (seed, SNR index, frame index), so the
// numbers do not depend on how frames are spread over worker threads.

#include <Eigen/Dense>
#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#include "glim/channel.hpp"
#include "glim/detect.hpp"
#include "glim/error.hpp"
#include "glim/mapper.hpp"
#include "glim/modem.hpp"
#include "glim/select.hpp"

namespace glim {

/// Transmit power per real sample fixed by the modem (E[t^2] = 1/2).
inline constexpr double kSamplePower = 0.5;

/// The MAP filters are built with at least this noise variance so that a
/// noiseless run still has well-defined closed-form filters.
inline constexpr double kMapFilterNoiseFloor = 1e-9;

/// Frames are simulated and merged in batches of this many; the stopping
/// rule is checked only at batch boundaries.
inline constexpr std::uint64_t kFramesPerBatch = 8;

inline double sigma_from_snr(double snr_db) { return kSamplePower / std::pow(10.0, snr_db / 10.0); }

inline std::uint64_t count_bit_errors(std::span<const std::uint8_t> sent, std::span<const std::uint8_t> received) {
  if (sent.size() != received.size())
    throw DimensionError(fmt::format("bit streams differ in length ({} vs {})", sent.size(), received.size()));
  std::uint64_t errors = 0;
  for (std::size_t i = 0; i < sent.size(); ++i) errors += (sent[i] & 1u) != (received[i] & 1u);
  return errors;
}

enum class SelectionMode { off, fixed, automatic };

inline std::string_view to_string(SelectionMode m) {
  switch (m) {
    case SelectionMode::off: return "off";
    case SelectionMode::fixed: return "fixed";
    case SelectionMode::automatic: return "auto";
  }
  return "?";
}

struct GeometrySource {
  RoomGeometry geometry;
};

struct FileSource {
  std::string path;
};

using ChannelSource = std::variant<GeometrySource, FileSource>;

struct SimConfig {
  int n_tx = 8;
  int n_rx = 8;
  int qam_order = 4;
  int n_subcarriers = 64;
  std::vector<double> snr_grid_db;
  std::uint64_t min_bits = 100'000;
  std::uint64_t min_errors = 100;
  std::uint64_t max_bits = 10'000'000;
  std::vector<DetectorKind> detectors{DetectorKind::map};
  SelectionMode selection = SelectionMode::automatic;
  std::optional<LedMapping> fixed_mapping;
  ChannelSource channel = GeometrySource{default_geometry()};
  bool normalize = true;
  std::uint64_t seed = 1;
  int workers = 1;
  /// Replaces the SNR-derived noise variance at every grid point when set.
  std::optional<double> noise_var_override;
  /// Debug: score MAP hypotheses at the unclipped estimate instead.
  MetricPoint map_metric = MetricPoint::clipped;
};

inline void validate(const SimConfig& cfg) {
  if (cfg.n_tx < 2 || cfg.n_tx % 2 != 0) throw ConfigError(fmt::format("--nt must be even and >= 2, got {}", cfg.n_tx));
  if (cfg.n_tx / 2 > kMaxPairs) throw ConfigError(fmt::format("--nt above {} is not supported", 2 * kMaxPairs));
  if (cfg.n_rx < 1) throw ConfigError(fmt::format("--nr must be >= 1, got {}", cfg.n_rx));
  if (cfg.qam_order != 4 && cfg.qam_order != 8 && cfg.qam_order != 16)
    throw ConfigError(fmt::format("--qam must be 4, 8 or 16, got {}", cfg.qam_order));
  if (cfg.n_subcarriers < 1 || (cfg.n_subcarriers & (cfg.n_subcarriers - 1)) != 0)
    throw ConfigError(fmt::format("--nfft must be a power of two, got {}", cfg.n_subcarriers));
  if (cfg.snr_grid_db.empty()) throw ConfigError("--snr grid is empty");
  for (std::size_t i = 1; i < cfg.snr_grid_db.size(); ++i)
    if (!(cfg.snr_grid_db[i] > cfg.snr_grid_db[i - 1])) throw ConfigError("--snr grid must be strictly increasing");
  if (cfg.min_bits < 1000) throw ConfigError("--min-bits must be >= 1000");
  if (cfg.max_bits < cfg.min_bits) throw ConfigError("--max-bits must be >= --min-bits");
  if (cfg.detectors.empty()) throw ConfigError("no detector selected");
  if (cfg.selection == SelectionMode::fixed && !cfg.fixed_mapping)
    throw ConfigError("fixed selection needs an explicit LED mapping");
  if (cfg.fixed_mapping && cfg.fixed_mapping->n_tx() != cfg.n_tx)
    throw ConfigError(fmt::format("--select pairs cover {} LEDs but --nt is {}", cfg.fixed_mapping->n_tx(), cfg.n_tx));
  if (cfg.workers < 1) throw ConfigError("--workers must be >= 1");
  if (cfg.noise_var_override && !(*cfg.noise_var_override >= 0.0))
    throw ConfigError("noise variance override must be nonnegative");
}

struct BerRecord {
  double snr_db = 0.0;
  std::uint64_t bits_sent = 0;
  std::uint64_t bit_errors = 0;
  double ber = 0.0;
  DetectorKind detector = DetectorKind::map;
  int qam_order = 4;
  std::string selection;  // e.g. "auto:1-3|2-4|5-7|6-8"
  std::uint64_t seed = 0;

  friend bool operator==(const BerRecord&, const BerRecord&) = default;
};

/// Loads or builds the channel named by the configuration and checks its shape.
inline ChannelMatrix resolve_channel(const SimConfig& cfg) {
  ChannelMatrix h = std::visit(
      [](const auto& src) -> ChannelMatrix {
        using T = std::decay_t<decltype(src)>;
        if constexpr (std::is_same_v<T, GeometrySource>) {
          return build_lambertian_channel(src.geometry);
        } else {
          std::ifstream in(src.path);
          if (!in) throw ConfigError(fmt::format("cannot read channel file '{}'", src.path));
          return load_channel_csv(in);
        }
      },
      cfg.channel);
  if (h.n_tx() != cfg.n_tx || h.n_rx() != cfg.n_rx)
    throw ConfigError(fmt::format("channel is {}x{} (PDs x LEDs) but the run asks for --nr {} --nt {}", h.n_rx(),
                                  h.n_tx(), cfg.n_rx, cfg.n_tx));
  return cfg.normalize ? h.normalized() : h;
}

struct ResolvedMapping {
  LedMapping mapping;
  std::optional<SelectionReport> report;  // present for automatic selection
};

inline ResolvedMapping resolve_mapping(const SimConfig& cfg, const ChannelMatrix& h) {
  switch (cfg.selection) {
    case SelectionMode::off: return {LedMapping::sequential(h.n_tx()), std::nullopt};
    case SelectionMode::fixed: return {*cfg.fixed_mapping, std::nullopt};
    case SelectionMode::automatic: {
      auto report = select_mapping_report(h);
      LedMapping chosen = report.selected();
      return {std::move(chosen), std::move(report)};
    }
  }
  throw ConfigError("unknown selection mode");
}

namespace detail {

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t frame_seed(std::uint64_t seed, std::uint64_t snr_index, std::uint64_t frame_index) noexcept {
  return splitmix64(splitmix64(splitmix64(seed) ^ snr_index) ^ frame_index);
}

/// Everything a frame needs; shared read-only by all workers of one SNR point.
struct FrameContext {
  const ChannelMatrix& channel;
  const LedMapping& mapping;
  const Constellation& constellation;
  const BlockDetector& detector;
  int n_subcarriers;
  double noise_std;
  std::uint64_t seed;
  std::uint64_t snr_index;
};

/// Runs one OFDM frame through the whole chain and returns its bit errors.
inline std::uint64_t simulate_frame(const FrameContext& ctx, std::uint64_t frame_index) {
  std::mt19937_64 rng(frame_seed(ctx.seed, ctx.snr_index, frame_index));
  const auto n_bits = static_cast<std::size_t>(ctx.n_subcarriers * ctx.constellation.bits_per_symbol());
  Bits bits(n_bits);
  for (std::size_t i = 0; i < n_bits; i += 64) {
    std::uint64_t word = rng();
    for (std::size_t b = i; b < std::min(n_bits, i + 64); ++b, word >>= 1) bits[b] = word & 1u;
  }

  const RealStream t = ofdm_modulate(qam_map(bits, ctx.constellation));
  const auto k = static_cast<std::size_t>(ctx.mapping.n_pairs());
  const std::size_t n_blocks = (t.size() + k - 1) / k;
  RealStream padded(t);
  padded.resize(n_blocks * k, 0.0);

  std::normal_distribution<double> gauss(0.0, ctx.noise_std);
  RealStream estimate(padded.size());
  const Eigen::MatrixXd& h = ctx.channel.gains();
  Eigen::VectorXd z(h.cols()), y(h.rows());
  for (std::size_t blk = 0; blk < n_blocks; ++blk) {
    z.setZero();
    for (std::size_t l = 0; l < k; ++l) {
      const auto parts = sign_split(padded[blk * k + l]);
      z[ctx.mapping[static_cast<int>(l)].first] = parts.plus;
      z[ctx.mapping[static_cast<int>(l)].second] = parts.minus;
    }
    y.noalias() = h * z;
    for (Eigen::Index r = 0; r < y.size(); ++r) y[r] += gauss(rng);
    const Detection d = ctx.detector(y);
    std::copy(d.signed_block.begin(), d.signed_block.end(), estimate.begin() + static_cast<std::ptrdiff_t>(blk * k));
  }
  estimate.resize(t.size());
  return count_bit_errors(bits, qam_demap(ofdm_demodulate(estimate), ctx.constellation));
}

}  // namespace detail

/// Simulates one (SNR point, detector) until the stopping rule holds:
/// at least min_bits and min_errors, or max_bits. Batches are merged in
/// frame order, so the record is identical for any worker count.
inline BerRecord simulate_point(const SimConfig& cfg, const ChannelMatrix& h, const LedMapping& mapping,
                                DetectorKind kind, std::size_t snr_index, std::string selection_label) {
  const double snr_db = cfg.snr_grid_db.at(snr_index);
  const double noise_var = cfg.noise_var_override.value_or(sigma_from_snr(snr_db));
  const double filter_var = kind == DetectorKind::map ? std::max(noise_var, kMapFilterNoiseFloor) : noise_var;
  const BlockDetector detector(kind, h, mapping, filter_var, cfg.map_metric);
  const Constellation constellation(cfg.qam_order);
  const detail::FrameContext ctx{h, mapping, constellation, detector, cfg.n_subcarriers, std::sqrt(noise_var),
                                 cfg.seed, snr_index};
  const auto bits_per_frame = static_cast<std::uint64_t>(cfg.n_subcarriers) * constellation.bits_per_symbol();

  auto run_batch = [&](std::uint64_t batch) {
    std::uint64_t errors = 0;
    for (std::uint64_t f = batch * kFramesPerBatch; f < (batch + 1) * kFramesPerBatch; ++f)
      errors += detail::simulate_frame(ctx, f);
    return errors;
  };

  const auto workers = static_cast<std::uint64_t>(cfg.workers);
  std::uint64_t bits = 0, errors = 0, next_batch = 0;
  bool done = false;
  std::vector<std::uint64_t> wave(workers);
  while (!done) {
    if (workers == 1) {
      wave[0] = run_batch(next_batch);
    } else {
      std::vector<std::jthread> pool;
      pool.reserve(workers - 1);
      for (std::uint64_t w = 1; w < workers; ++w)
        pool.emplace_back([&, w] { wave[w] = run_batch(next_batch + w); });
      wave[0] = run_batch(next_batch);
    }  // pool joins here
    for (std::uint64_t w = 0; w < workers && !done; ++w) {
      bits += kFramesPerBatch * bits_per_frame;
      errors += wave[w];
      done = (bits >= cfg.min_bits && errors >= cfg.min_errors) || bits >= cfg.max_bits;
    }
    next_batch += workers;
  }

  BerRecord rec;
  rec.snr_db = snr_db;
  rec.bits_sent = bits;
  rec.bit_errors = errors;
  rec.ber = static_cast<double>(errors) / static_cast<double>(bits);
  rec.detector = kind;
  rec.qam_order = cfg.qam_order;
  rec.selection = std::move(selection_label);
  rec.seed = cfg.seed;
  return rec;
}

using ProgressFn = std::function<void(const BerRecord&)>;

/// Records ordered by (detector as listed in the config, SNR).
inline std::vector<BerRecord> run_ber_sweep(const SimConfig& cfg, const ChannelMatrix& h, const LedMapping& mapping,
                                            const ProgressFn& progress = {}) {
  validate(cfg);
  if (h.n_tx() != mapping.n_tx())
    throw DimensionError(fmt::format("channel has {} LEDs, mapping covers {}", h.n_tx(), mapping.n_tx()));
  const std::string label = fmt::format("{}:{}", to_string(cfg.selection), mapping.to_string());
  std::vector<BerRecord> records;
  for (DetectorKind kind : cfg.detectors) {
    for (std::size_t i = 0; i < cfg.snr_grid_db.size(); ++i) {
      records.push_back(simulate_point(cfg, h, mapping, kind, i, label));
      if (progress) progress(records.back());
    }
  }
  return records;
}

inline std::vector<BerRecord> run_ber_sweep(const SimConfig& cfg, const ProgressFn& progress = {}) {
  validate(cfg);
  const ChannelMatrix h = resolve_channel(cfg);
  const ResolvedMapping m = resolve_mapping(cfg, h);
  return run_ber_sweep(cfg, h, m.mapping, progress);
}

}  // namespace glim
