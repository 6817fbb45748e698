#pragma once

// Receivers: zero forcing, linear MMSE and the conditional-MAP detector that
// searches every active-LED hypothesis with precomputed closed-form filters.

#include <Eigen/Dense>
#include <fmt/format.h>

#include <algorithm>
#include <cstdint>
#include <limits>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "glim/channel.hpp"
#include "glim/error.hpp"
#include "glim/mapper.hpp"

namespace glim {

struct Detection {
  std::vector<double> signed_block;  // nT/2 sample estimates
  ActiveSet active;
  double metric = 0.0;
};

namespace detail {

inline std::string active_set_label(std::uint32_t mask, int n_pairs) {
  std::string s;
  for (int l = 0; l < n_pairs; ++l) s += ((mask >> l) & 1u) ? '-' : '+';
  return s;
}

/// True when the smallest singular value is negligible next to the largest.
inline bool rank_deficient(const Eigen::MatrixXd& m) {
  if (m.cols() > m.rows()) return true;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(m);
  const auto& s = svd.singularValues();
  const double tol = static_cast<double>(std::max(m.rows(), m.cols())) * std::numeric_limits<double>::epsilon();
  return s.size() == 0 || s(0) == 0.0 || s(s.size() - 1) <= tol * s(0);
}

}  // namespace detail

/// Columns of H lit by active set `phi`, in pair order.
inline Eigen::MatrixXd active_columns(const ChannelMatrix& h, const LedMapping& m, const ActiveSet& phi) {
  Eigen::MatrixXd sub(h.n_rx(), m.n_pairs());
  for (int l = 0; l < m.n_pairs(); ++l) sub.col(l) = h.gains().col(phi.column(m, l));
  return sub;
}

/// Per-hypothesis filters A_phi = (Hphi^T Hphi + 2 s^2 I)^-1 Hphi^T for all
/// 2^(nT/2) active sets, indexed by ActiveSet::mask. Immutable after
/// construction and safe to share across threads.
class MapFilterBank {
 public:
  MapFilterBank(const ChannelMatrix& h, LedMapping mapping, double noise_var)
      : mapping_(std::move(mapping)), noise_var_(noise_var) {
    if (h.n_tx() != mapping_.n_tx())
      throw DimensionError(fmt::format("channel has {} LEDs, mapping covers {}", h.n_tx(), mapping_.n_tx()));
    if (!(noise_var >= 0.0)) throw ContractError("noise variance must be nonnegative");
    const int k = mapping_.n_pairs();
    const std::uint32_t count = 1u << k;
    filters_.reserve(count);
    columns_.reserve(count);
    const Eigen::MatrixXd ridge = 2.0 * noise_var * Eigen::MatrixXd::Identity(k, k);
    for (std::uint32_t mask = 0; mask < count; ++mask) {
      const ActiveSet phi{mask, k};
      Eigen::MatrixXd sub = active_columns(h, mapping_, phi);
      if (noise_var == 0.0 && detail::rank_deficient(sub))
        throw SingularityError(fmt::format("active set {} (index {}) has rank-deficient columns",
                                           detail::active_set_label(mask, k), mask));
      const Eigen::MatrixXd gram = sub.transpose() * sub + ridge;
      filters_.push_back(gram.ldlt().solve(sub.transpose()));
      columns_.push_back(std::move(sub));
    }
  }

  const LedMapping& mapping() const noexcept { return mapping_; }
  double noise_var() const noexcept { return noise_var_; }
  int n_rx() const noexcept { return static_cast<int>(columns_.front().rows()); }
  std::size_t size() const noexcept { return filters_.size(); }
  /// A_phi, (nT/2) x nR.
  const Eigen::MatrixXd& filter(std::uint32_t mask) const { return filters_.at(mask); }
  /// Hphi, nR x (nT/2).
  const Eigen::MatrixXd& columns(std::uint32_t mask) const { return columns_.at(mask); }

 private:
  LedMapping mapping_;
  double noise_var_;
  std::vector<Eigen::MatrixXd> filters_;
  std::vector<Eigen::MatrixXd> columns_;
};

inline MapFilterBank precompute_map_filters(const ChannelMatrix& h, const LedMapping& m, double noise_var) {
  return MapFilterBank(h, m, noise_var);
}

/// Where candidates are scored. `clipped` evaluates the metric at the
/// nonnegative estimate actually returned; `unclipped` scores the raw
/// closed-form solution and exists for comparison only.
enum class MetricPoint { clipped, unclipped };

/// Scores every hypothesis with ||y - Hphi t||^2 + 2 s^2 ||t||^2 at
/// t = [A_phi y]^+ and keeps the smallest; the first (lowest mask) wins ties.
inline Detection map_detect(const Eigen::VectorXd& y, const MapFilterBank& bank,
                            MetricPoint point = MetricPoint::clipped) {
  if (y.size() != bank.n_rx())
    throw DimensionError(fmt::format("received vector has {} entries, bank expects {}", y.size(), bank.n_rx()));
  const int k = bank.mapping().n_pairs();
  const double weight = 2.0 * bank.noise_var();
  Eigen::VectorXd raw(k), clipped(k), best(k), residual(y.size());
  double best_metric = std::numeric_limits<double>::infinity();
  std::uint32_t best_mask = 0;
  for (std::uint32_t mask = 0; mask < bank.size(); ++mask) {
    raw.noalias() = bank.filter(mask) * y;
    clipped = raw.cwiseMax(0.0);
    const Eigen::VectorXd& at = point == MetricPoint::clipped ? clipped : raw;
    residual = y;
    residual.noalias() -= bank.columns(mask) * at;
    const double metric = residual.squaredNorm() + weight * at.squaredNorm();
    if (metric < best_metric) {
      best_metric = metric;
      best_mask = mask;
      best = clipped;
    }
  }
  const ActiveSet active{best_mask, k};
  return {unmap_block(std::span<const double>(best.data(), static_cast<std::size_t>(k)), active), active,
          best_metric};
}

/// A linear equaliser W (nT x nR) applied to y, followed by per-pair
/// combining: signed = zhat[s(1)] - zhat[s(2)], lit LED = the larger entry.
class LinearFilter {
 public:
  LinearFilter(const ChannelMatrix& h, Eigen::MatrixXd weights) : channel_(h.gains()), weights_(std::move(weights)) {}

  const Eigen::MatrixXd& weights() const noexcept { return weights_; }

  Detection detect(const Eigen::VectorXd& y, const LedMapping& m) const {
    if (y.size() != channel_.rows())
      throw DimensionError(fmt::format("received vector has {} entries, channel has {} PDs", y.size(),
                                       channel_.rows()));
    if (m.n_tx() != channel_.cols())
      throw DimensionError(fmt::format("mapping covers {} LEDs, channel has {}", m.n_tx(), channel_.cols()));
    const Eigen::VectorXd z_hat = weights_ * y;
    Detection d;
    d.active.n_pairs = m.n_pairs();
    d.signed_block.resize(static_cast<std::size_t>(m.n_pairs()));
    for (int l = 0; l < m.n_pairs(); ++l) {
      const double pos = z_hat[m[l].first];
      const double neg = z_hat[m[l].second];
      d.signed_block[static_cast<std::size_t>(l)] = pos - neg;
      if (neg > pos) d.active.mask |= 1u << l;
    }
    d.metric = (y - channel_ * z_hat).squaredNorm();
    return d;
  }

 private:
  Eigen::MatrixXd channel_;
  Eigen::MatrixXd weights_;
};

/// Moore-Penrose pseudoinverse; H must have full column rank.
inline LinearFilter make_zf_filter(const ChannelMatrix& h) {
  if (detail::rank_deficient(h.gains()))
    throw SingularityError("channel matrix does not have full column rank; zero forcing is undefined");
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(h.gains(), Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Eigen::VectorXd inv_s = svd.singularValues().cwiseInverse();
  return LinearFilter(h, svd.matrixV() * inv_s.asDiagonal() * svd.matrixU().transpose());
}

/// (H^T H + 2 s^2 I)^-1 H^T; falls back to zero forcing when s^2 = 0.
inline LinearFilter make_mmse_filter(const ChannelMatrix& h, double noise_var) {
  if (!(noise_var >= 0.0)) throw ContractError("noise variance must be nonnegative");
  if (noise_var == 0.0) return make_zf_filter(h);
  const auto& g = h.gains();
  const Eigen::MatrixXd gram = g.transpose() * g + 2.0 * noise_var * Eigen::MatrixXd::Identity(g.cols(), g.cols());
  return LinearFilter(h, gram.ldlt().solve(g.transpose()));
}

inline Detection zf_detect(const Eigen::VectorXd& y, const ChannelMatrix& h, const LedMapping& m) {
  return make_zf_filter(h).detect(y, m);
}

inline Detection mmse_detect(const Eigen::VectorXd& y, const ChannelMatrix& h, double noise_var,
                             const LedMapping& m) {
  return make_mmse_filter(h, noise_var).detect(y, m);
}

enum class DetectorKind { zf, mmse, map };

inline std::string_view to_string(DetectorKind k) {
  switch (k) {
    case DetectorKind::zf: return "zf";
    case DetectorKind::mmse: return "mmse";
    case DetectorKind::map: return "map";
  }
  return "?";
}

inline DetectorKind parse_detector(std::string_view s) {
  if (s == "zf") return DetectorKind::zf;
  if (s == "mmse") return DetectorKind::mmse;
  if (s == "map") return DetectorKind::map;
  throw ConfigError(fmt::format("unknown detector '{}'", s));
}

/// A detector bound to one channel, mapping and noise level.
class BlockDetector {
 public:
  BlockDetector(DetectorKind kind, const ChannelMatrix& h, const LedMapping& m, double noise_var,
                MetricPoint map_metric = MetricPoint::clipped)
      : mapping_(m), map_metric_(map_metric), impl_(build(kind, h, m, noise_var)) {}

  Detection operator()(const Eigen::VectorXd& y) const {
    if (const auto* bank = std::get_if<MapFilterBank>(&impl_)) return map_detect(y, *bank, map_metric_);
    return std::get<LinearFilter>(impl_).detect(y, mapping_);
  }

 private:
  static std::variant<LinearFilter, MapFilterBank> build(DetectorKind kind, const ChannelMatrix& h,
                                                         const LedMapping& m, double noise_var) {
    switch (kind) {
      case DetectorKind::zf: return make_zf_filter(h);
      case DetectorKind::mmse: return make_mmse_filter(h, noise_var);
      case DetectorKind::map: return MapFilterBank(h, m, noise_var);
    }
    throw ContractError("unknown detector kind");
  }

  LedMapping mapping_;
  MetricPoint map_metric_;
  std::variant<LinearFilter, MapFilterBank> impl_;
};

}  // namespace glim
