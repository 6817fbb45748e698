#pragma once

// LED selection: drop the most correlated LED pairs, then choose the pair
// partition whose worst active submatrix is best conditioned.

#include <Eigen/Dense>
#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <set>
#include <unordered_map>
#include <utility>
#include <vector>

#include "glim/channel.hpp"
#include "glim/detect.hpp"
#include "glim/error.hpp"
#include "glim/mapper.hpp"

namespace glim {

/// Relative tolerance under which two cosines or two condition numbers are
/// treated as equal. Symmetric room layouts produce exact ties that floating
/// point only reproduces to a few ulps.
inline constexpr double kSelectionTieTolerance = 1e-9;

/// Unordered pair of zero-based LED indices stored as (low, high).
using UnorderedPair = std::pair<int, int>;
using PairSet = std::set<UnorderedPair>;

inline UnorderedPair make_unordered(int a, int b) { return a < b ? UnorderedPair{a, b} : UnorderedPair{b, a}; }

/// Cosine of the angle between columns a and b of H.
inline double column_cosine(const ChannelMatrix& h, int a, int b) {
  if (a == b) throw ContractError("cosine needs two distinct LEDs");
  if (a < 0 || b < 0 || a >= h.n_tx() || b >= h.n_tx())
    throw ContractError(fmt::format("LED pair ({}, {}) outside 1..{}", a + 1, b + 1, h.n_tx()));
  const auto ha = h.gains().col(a);
  const auto hb = h.gains().col(b);
  const double na = ha.norm(), nb = hb.norm();
  if (na == 0.0 || nb == 0.0) throw DegenerateError(fmt::format("LED {} has a zero channel column", na == 0.0 ? a + 1 : b + 1));
  return ha.dot(hb) / (na * nb);
}

/// Largest over smallest singular value. A rank-deficient matrix yields +inf.
inline double condition_number(const Eigen::MatrixXd& m) {
  if (m.cols() == 0 || m.rows() < m.cols())
    throw ContractError(fmt::format("condition number needs rows >= cols, got {}x{}", m.rows(), m.cols()));
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(m);
  const auto& s = svd.singularValues();
  const double tol = static_cast<double>(m.rows()) * std::numeric_limits<double>::epsilon();
  const double smax = s(0), smin = s(s.size() - 1);
  if (smax == 0.0 || smin <= tol * smax) return std::numeric_limits<double>::infinity();
  return smax / smin;
}

/// Every perfect matching of LEDs 0..n_tx-1 that avoids `forbidden`, each in
/// canonical form. Pairs are built by repeatedly matching the smallest
/// unplaced LED with each larger unplaced LED in ascending order, which
/// fixes both the pair order within a candidate and the candidate order.
inline std::vector<LedMapping> enumerate_candidates(int n_tx, const PairSet& forbidden = {}) {
  if (n_tx < 2 || n_tx % 2 != 0) throw ContractError(fmt::format("LED count must be even, got {}", n_tx));
  if (n_tx / 2 > kMaxPairs) throw ContractError(fmt::format("at most {} LEDs are supported", 2 * kMaxPairs));
  std::vector<LedMapping> out;
  std::vector<bool> used(static_cast<std::size_t>(n_tx), false);
  std::vector<LedPair> partial;

  auto recurse = [&](auto&& self) -> void {
    int first = 0;
    while (first < n_tx && used[static_cast<std::size_t>(first)]) ++first;
    if (first == n_tx) {
      out.emplace_back(partial);
      return;
    }
    used[static_cast<std::size_t>(first)] = true;
    for (int second = first + 1; second < n_tx; ++second) {
      if (used[static_cast<std::size_t>(second)] || forbidden.contains({first, second})) continue;
      used[static_cast<std::size_t>(second)] = true;
      partial.push_back({first, second});
      self(self);
      partial.pop_back();
      used[static_cast<std::size_t>(second)] = false;
    }
    used[static_cast<std::size_t>(first)] = false;
  };
  recurse(recurse);
  return out;
}

namespace detail {

/// Condition numbers keyed by the set of lit LEDs; column order does not
/// change singular values, so candidates sharing a subset share the result.
class SubsetConditionCache {
 public:
  explicit SubsetConditionCache(const ChannelMatrix& h) : h_(h) {}

  double operator()(const LedMapping& m, std::uint32_t phi) {
    std::uint64_t leds = 0;
    for (int l = 0; l < m.n_pairs(); ++l) leds |= std::uint64_t{1} << ActiveSet{phi, m.n_pairs()}.column(m, l);
    if (auto it = cache_.find(leds); it != cache_.end()) return it->second;
    const double c = condition_number(active_columns(h_, m, ActiveSet{phi, m.n_pairs()}));
    cache_.emplace(leds, c);
    return c;
  }

 private:
  const ChannelMatrix& h_;
  std::unordered_map<std::uint64_t, double> cache_;
};

inline bool within_tolerance(double a, double reference) {
  if (std::isinf(reference)) return std::isinf(a);
  return std::abs(a - reference) <= kSelectionTieTolerance * std::abs(reference);
}

}  // namespace detail

/// Worst condition number over all 2^(nT/2) active submatrices.
inline double worst_condition(const ChannelMatrix& h, const LedMapping& m) {
  if (h.n_tx() != m.n_tx())
    throw DimensionError(fmt::format("channel has {} LEDs, mapping covers {}", h.n_tx(), m.n_tx()));
  detail::SubsetConditionCache cache(h);
  double worst = 0.0;
  for (std::uint32_t phi = 0; phi < (1u << m.n_pairs()); ++phi) worst = std::max(worst, cache(m, phi));
  return worst;
}

struct PairScore {
  UnorderedPair pair;
  double cosine = 0.0;
};

struct CandidateScore {
  LedMapping mapping;
  double worst_condition = 0.0;
  std::size_t canonical_index = 0;  // position in enumeration order
};

/// Everything the selection looked at, for reporting.
struct SelectionReport {
  std::vector<PairScore> pair_scores;
  double max_cosine = 0.0;
  PairSet removed;
  bool fallback = false;                 // the filter left no candidate and was ignored
  std::vector<CandidateScore> ranked;    // best first; ranked.front() is the selection

  const LedMapping& selected() const { return ranked.front().mapping; }
};

/// Ranks candidates by worst condition number. Values within the relative
/// tie tolerance of a group's leading value form one group, ordered by
/// canonical index, so the outcome does not depend on last-ulp noise.
inline std::vector<CandidateScore> rank_candidates(std::vector<CandidateScore> scores) {
  std::stable_sort(scores.begin(), scores.end(), [](const CandidateScore& a, const CandidateScore& b) {
    if (a.worst_condition != b.worst_condition) return a.worst_condition < b.worst_condition;
    return a.canonical_index < b.canonical_index;
  });
  for (std::size_t start = 0; start < scores.size();) {
    std::size_t end = start + 1;
    while (end < scores.size() && detail::within_tolerance(scores[end].worst_condition, scores[start].worst_condition))
      ++end;
    std::sort(scores.begin() + static_cast<std::ptrdiff_t>(start), scores.begin() + static_cast<std::ptrdiff_t>(end),
              [](const CandidateScore& a, const CandidateScore& b) { return a.canonical_index < b.canonical_index; });
    start = end;
  }
  return scores;
}

inline SelectionReport select_mapping_report(const ChannelMatrix& h) {
  if (h.n_tx() / 2 > kMaxPairs) throw ContractError(fmt::format("at most {} LEDs are supported", 2 * kMaxPairs));
  SelectionReport report;
  for (int a = 0; a < h.n_tx(); ++a)
    for (int b = a + 1; b < h.n_tx(); ++b) report.pair_scores.push_back({{a, b}, column_cosine(h, a, b)});

  report.max_cosine = -std::numeric_limits<double>::infinity();
  for (const auto& ps : report.pair_scores) report.max_cosine = std::max(report.max_cosine, ps.cosine);
  const double threshold = report.max_cosine - kSelectionTieTolerance * std::abs(report.max_cosine);
  for (const auto& ps : report.pair_scores)
    if (ps.cosine >= threshold) report.removed.insert(ps.pair);

  auto candidates = enumerate_candidates(h.n_tx(), report.removed);
  if (candidates.empty()) {
    report.fallback = true;
    candidates = enumerate_candidates(h.n_tx());
  }

  detail::SubsetConditionCache cache(h);
  std::vector<CandidateScore> scores;
  scores.reserve(candidates.size());
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    double worst = 0.0;
    for (std::uint32_t phi = 0; phi < (1u << candidates[i].n_pairs()); ++phi)
      worst = std::max(worst, cache(candidates[i], phi));
    scores.push_back({std::move(candidates[i]), worst, i});
  }
  report.ranked = rank_candidates(std::move(scores));
  return report;
}

inline LedMapping select_mapping(const ChannelMatrix& h) { return select_mapping_report(h).selected(); }

}  // namespace glim
