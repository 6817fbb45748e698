#pragma once

// GLIM spatial mapping: each real sample is split into its positive and
// negative parts, which drive the two LEDs of a dedicated pair.

#include <Eigen/Dense>
#include <fmt/format.h>

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "glim/channel.hpp"
#include "glim/error.hpp"

namespace glim {

/// Bounded so an active set fits in a 32-bit mask and the MAP filter bank stays finite.
inline constexpr int kMaxPairs = 16;

/// Zero-based LED indices. `first` carries the positive part of the sample,
/// `second` the negative part.
struct LedPair {
  int first = 0;
  int second = 0;

  friend bool operator==(const LedPair&, const LedPair&) = default;
};

/// Ordered partition of the LEDs into pairs s_1 ... s_{nT/2}. The first pair
/// starts with LED 1 (index 0).
class LedMapping {
 public:
  explicit LedMapping(std::vector<LedPair> pairs) : pairs_(std::move(pairs)) {
    const auto n_pairs = static_cast<int>(pairs_.size());
    if (n_pairs < 1 || n_pairs > kMaxPairs)
      throw ContractError(fmt::format("mapping must hold between 1 and {} pairs, got {}", kMaxPairs, n_pairs));
    const int n_tx = 2 * n_pairs;
    std::vector<bool> seen(static_cast<std::size_t>(n_tx), false);
    for (const auto& p : pairs_) {
      for (int led : {p.first, p.second}) {
        if (led < 0 || led >= n_tx)
          throw ContractError(fmt::format("LED {} outside 1..{}", led + 1, n_tx));
        if (seen[static_cast<std::size_t>(led)])
          throw ContractError(fmt::format("LED {} appears in more than one pair", led + 1));
        seen[static_cast<std::size_t>(led)] = true;
      }
    }
    if (pairs_.front().first != 0) throw ContractError("the first pair must start with LED 1");
  }

  /// s_l = {2l-1, 2l}: the arrangement used when no selection is applied.
  static LedMapping sequential(int n_tx) {
    if (n_tx < 2 || n_tx % 2 != 0) throw ContractError(fmt::format("LED count must be even, got {}", n_tx));
    std::vector<LedPair> pairs;
    for (int l = 0; l < n_tx; l += 2) pairs.push_back({l, l + 1});
    return LedMapping(std::move(pairs));
  }

  /// Parses "1-3,2-4" or "1-3|2-4" (1-based LED numbers).
  static LedMapping parse(std::string_view text) {
    std::vector<LedPair> pairs;
    std::size_t pos = 0;
    while (pos <= text.size()) {
      const auto next = text.find_first_of(",|", pos);
      const std::string_view token = text.substr(pos, next == std::string_view::npos ? text.npos : next - pos);
      const auto dash = token.find('-');
      if (dash == std::string_view::npos) throw ConfigError(fmt::format("malformed LED pair '{}'", token));
      pairs.push_back({parse_led(token.substr(0, dash)), parse_led(token.substr(dash + 1))});
      if (next == std::string_view::npos) break;
      pos = next + 1;
    }
    try {
      return LedMapping(std::move(pairs));
    } catch (const ContractError& e) {
      throw ConfigError(fmt::format("invalid LED mapping '{}': {}", text, e.what()));
    }
  }

  int n_tx() const noexcept { return 2 * n_pairs(); }
  int n_pairs() const noexcept { return static_cast<int>(pairs_.size()); }
  const std::vector<LedPair>& pairs() const noexcept { return pairs_; }
  const LedPair& operator[](int l) const { return pairs_[static_cast<std::size_t>(l)]; }

  /// Each pair written low-high, pairs ordered by their lower LED.
  LedMapping canonical() const {
    auto pairs = pairs_;
    for (auto& p : pairs)
      if (p.first > p.second) std::swap(p.first, p.second);
    std::sort(pairs.begin(), pairs.end(), [](const LedPair& a, const LedPair& b) { return a.first < b.first; });
    return LedMapping(std::move(pairs));
  }

  /// "1-3|2-4|5-7|6-8"
  std::string to_string() const {
    std::string s;
    for (const auto& p : pairs_) {
      if (!s.empty()) s += '|';
      s += fmt::format("{}-{}", p.first + 1, p.second + 1);
    }
    return s;
  }

  friend bool operator==(const LedMapping&, const LedMapping&) = default;

 private:
  static int parse_led(std::string_view s) {
    int v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (s.empty() || ec != std::errc() || ptr != s.data() + s.size() || v < 1)
      throw ConfigError(fmt::format("'{}' is not an LED number", s));
    return v - 1;
  }

  std::vector<LedPair> pairs_;
};

/// One lit LED per pair. Bit l clear selects s_l(1) (positive sample), bit l
/// set selects s_l(2) (negative sample). The mask doubles as the candidate's
/// enumeration index.
struct ActiveSet {
  std::uint32_t mask = 0;
  int n_pairs = 0;

  bool negative(int l) const noexcept { return (mask >> l) & 1u; }
  int column(const LedMapping& m, int l) const { return negative(l) ? m[l].second : m[l].first; }

  friend bool operator==(const ActiveSet&, const ActiveSet&) = default;
};

struct SignParts {
  double plus = 0.0;
  double minus = 0.0;
};

/// sgn(0) = +1, so zero lands (harmlessly) on the positive branch.
constexpr SignParts sign_split(double v) noexcept {
  const double sgn = v >= 0.0 ? 1.0 : -1.0;
  SignParts parts{(sgn + 1.0) / 2.0 * v, (sgn - 1.0) / 2.0 * v};
  // 0 * v is -0.0 for negative v; report +0.0.
  if (parts.plus == 0.0) parts.plus = 0.0;
  if (parts.minus == 0.0) parts.minus = 0.0;
  return parts;
}

/// One channel use.
struct GlimBlock {
  std::vector<double> signed_samples;  // nT/2 entries
  Eigen::VectorXd z;                   // nT nonnegative LED intensities
};

/// z[s_l(1)] = t_l^+, z[s_l(2)] = t_l^-.
inline GlimBlock map_block(std::span<const double> samples, const LedMapping& m) {
  if (static_cast<int>(samples.size()) != m.n_pairs())
    throw DimensionError(fmt::format("block holds {} samples but the mapping has {} pairs", samples.size(),
                                     m.n_pairs()));
  GlimBlock block{std::vector<double>(samples.begin(), samples.end()), Eigen::VectorXd::Zero(m.n_tx())};
  for (int l = 0; l < m.n_pairs(); ++l) {
    const auto parts = sign_split(samples[static_cast<std::size_t>(l)]);
    block.z[m[l].first] = parts.plus;
    block.z[m[l].second] = parts.minus;
  }
  return block;
}

/// The active set actually used to transmit `samples`.
inline ActiveSet active_set_of(std::span<const double> samples) {
  ActiveSet a{0u, static_cast<int>(samples.size())};
  for (std::size_t l = 0; l < samples.size(); ++l)
    if (samples[l] < 0.0) a.mask |= 1u << l;
  return a;
}

inline std::vector<double> unmap_block(std::span<const double> magnitudes, const ActiveSet& active) {
  if (static_cast<int>(magnitudes.size()) != active.n_pairs)
    throw DimensionError(fmt::format("{} magnitudes for an active set over {} pairs", magnitudes.size(),
                                     active.n_pairs));
  std::vector<double> out(magnitudes.size());
  for (std::size_t l = 0; l < magnitudes.size(); ++l) {
    if (!(magnitudes[l] >= 0.0))
      throw ContractError(fmt::format("magnitude {} at slot {} is negative", magnitudes[l], l + 1));
    out[l] = active.negative(static_cast<int>(l)) ? -magnitudes[l] : magnitudes[l];
  }
  return out;
}

/// y = H z + n.
inline Eigen::VectorXd forward_model(const Eigen::VectorXd& z, const ChannelMatrix& h,
                                     std::span<const double> noise) {
  if (z.size() != h.n_tx())
    throw DimensionError(fmt::format("LED vector has {} entries, channel has {} LEDs", z.size(), h.n_tx()));
  if (static_cast<int>(noise.size()) != h.n_rx())
    throw DimensionError(fmt::format("noise has {} entries, channel has {} PDs", noise.size(), h.n_rx()));
  Eigen::VectorXd y = h.gains() * z;
  for (int r = 0; r < h.n_rx(); ++r) y[r] += noise[static_cast<std::size_t>(r)];
  return y;
}

inline Eigen::VectorXd forward_model(const GlimBlock& block, const ChannelMatrix& h, std::span<const double> noise) {
  return forward_model(block.z, h, noise);
}

}  // namespace glim
