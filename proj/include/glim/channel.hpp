#pragma once

// Optical MIMO channel matrices: indoor line-of-sight Lambertian model and
// plain-text CSV import/export.

#include <Eigen/Dense>
#include <fmt/format.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <istream>
#include <numbers>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "glim/error.hpp"

namespace glim {

/// Real nonnegative nR x nT optical gain matrix. Columns are LEDs, rows are
/// photodetectors. Immutable once constructed.
class ChannelMatrix {
 public:
  explicit ChannelMatrix(Eigen::MatrixXd gains) : gains_(std::move(gains)) {
    if (gains_.rows() < 1) throw DimensionError("channel needs at least one photodetector");
    if (gains_.cols() < 2 || gains_.cols() % 2 != 0)
      throw DimensionError(fmt::format("LED count must be even and >= 2, got {}", gains_.cols()));
    for (Eigen::Index c = 0; c < gains_.cols(); ++c) {
      for (Eigen::Index r = 0; r < gains_.rows(); ++r) {
        const double g = gains_(r, c);
        if (!std::isfinite(g) || g < 0.0)
          throw ContractError(fmt::format("channel gain ({}, {}) = {} is not a finite nonnegative value",
                                          r + 1, c + 1, g));
      }
      if (gains_.col(c).squaredNorm() == 0.0)
        throw DegenerateError(fmt::format("LED {} reaches no photodetector (all-zero column)", c + 1));
    }
  }

  int n_rx() const noexcept { return static_cast<int>(gains_.rows()); }
  int n_tx() const noexcept { return static_cast<int>(gains_.cols()); }
  const Eigen::MatrixXd& gains() const noexcept { return gains_; }
  double operator()(int rx, int tx) const { return gains_(rx, tx); }

  /// Copy scaled so that the mean squared column norm is 1.
  ChannelMatrix normalized() const {
    const double mean_energy = gains_.colwise().squaredNorm().mean();
    return ChannelMatrix(gains_ / std::sqrt(mean_energy));
  }

  friend bool operator==(const ChannelMatrix& a, const ChannelMatrix& b) {
    return a.gains_.rows() == b.gains_.rows() && a.gains_.cols() == b.gains_.cols() &&
           a.gains_ == b.gains_;
  }

 private:
  Eigen::MatrixXd gains_;
};

/// Emitters point straight down, detectors straight up. Lengths in meters.
struct RoomGeometry {
  std::vector<Eigen::Vector3d> led_positions;
  std::vector<Eigen::Vector3d> pd_positions;
  double lambertian_order = 1.0;
  double pd_area = 1e-4;
  double pd_fov_half_angle = 85.0 * std::numbers::pi / 180.0;
};

/// `count` points on the perimeter of an axis-aligned square of side `side`
/// centred on the origin at height `z`. Points are evenly spaced starting at a
/// corner, so eight points land on the four corners and four edge midpoints.
/// Numbering is row-major from the top-left (largest y first, then smallest x).
/// A single point sits at the centre.
inline std::vector<Eigen::Vector3d> square_perimeter_layout(int count, double side, double z) {
  if (count < 1) throw ContractError("layout needs at least one point");
  if (count == 1) return {Eigen::Vector3d(0.0, 0.0, z)};
  const double half = side / 2.0;
  const double step = 4.0 * side / count;
  std::vector<Eigen::Vector3d> pts;
  pts.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    // Walk clockwise from the top-left corner.
    double s = i * step;
    double x = 0.0, y = 0.0;
    if (s < side) {
      x = -half + s, y = half;
    } else if (s < 2 * side) {
      x = half, y = half - (s - side);
    } else if (s < 3 * side) {
      x = half - (s - 2 * side), y = -half;
    } else {
      x = -half, y = -half + (s - 3 * side);
    }
    pts.emplace_back(x, y, z);
  }
  constexpr double eps = 1e-9;
  std::stable_sort(pts.begin(), pts.end(), [](const Eigen::Vector3d& a, const Eigen::Vector3d& b) {
    if (std::abs(a.y() - b.y()) > eps) return a.y() > b.y();
    return a.x() < b.x() - eps;
  });
  return pts;
}

/// Default room: LEDs on a 4 m square, PDs on a 1 m square `separation`
/// meters below, m = 1, 1 cm^2 detectors, 85 degree field of view.
inline RoomGeometry default_geometry(int n_tx = 8, int n_rx = 8, double separation = 2.15) {
  RoomGeometry g;
  g.led_positions = square_perimeter_layout(n_tx, 4.0, separation);
  g.pd_positions = square_perimeter_layout(n_rx, 1.0, 0.0);
  return g;
}

inline void validate(const RoomGeometry& g) {
  for (std::size_t l = 0; l < g.led_positions.size(); ++l)
    for (std::size_t r = 0; r < g.pd_positions.size(); ++r)
      if ((g.led_positions[l] - g.pd_positions[r]).norm() == 0.0)
        throw DegenerateError(fmt::format("LED {} and PD {} coincide", l + 1, r + 1));

  const auto n_tx = g.led_positions.size();
  if (n_tx < 2 || n_tx % 2 != 0)
    throw ContractError(fmt::format("LED count must be even and >= 2, got {}", n_tx));
  if (g.pd_positions.empty()) throw ContractError("geometry needs at least one photodetector");
  if (!(g.lambertian_order >= 1.0)) throw ContractError("Lambertian order must be >= 1");
  if (!(g.pd_area > 0.0)) throw ContractError("photodetector area must be positive");
  if (!(g.pd_fov_half_angle > 0.0 && g.pd_fov_half_angle <= std::numbers::pi / 2))
    throw ContractError("field-of-view half-angle must lie in (0, pi/2]");

  auto distinct = [](const std::vector<Eigen::Vector3d>& pts, const char* what) {
    for (std::size_t i = 0; i < pts.size(); ++i)
      for (std::size_t j = i + 1; j < pts.size(); ++j)
        if (pts[i] == pts[j])
          throw DegenerateError(fmt::format("{} {} and {} share a position", what, i + 1, j + 1));
  };
  distinct(g.led_positions, "LEDs");
  distinct(g.pd_positions, "PDs");

  double lowest_led = g.led_positions.front().z();
  for (const auto& p : g.led_positions) lowest_led = std::min(lowest_led, p.z());
  for (std::size_t r = 0; r < g.pd_positions.size(); ++r)
    if (!(g.pd_positions[r].z() < lowest_led))
      throw DegenerateError(fmt::format("PD {} is not strictly below every LED", r + 1));
}

/// Line-of-sight gain: A (m+1) / (2 pi d^2) cos^m(phi) cos(psi), zero outside
/// the detector field of view.
inline ChannelMatrix build_lambertian_channel(const RoomGeometry& g) {
  validate(g);
  const auto n_rx = static_cast<Eigen::Index>(g.pd_positions.size());
  const auto n_tx = static_cast<Eigen::Index>(g.led_positions.size());
  const double cos_fov = std::cos(g.pd_fov_half_angle);
  Eigen::MatrixXd h(n_rx, n_tx);
  for (Eigen::Index r = 0; r < n_rx; ++r) {
    for (Eigen::Index l = 0; l < n_tx; ++l) {
      const Eigen::Vector3d delta = g.led_positions[l] - g.pd_positions[r];
      const double d2 = delta.squaredNorm();
      const double cos_angle = delta.z() / std::sqrt(d2);  // both normals are vertical
      if (cos_angle < cos_fov) {
        h(r, l) = 0.0;
        continue;
      }
      const double m = g.lambertian_order;
      h(r, l) = g.pd_area * (m + 1.0) / (2.0 * std::numbers::pi * d2) * std::pow(cos_angle, m) * cos_angle;
    }
  }
  return ChannelMatrix(std::move(h));
}

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

}  // namespace detail

/// One PD row per line, nT comma-separated decimals, no header. Blank lines
/// are skipped.
inline ChannelMatrix load_channel_csv(std::istream& in) {
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string_view text = detail::trim(line);
    if (text.empty()) continue;
    const std::size_t row = rows.size() + 1;
    std::vector<double> values;
    std::size_t col = 0;
    while (true) {
      ++col;
      const auto comma = text.find(',');
      std::string_view token = detail::trim(text.substr(0, comma));
      double v = 0.0;
      const char* end = token.data() + token.size();
      auto [ptr, ec] = std::from_chars(token.data(), end, v);
      if (token.empty() || ec != std::errc() || ptr != end || !std::isfinite(v))
        throw ParseError(fmt::format("row {}, column {}: '{}' is not a number", row, col, token), row, col);
      if (v < 0.0)
        throw ParseError(fmt::format("row {}, column {}: negative gain {}", row, col, v), row, col);
      values.push_back(v);
      if (comma == std::string_view::npos) break;
      text.remove_prefix(comma + 1);
    }
    if (!rows.empty() && values.size() != rows.front().size())
      throw ParseError(fmt::format("row {} has {} columns, expected {}", row, values.size(), rows.front().size()),
                       row, 0);
    rows.push_back(std::move(values));
  }
  if (rows.empty()) throw ParseError("channel file is empty", 0, 0);
  const std::size_t cols = rows.front().size();
  if (cols % 2 != 0)
    throw ParseError(fmt::format("LED count (columns) must be even, got {}", cols), 1, cols);

  Eigen::MatrixXd h(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols));
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < cols; ++c) h(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
  return ChannelMatrix(std::move(h));
}

inline ChannelMatrix load_channel_csv(std::string_view text) {
  std::istringstream in{std::string(text)};
  return load_channel_csv(in);
}

/// Writes 17 significant digits so that load_channel_csv reproduces every gain exactly.
inline void save_channel_csv(const ChannelMatrix& h, std::ostream& out) {
  for (int r = 0; r < h.n_rx(); ++r) {
    for (int c = 0; c < h.n_tx(); ++c) {
      if (c) out << ',';
      out << fmt::format("{:.17g}", h(r, c));
    }
    out << '\n';
  }
}

}  // namespace glim
