#pragma once

// QAM mapping and OFDM (de)modulation into the interleaved real stream
// t = [x1R, x1I, x2R, x2I, ...] that feeds the LED mapper.

#include <fmt/format.h>
#include <unsupported/Eigen/FFT>

#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "glim/error.hpp"

namespace glim {

using Bits = std::vector<std::uint8_t>;
using Complex = std::complex<double>;
using RealStream = std::vector<double>;

/// Rectangular QAM with unit average energy. A point's bit label is read
/// most-significant-bit first: the leading bits pick the in-phase level, the
/// trailing bits the quadrature level. Per axis, one bit maps 0 -> +1, 1 -> -1
/// and two bits are Gray coded 00 -> -3, 01 -> -1, 11 -> +1, 10 -> +3.
/// 8QAM is the 4 x 2 grid (two in-phase bits, one quadrature bit).
class Constellation {
 public:
  explicit Constellation(int order) : order_(order) {
    int i_bits = 0, q_bits = 0;
    switch (order) {
      case 4: i_bits = 1, q_bits = 1; break;
      case 8: i_bits = 2, q_bits = 1; break;
      case 16: i_bits = 2, q_bits = 2; break;
      default: throw ConfigError(fmt::format("unsupported QAM order {} (expected 4, 8 or 16)", order));
    }
    bits_per_symbol_ = i_bits + q_bits;
    points_.resize(static_cast<std::size_t>(order));
    double energy = 0.0;
    for (int label = 0; label < order; ++label) {
      const int i_label = label >> q_bits;
      const int q_label = label & ((1 << q_bits) - 1);
      const Complex p(axis_level(i_label, i_bits), axis_level(q_label, q_bits));
      points_[static_cast<std::size_t>(label)] = p;
      energy += std::norm(p);
    }
    const double scale = 1.0 / std::sqrt(energy / order);
    for (auto& p : points_) p *= scale;
  }

  int order() const noexcept { return order_; }
  int bits_per_symbol() const noexcept { return bits_per_symbol_; }
  /// Indexed by bit label.
  std::span<const Complex> points() const noexcept { return points_; }

 private:
  static double axis_level(int label, int bits) {
    if (bits == 1) return label == 0 ? 1.0 : -1.0;
    static constexpr std::array<double, 4> gray2{-3.0, -1.0, 3.0, 1.0};  // 00, 01, 10, 11
    return gray2[static_cast<std::size_t>(label)];
  }

  int order_;
  int bits_per_symbol_ = 0;
  std::vector<Complex> points_;
};

inline std::vector<Complex> qam_map(std::span<const std::uint8_t> bits, const Constellation& c) {
  const auto k = static_cast<std::size_t>(c.bits_per_symbol());
  if (bits.size() % k != 0)
    throw DimensionError(fmt::format("{} bits do not divide into {}-bit symbols", bits.size(), k));
  std::vector<Complex> out;
  out.reserve(bits.size() / k);
  for (std::size_t i = 0; i < bits.size(); i += k) {
    std::size_t label = 0;
    for (std::size_t b = 0; b < k; ++b) label = (label << 1) | (bits[i + b] & 1u);
    out.push_back(c.points()[label]);
  }
  return out;
}

/// Nearest point in Euclidean distance; exact ties go to the lowest bit label.
inline Bits qam_demap(std::span<const Complex> symbols, const Constellation& c) {
  const int k = c.bits_per_symbol();
  Bits out;
  out.reserve(symbols.size() * static_cast<std::size_t>(k));
  const auto points = c.points();
  for (const Complex& s : symbols) {
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t label = 0; label < points.size(); ++label) {
      const double d = std::norm(s - points[label]);
      if (d < best_d) best_d = d, best = label;
    }
    for (int b = k - 1; b >= 0; --b) out.push_back(static_cast<std::uint8_t>((best >> b) & 1u));
  }
  return out;
}

namespace detail {

inline bool is_power_of_two(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

inline Eigen::FFT<double>& fft_engine() {
  // Plans are cached inside the engine, so keep one per thread.
  thread_local Eigen::FFT<double> engine;
  return engine;
}

}  // namespace detail

/// Unitary inverse DFT, then real/imaginary interleave. Unit-energy symbols
/// give unit-variance complex samples, i.e. E[t^2] = 1/2 per real entry.
inline RealStream ofdm_modulate(std::span<const Complex> symbols) {
  const std::size_t n = symbols.size();
  if (!detail::is_power_of_two(n))
    throw DimensionError(fmt::format("subcarrier count {} is not a power of two", n));
  std::vector<Complex> freq(symbols.begin(), symbols.end());
  std::vector<Complex> time;
  detail::fft_engine().inv(time, freq);  // includes 1/N
  const double scale = std::sqrt(static_cast<double>(n));
  RealStream t(2 * n);
  for (std::size_t i = 0; i < n; ++i) {
    t[2 * i] = time[i].real() * scale;
    t[2 * i + 1] = time[i].imag() * scale;
  }
  return t;
}

inline std::vector<Complex> ofdm_demodulate(std::span<const double> stream) {
  if (stream.size() % 2 != 0)
    throw DimensionError(fmt::format("real stream length {} is odd", stream.size()));
  const std::size_t n = stream.size() / 2;
  if (!detail::is_power_of_two(n))
    throw DimensionError(fmt::format("subcarrier count {} is not a power of two", n));
  std::vector<Complex> time(n);
  for (std::size_t i = 0; i < n; ++i) time[i] = Complex(stream[2 * i], stream[2 * i + 1]);
  std::vector<Complex> freq;
  detail::fft_engine().fwd(freq, time);
  const double scale = 1.0 / std::sqrt(static_cast<double>(n));
  for (auto& f : freq) f *= scale;
  return freq;
}

}  // namespace glim
