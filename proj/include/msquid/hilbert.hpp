#pragma once

// Hilbert curve index <-> cell mapping on a 2^order x 2^order grid.
// x is the column, y the row, origin top-left. The order-1 curve visits
// (0,0), (0,1), (1,1), (1,0).

#include <cstdint>
#include <string>

#include "detail/error.hpp"

namespace msquid::hilbert {

inline constexpr unsigned kMaxOrder = 15;

struct Cell {
  std::uint32_t x = 0;
  std::uint32_t y = 0;
  friend constexpr bool operator==(const Cell&, const Cell&) = default;
};

enum class HilbertErrc { BadOrder, IndexOutOfRange, CoordOutOfRange };
using HilbertError = Error<HilbertErrc>;

inline constexpr std::uint64_t cell_count(unsigned order) { return std::uint64_t{1} << (2 * order); }
inline constexpr std::uint32_t side(unsigned order) { return std::uint32_t{1} << order; }

namespace detail {

inline constexpr void rotate(std::uint32_t n, std::uint32_t& x, std::uint32_t& y, std::uint32_t rx,
                             std::uint32_t ry) {
  if (ry == 0) {
    if (rx == 1) {
      x = n - 1 - x;
      y = n - 1 - y;
    }
    std::uint32_t t = x;
    x = y;
    y = t;
  }
}

inline void check_order(unsigned order) {
  if (order == 0 || order > kMaxOrder) {
    throw HilbertError(HilbertErrc::BadOrder, "Hilbert order must be in [1, 15], got " +
                                                   std::to_string(order));
  }
}

}  // namespace detail

inline Cell d2xy(unsigned order, std::uint64_t d) {
  detail::check_order(order);
  if (d >= cell_count(order)) {
    throw HilbertError(HilbertErrc::IndexOutOfRange,
                       "Hilbert index " + std::to_string(d) + " out of range for order " +
                           std::to_string(order));
  }
  const std::uint32_t n = side(order);
  std::uint32_t x = 0, y = 0;
  std::uint64_t t = d;
  for (std::uint32_t s = 1; s < n; s *= 2) {
    const auto rx = static_cast<std::uint32_t>(1 & (t / 2));
    const auto ry = static_cast<std::uint32_t>(1 & (t ^ rx));
    detail::rotate(s, x, y, rx, ry);
    x += s * rx;
    y += s * ry;
    t /= 4;
  }
  return {x, y};
}

inline std::uint64_t xy2d(unsigned order, std::uint32_t x, std::uint32_t y) {
  detail::check_order(order);
  const std::uint32_t n = side(order);
  if (x >= n || y >= n) {
    throw HilbertError(HilbertErrc::CoordOutOfRange,
                       "cell (" + std::to_string(x) + "," + std::to_string(y) +
                           ") outside order-" + std::to_string(order) + " grid");
  }
  std::uint64_t d = 0;
  for (std::uint32_t s = n / 2; s > 0; s /= 2) {
    const std::uint32_t rx = (x & s) > 0;
    const std::uint32_t ry = (y & s) > 0;
    d += std::uint64_t{s} * s * ((3 * rx) ^ ry);
    detail::rotate(n, x, y, rx, ry);
  }
  return d;
}

}  // namespace msquid::hilbert
