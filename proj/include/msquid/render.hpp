#pragma once

// Hilbert layout of a byte chunk into a square grid of byte classes.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "byte_classes.hpp"
#include "bytes.hpp"
#include "detail/error.hpp"
#include "hilbert.hpp"

namespace msquid {

inline constexpr unsigned kDefaultOrder = 6;

enum class RenderErrc { ChunkTooLarge };
using RenderError = Error<RenderErrc>;

class VisImage {
 public:
  explicit VisImage(unsigned order)
      : order_(order), cells_(hilbert::cell_count(order), ByteClass::Padding) {}

  unsigned order() const noexcept { return order_; }
  std::uint32_t side() const noexcept { return hilbert::side(order_); }
  std::size_t data_len() const noexcept { return data_len_; }

  ByteClass at(std::uint32_t x, std::uint32_t y) const { return cells_[std::size_t{y} * side() + x]; }

  /// Row-major cells, index y * side + x.
  const std::vector<ByteClass>& cells() const noexcept { return cells_; }

  std::array<std::size_t, kClassCount> class_counts() const {
    std::array<std::size_t, kClassCount> n{};
    for (ByteClass c : cells_) ++n[static_cast<std::size_t>(c)];
    return n;
  }

 private:
  friend VisImage layout(ByteView, unsigned);

  unsigned order_;
  std::vector<ByteClass> cells_;
  std::size_t data_len_ = 0;
};

/// Byte i lands on Hilbert cell i; cells past the data are Padding.
inline VisImage layout(ByteView bytes, unsigned order = kDefaultOrder) {
  VisImage img(order);
  const std::uint64_t capacity = hilbert::cell_count(order);
  if (bytes.size() > capacity) {
    throw RenderError(RenderErrc::ChunkTooLarge,
                      "chunk of " + std::to_string(bytes.size()) + " bytes exceeds order-" +
                          std::to_string(order) + " capacity " + std::to_string(capacity));
  }
  const std::uint32_t side = img.side();
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    const auto cell = hilbert::d2xy(order, i);
    img.cells_[std::size_t{cell.y} * side + cell.x] = classify_byte(bytes[i]);
  }
  img.data_len_ = bytes.size();
  return img;
}

}  // namespace msquid
