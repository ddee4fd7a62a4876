#pragma once

// Five-way byte classification used by the binary visualisation, with one
// display colour per class.

#include <array>
#include <cstdint>
#include <string>
#include <string_view>

#include "bytes.hpp"
#include "detail/error.hpp"

namespace msquid {

enum class ByteClass : std::uint8_t {
  Null = 0,
  Printable = 1,
  Control = 2,
  Extended = 3,
  Full = 4,
  Padding = 5,  // unused grid cell; never produced by classify_byte
};

inline constexpr std::size_t kDataClassCount = 5;
inline constexpr std::size_t kClassCount = 6;

inline constexpr ByteClass classify_byte(std::uint8_t v) {
  if (v == 0x00) return ByteClass::Null;
  if (v == 0xff) return ByteClass::Full;
  if (v >= 0x20 && v <= 0x7e) return ByteClass::Printable;
  if (v < 0x80) return ByteClass::Control;  // 0x01..0x1f, 0x7f
  return ByteClass::Extended;
}

struct Rgb {
  std::uint8_t r = 0, g = 0, b = 0;
  friend constexpr bool operator==(const Rgb&, const Rgb&) = default;
};

inline constexpr Rgb class_color(ByteClass c) {
  switch (c) {
    case ByteClass::Null: return {0, 0, 0};
    case ByteClass::Printable: return {0, 0, 255};
    case ByteClass::Control: return {0, 255, 0};
    case ByteClass::Extended: return {255, 0, 0};
    case ByteClass::Full: return {255, 255, 255};
    case ByteClass::Padding: return {128, 128, 128};
  }
  return {128, 128, 128};
}

inline constexpr std::string_view class_name(ByteClass c) {
  constexpr std::array<std::string_view, kClassCount> names{
      "null", "printable", "control", "extended", "full", "padding"};
  return names[static_cast<std::size_t>(c)];
}

enum class HistogramErrc { EmptyInput };
using HistogramError = Error<HistogramErrc>;

struct FeatureHistogram {
  std::array<std::uint64_t, kDataClassCount> counts{};
  std::uint64_t total = 0;

  std::uint64_t count(ByteClass c) const { return counts[static_cast<std::size_t>(c)]; }

  double frequency(ByteClass c) const {
    return total == 0 ? 0.0 : static_cast<double>(count(c)) / static_cast<double>(total);
  }

  FeatureHistogram& operator+=(const FeatureHistogram& o) {
    for (std::size_t i = 0; i < kDataClassCount; ++i) counts[i] += o.counts[i];
    total += o.total;
    return *this;
  }

  friend bool operator==(const FeatureHistogram&, const FeatureHistogram&) = default;
};

inline FeatureHistogram histogram(ByteView bytes) {
  if (bytes.empty()) throw HistogramError(HistogramErrc::EmptyInput, "histogram of empty input");
  FeatureHistogram h;
  for (std::uint8_t b : bytes) ++h.counts[static_cast<std::size_t>(classify_byte(b))];
  h.total = bytes.size();
  return h;
}

inline constexpr std::string_view kHistogramCsvHeader = "null,printable,control,extended,full,total";

/// `null,printable,control,extended,full,total`
inline std::string histogram_csv_row(const FeatureHistogram& h) {
  std::string row;
  for (std::size_t i = 0; i < kDataClassCount; ++i) {
    row += std::to_string(h.counts[i]);
    row += ',';
  }
  row += std::to_string(h.total);
  return row;
}

}  // namespace msquid
