#pragma once

// Model container: "MSQD", u16 version (1), then for each parameter block in
// fixed order a u32 element count followed by that many little-endian IEEE-754
// doubles. All integers little-endian.

#include <bit>
#include <cstdint>
#include <cstring>
#include <string>

#include "bytes.hpp"
#include "cnn.hpp"

namespace msquid::cnn {

inline constexpr char kModelMagic[4] = {'M', 'S', 'Q', 'D'};
inline constexpr std::uint16_t kModelVersion = 1;

inline Bytes save_model(const CnnModel& model) {
  Bytes out(kModelMagic, kModelMagic + 4);
  msquid::detail::store_u16(out, kModelVersion, false);
  for (const auto* block : model.blocks()) {
    msquid::detail::store_u32(out, static_cast<std::uint32_t>(block->size()), false);
    for (double v : *block) {
      const auto bits = std::bit_cast<std::uint64_t>(v);
      for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
    }
  }
  return out;
}

inline CnnModel load_model(ByteView bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kModelMagic, 4) != 0) {
    throw CnnError(CnnErrc::BadMagic, "not a model file (bad magic)");
  }
  if (bytes.size() < 6) throw CnnError(CnnErrc::SizeMismatch, "model file truncated");
  const std::uint16_t version = msquid::detail::load_u16(bytes.data() + 4, false);
  if (version != kModelVersion) {
    throw CnnError(CnnErrc::VersionMismatch,
                   "model format version " + std::to_string(version) + " unsupported");
  }
  std::size_t pos = 6;
  auto read_block = [&](std::vector<double>& dst) {
    if (bytes.size() - pos < 4) throw CnnError(CnnErrc::SizeMismatch, "model file truncated");
    const std::uint32_t len = msquid::detail::load_u32(bytes.data() + pos, false);
    pos += 4;
    if ((bytes.size() - pos) / 8 < len) throw CnnError(CnnErrc::SizeMismatch, "model file truncated");
    dst.resize(len);
    for (std::uint32_t i = 0; i < len; ++i) {
      std::uint64_t bits = 0;
      for (int b = 0; b < 8; ++b) bits |= std::uint64_t{bytes[pos + b]} << (8 * b);
      dst[i] = std::bit_cast<double>(bits);
      pos += 8;
    }
  };
  CnnModel raw;
  for (auto* block : raw.blocks()) read_block(*block);
  if (pos != bytes.size()) throw CnnError(CnnErrc::SizeMismatch, "trailing bytes after model");

  // Recover the input side from the dense1 fan-in, then check every block.
  const std::size_t flat = raw.dense1_w.size() / kHidden;
  const std::size_t quarter = static_cast<std::size_t>(std::llround(std::sqrt(flat / kConv2Filters)));
  const std::size_t side = quarter * 4;
  if (side == 0 || raw.dense1_w.size() % kHidden != 0 ||
      CnnModel::flat_size_for(side) != flat) {
    throw CnnError(CnnErrc::SizeMismatch, "dense1 block size does not match any input side");
  }
  CnnModel model = CnnModel::zeros(side);
  auto want = model.blocks();
  auto got = raw.blocks();
  for (std::size_t k = 0; k < want.size(); ++k) {
    if (want[k]->size() != got[k]->size()) {
      throw CnnError(CnnErrc::SizeMismatch, "parameter block " + std::to_string(k) +
                                                " has wrong length");
    }
    *want[k] = std::move(*got[k]);
  }
  return model;
}

}  // namespace msquid::cnn
