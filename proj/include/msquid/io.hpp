#pragma once

// File helpers and loading of sample files (pcap captures or raw byte dumps)
// into chunk streams.

#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <string>
#include <vector>

#include "bytes.hpp"
#include "detail/error.hpp"
#include "pcap.hpp"
#include "stream.hpp"

namespace msquid::io {

enum class IoErrc { CannotOpen, CannotWrite };
using IoError = Error<IoErrc>;

inline Bytes read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(IoErrc::CannotOpen, "cannot open " + path.string());
  return Bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline void write_file(const std::filesystem::path& path, ByteView data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(IoErrc::CannotWrite, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
  if (!out) throw IoError(IoErrc::CannotWrite, "write failed for " + path.string());
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  write_file(path, ByteView(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

/// .pcap/.cap are captures, .bin raw bytes; anything else is sniffed by magic.
inline bool looks_like_pcap(const std::filesystem::path& path, ByteView content) {
  const auto ext = path.extension().string();
  if (ext == ".pcap" || ext == ".cap") return true;
  if (ext == ".bin") return false;
  if (content.size() < 4) return false;
  const std::uint32_t m = msquid::detail::load_u32(content.data(), false);
  return m == pcap::kMagicMicros || m == 0xd4c3b2a1 || m == pcap::kMagicNanos || m == 0x4d3cb2a1;
}

/// Called for packets whose headers cannot be parsed: (packet index, reason).
using SkipHandler = std::function<void(std::size_t, const std::string&)>;

/// Payloads of every packet in a capture. Without a skip handler the first
/// malformed packet is an error; with one, it is reported and skipped.
inline std::vector<TimedPayload> capture_payloads(ByteView file, const SkipHandler& on_skip = {}) {
  std::vector<TimedPayload> out;
  const auto packets = pcap::parse_pcap(file);
  out.reserve(packets.size());
  for (std::size_t i = 0; i < packets.size(); ++i) {
    try {
      out.push_back({packets[i].timestamp(), pcap::extract_payload(packets[i])});
    } catch (const pcap::PayloadError& e) {
      if (!on_skip) {
        throw pcap::PayloadError(e.kind(), "packet " + std::to_string(i) + ": " + e.what());
      }
      on_skip(i, e.what());
    }
  }
  return out;
}

/// Chunks of a sample file; source_id defaults to the file stem.
inline std::vector<PayloadChunk> load_chunks(const std::filesystem::path& path,
                                             std::size_t capacity = kDefaultChunkCapacity,
                                             const SkipHandler& on_skip = {}) {
  const Bytes content = read_file(path);
  const std::string source_id = path.stem().string();
  if (looks_like_pcap(path, content)) {
    return chunk_stream(capture_payloads(content, on_skip), capacity, source_id);
  }
  return chunk_stream(std::vector<Bytes>{content}, capacity, source_id);
}

}  // namespace msquid::io
