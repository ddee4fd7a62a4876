#pragma once

// Reading and writing of classic libpcap capture files, plus extraction of
// application payload bytes from Ethernet / raw-IP frames.

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "bytes.hpp"
#include "detail/error.hpp"

namespace msquid::pcap {

inline constexpr std::uint32_t kMagicMicros = 0xa1b2c3d4;
inline constexpr std::uint32_t kMagicNanos = 0xa1b23c4d;
inline constexpr std::size_t kGlobalHeaderLen = 24;
inline constexpr std::size_t kRecordHeaderLen = 16;

inline constexpr std::uint32_t kLinkEthernet = 1;
inline constexpr std::uint32_t kLinkRawIp = 101;

struct RawPacket {
  std::uint32_t ts_sec = 0;
  std::uint32_t ts_frac = 0;  // micro- or nanoseconds, see ts_nanos
  std::uint32_t original_len = 0;
  std::uint32_t link_type = kLinkEthernet;
  bool ts_nanos = false;
  Bytes data;

  std::uint32_t captured_len() const { return static_cast<std::uint32_t>(data.size()); }

  double timestamp() const {
    return static_cast<double>(ts_sec) + static_cast<double>(ts_frac) * (ts_nanos ? 1e-9 : 1e-6);
  }

  friend bool operator==(const RawPacket&, const RawPacket&) = default;
};

enum class PcapErrc {
  BadMagic,
  TruncatedHeader,
  TruncatedRecord,
  InconsistentRecord,  // incl_len > orig_len
};

// Parse failure. Packets decoded before the failing record are preserved.
class PcapError : public Error<PcapErrc> {
 public:
  PcapError(PcapErrc kind, const std::string& msg, std::size_t offset,
            std::vector<RawPacket> parsed = {})
      : Error(kind, msg), offset_(offset), parsed_(std::move(parsed)) {}

  std::size_t offset() const noexcept { return offset_; }
  const std::vector<RawPacket>& parsed() const noexcept { return parsed_; }

 private:
  std::size_t offset_;
  std::vector<RawPacket> parsed_;
};

inline std::vector<RawPacket> parse_pcap(ByteView file) {
  if (file.size() < 4) {
    throw PcapError(PcapErrc::TruncatedHeader, "file shorter than pcap magic", 0);
  }
  const std::uint32_t magic = detail::load_u32(file.data(), false);
  bool big_endian = false;
  bool nanos = false;
  switch (magic) {
    case kMagicMicros: break;
    case 0xd4c3b2a1: big_endian = true; break;
    case kMagicNanos: nanos = true; break;
    case 0x4d3cb2a1: big_endian = nanos = true; break;
    default:
      throw PcapError(PcapErrc::BadMagic, "not a pcap file (unrecognised magic)", 0);
  }
  if (file.size() < kGlobalHeaderLen) {
    throw PcapError(PcapErrc::TruncatedHeader, "pcap global header truncated", file.size());
  }
  const std::uint32_t link_type = detail::load_u32(file.data() + 20, big_endian);

  std::vector<RawPacket> packets;
  std::size_t pos = kGlobalHeaderLen;
  while (pos < file.size()) {
    if (file.size() - pos < kRecordHeaderLen) {
      throw PcapError(PcapErrc::TruncatedRecord,
                      "record header truncated at offset " + std::to_string(pos), pos,
                      std::move(packets));
    }
    const std::uint8_t* h = file.data() + pos;
    RawPacket pkt;
    pkt.ts_sec = detail::load_u32(h, big_endian);
    pkt.ts_frac = detail::load_u32(h + 4, big_endian);
    const std::uint32_t incl = detail::load_u32(h + 8, big_endian);
    pkt.original_len = detail::load_u32(h + 12, big_endian);
    pkt.link_type = link_type;
    pkt.ts_nanos = nanos;
    if (incl > pkt.original_len) {
      throw PcapError(PcapErrc::InconsistentRecord,
                      "record at offset " + std::to_string(pos) + " has incl_len > orig_len", pos,
                      std::move(packets));
    }
    pos += kRecordHeaderLen;
    if (file.size() - pos < incl) {
      throw PcapError(PcapErrc::TruncatedRecord,
                      "record at offset " + std::to_string(pos - kRecordHeaderLen) + " claims " +
                          std::to_string(incl) + " bytes, " + std::to_string(file.size() - pos) +
                          " remain",
                      pos - kRecordHeaderLen, std::move(packets));
    }
    pkt.data.assign(file.begin() + static_cast<std::ptrdiff_t>(pos),
                    file.begin() + static_cast<std::ptrdiff_t>(pos + incl));
    pos += incl;
    packets.push_back(std::move(pkt));
  }
  return packets;
}

struct WriteOptions {
  std::uint32_t link_type = kLinkEthernet;
  bool nanos = false;
  bool big_endian = false;
  std::uint32_t snaplen = 262144;
};

/// Minimal writer: the global header followed by one record per packet.
/// Per-packet link_type / ts_nanos are ignored in favour of the options.
inline Bytes write_pcap(const std::vector<RawPacket>& packets, const WriteOptions& opt = {}) {
  Bytes out;
  out.reserve(kGlobalHeaderLen + packets.size() * (kRecordHeaderLen + 64));
  const bool be = opt.big_endian;
  detail::store_u32(out, opt.nanos ? kMagicNanos : kMagicMicros, be);
  detail::store_u16(out, 2, be);
  detail::store_u16(out, 4, be);
  detail::store_u32(out, 0, be);  // thiszone
  detail::store_u32(out, 0, be);  // sigfigs
  detail::store_u32(out, opt.snaplen, be);
  detail::store_u32(out, opt.link_type, be);
  for (const auto& p : packets) {
    detail::store_u32(out, p.ts_sec, be);
    detail::store_u32(out, p.ts_frac, be);
    detail::store_u32(out, p.captured_len(), be);
    detail::store_u32(out, p.original_len, be);
    out.insert(out.end(), p.data.begin(), p.data.end());
  }
  return out;
}

enum class PayloadErrc {
  UnsupportedLinkType,
  UnsupportedProtocol,  // non-IP ethertype
  MalformedHeader,
};

using PayloadError = Error<PayloadErrc>;

namespace detail {

inline void require(bool ok, const char* what) {
  if (!ok) throw PayloadError(PayloadErrc::MalformedHeader, what);
}

inline ByteView strip_transport(ByteView l4, std::uint8_t proto) {
  if (proto == 6) {
    require(l4.size() >= 20, "TCP header truncated");
    const std::size_t doff = static_cast<std::size_t>(l4[12] >> 4) * 4;
    require(doff >= 20, "TCP data offset below 5");
    require(doff <= l4.size(), "TCP data offset beyond segment");
    return l4.subspan(doff);
  }
  if (proto == 17) {
    require(l4.size() >= 8, "UDP header truncated");
    const std::size_t ulen = msquid::detail::load_be16(l4.data() + 4);
    require(ulen >= 8, "UDP length below header size");
    // Snaplen may have cut the datagram short; keep what was captured.
    const std::size_t end = std::min(ulen, l4.size());
    return l4.subspan(8, end - 8);
  }
  return l4;
}

inline ByteView strip_ipv4(ByteView ip) {
  require(ip.size() >= 20, "IPv4 header truncated");
  require((ip[0] >> 4) == 4, "IPv4 version mismatch");
  const std::size_t ihl = static_cast<std::size_t>(ip[0] & 0x0f) * 4;
  require(ihl >= 20, "IPv4 IHL below 5");
  require(ihl <= ip.size(), "IPv4 IHL beyond captured bytes");
  const std::size_t total = msquid::detail::load_be16(ip.data() + 2);
  require(total >= ihl, "IPv4 total length below header length");
  // Ethernet trailers pad short frames; total length bounds the datagram.
  const std::size_t end = std::min(total, ip.size());
  ByteView body = ip.subspan(ihl, end - ihl);
  const std::uint16_t frag = msquid::detail::load_be16(ip.data() + 6);
  const bool fragmented = (frag & 0x2000) != 0 || (frag & 0x1fff) != 0;
  if (fragmented) return body;
  return strip_transport(body, ip[9]);
}

inline ByteView strip_ipv6(ByteView ip) {
  require(ip.size() >= 40, "IPv6 header truncated");
  require((ip[0] >> 4) == 6, "IPv6 version mismatch");
  const std::size_t plen = msquid::detail::load_be16(ip.data() + 4);
  const std::size_t end = std::min(plen + 40, ip.size());
  return strip_transport(ip.subspan(40, end - 40), ip[6]);
}

inline ByteView strip_ip(ByteView ip) {
  require(!ip.empty(), "empty IP packet");
  switch (ip[0] >> 4) {
    case 4: return strip_ipv4(ip);
    case 6: return strip_ipv6(ip);
    default: throw PayloadError(PayloadErrc::MalformedHeader, "unknown IP version");
  }
}

}  // namespace detail

/// Application bytes carried by a packet: link, IP and TCP/UDP headers removed.
/// Other IP protocols yield everything after the IP header.
inline Bytes extract_payload(const RawPacket& pkt) {
  ByteView frame(pkt.data);
  ByteView payload;
  if (pkt.link_type == kLinkEthernet) {
    detail::require(frame.size() >= 14, "Ethernet header truncated");
    std::size_t off = 12;
    std::uint16_t ethertype = msquid::detail::load_be16(frame.data() + off);
    while (ethertype == 0x8100 || ethertype == 0x88a8) {
      off += 4;
      detail::require(frame.size() >= off + 2, "802.1Q tag truncated");
      ethertype = msquid::detail::load_be16(frame.data() + off);
    }
    ByteView ip = frame.subspan(off + 2);
    if (ethertype == 0x0800) {
      payload = detail::strip_ipv4(ip);
    } else if (ethertype == 0x86dd) {
      payload = detail::strip_ipv6(ip);
    } else {
      throw PayloadError(PayloadErrc::UnsupportedProtocol,
                         "unsupported ethertype " + std::to_string(ethertype));
    }
  } else if (pkt.link_type == kLinkRawIp) {
    payload = detail::strip_ip(frame);
  } else {
    throw PayloadError(PayloadErrc::UnsupportedLinkType,
                       "unsupported link type " + std::to_string(pkt.link_type));
  }
  return Bytes(payload.begin(), payload.end());
}

}  // namespace msquid::pcap
