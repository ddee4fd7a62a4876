#pragma once

// Payload chunking, timed replay schedules and the chunk-source abstraction
// that feeds the detection pipeline.

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "bounded_queue.hpp"
#include "bytes.hpp"
#include "detail/error.hpp"

namespace msquid {

inline constexpr std::size_t kDefaultChunkCapacity = 4096;

struct PayloadChunk {
  Bytes bytes;
  std::string source_id;
  std::uint64_t seq_no = 0;
  double ts = 0.0;

  friend bool operator==(const PayloadChunk&, const PayloadChunk&) = default;
};

struct TimedPayload {
  double ts = 0.0;
  Bytes bytes;
};

/// Concatenate payloads and cut into chunks of exactly `capacity` bytes; the
/// tail is emitted as a shorter chunk. Each chunk takes the timestamp of the
/// payload that contributed its first byte.
inline std::vector<PayloadChunk> chunk_stream(const std::vector<TimedPayload>& payloads,
                                              std::size_t capacity,
                                              const std::string& source_id = {}) {
  if (capacity == 0) capacity = 1;
  std::vector<PayloadChunk> chunks;
  PayloadChunk cur;
  auto flush = [&] {
    cur.source_id = source_id;
    cur.seq_no = chunks.size();
    chunks.push_back(std::move(cur));
    cur = PayloadChunk{};
    cur.bytes.reserve(capacity);
  };
  cur.bytes.reserve(capacity);
  for (const auto& p : payloads) {
    std::size_t off = 0;
    while (off < p.bytes.size()) {
      if (cur.bytes.empty()) cur.ts = p.ts;
      const std::size_t take = std::min(capacity - cur.bytes.size(), p.bytes.size() - off);
      cur.bytes.insert(cur.bytes.end(), p.bytes.begin() + static_cast<std::ptrdiff_t>(off),
                       p.bytes.begin() + static_cast<std::ptrdiff_t>(off + take));
      off += take;
      if (cur.bytes.size() == capacity) flush();
    }
  }
  if (!cur.bytes.empty()) flush();
  return chunks;
}

inline std::vector<PayloadChunk> chunk_stream(const std::vector<Bytes>& payloads,
                                              std::size_t capacity,
                                              const std::string& source_id = {}) {
  std::vector<TimedPayload> timed;
  timed.reserve(payloads.size());
  for (const auto& p : payloads) timed.push_back({0.0, p});
  return chunk_stream(timed, capacity, source_id);
}

struct ScheduledChunk {
  double delay = 0.0;  // seconds after the previous delivery
  PayloadChunk chunk;
};

struct ReplaySchedule {
  double speed_multiplier = 1.0;
  std::vector<ScheduledChunk> items;
};

enum class ReplayErrc { NonPositiveSpeed, SinkClosed };

class ReplayError : public Error<ReplayErrc> {
 public:
  ReplayError(ReplayErrc kind, const std::string& msg, std::size_t delivered = 0)
      : Error(kind, msg), delivered_(delivered) {}

  std::size_t delivered() const noexcept { return delivered_; }

 private:
  std::size_t delivered_;
};

inline ReplaySchedule build_schedule(std::vector<PayloadChunk> chunks, double speed_multiplier) {
  if (!(speed_multiplier > 0.0)) {
    throw ReplayError(ReplayErrc::NonPositiveSpeed, "replay speed must be positive");
  }
  ReplaySchedule s;
  s.speed_multiplier = speed_multiplier;
  s.items.reserve(chunks.size());
  double prev = chunks.empty() ? 0.0 : chunks.front().ts;
  for (auto& c : chunks) {
    const double gap = std::max(0.0, c.ts - prev);
    prev = c.ts;
    s.items.push_back({gap / speed_multiplier, std::move(c)});
  }
  return s;
}

/// Returns false once the consumer has gone away.
using ChunkSink = std::function<bool(const PayloadChunk&)>;

/// Deliver every scheduled chunk in order, waiting out each delay against a
/// monotonic clock. Deadlines are absolute so sleep overshoot does not
/// accumulate across gaps.
inline std::size_t replay(const ReplaySchedule& schedule, const ChunkSink& sink) {
  using clock = std::chrono::steady_clock;
  auto deadline = clock::now();
  std::size_t delivered = 0;
  for (const auto& item : schedule.items) {
    deadline += std::chrono::duration_cast<clock::duration>(
        std::chrono::duration<double>(item.delay));
    std::this_thread::sleep_until(deadline);
    if (!sink(item.chunk)) {
      throw ReplayError(ReplayErrc::SinkClosed,
                        "sink closed after " + std::to_string(delivered) + " chunks", delivered);
    }
    ++delivered;
  }
  return delivered;
}

// Pull-based producer of chunks. next() returns nullopt at end of stream and
// may throw to signal a source failure.
class ChunkSource {
 public:
  virtual ~ChunkSource() = default;
  virtual std::optional<PayloadChunk> next() = 0;
};

class VectorSource : public ChunkSource {
 public:
  explicit VectorSource(std::vector<PayloadChunk> chunks) : chunks_(std::move(chunks)) {}

  std::optional<PayloadChunk> next() override {
    if (pos_ >= chunks_.size()) return std::nullopt;
    return chunks_[pos_++];
  }

 private:
  std::vector<PayloadChunk> chunks_;
  std::size_t pos_ = 0;
};

// Runs replay() on a producer thread feeding a bounded FIFO, so a slow
// consumer applies backpressure to the replay.
class ReplaySource : public ChunkSource {
 public:
  explicit ReplaySource(ReplaySchedule schedule, std::size_t queue_capacity = 256)
      : schedule_(std::move(schedule)), queue_(queue_capacity) {
    producer_ = std::thread([this] {
      try {
        replay(schedule_, [this](const PayloadChunk& c) { return queue_.push(c); });
      } catch (const ReplayError&) {
        // consumer closed the queue
      }
      queue_.close();
    });
  }

  ~ReplaySource() override {
    queue_.close();
    if (producer_.joinable()) producer_.join();
  }

  std::optional<PayloadChunk> next() override { return queue_.pop(); }

 private:
  ReplaySchedule schedule_;
  BoundedQueue<PayloadChunk> queue_;
  std::thread producer_;
};

}  // namespace msquid
