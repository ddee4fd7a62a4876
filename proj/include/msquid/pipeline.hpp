#pragma once

// Streaming detection: chunk source -> Hilbert layout -> CNN -> verdicts.
//
// One producer thread pulls from the source, a pool of workers renders and
// classifies, and the calling thread re-sequences results and emits them in
// source order. At most `queue_capacity` chunks are in flight between the
// source and emission, so a slow consumer throttles the source.

#include <condition_variable>
#include <exception>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "bounded_queue.hpp"
#include "byte_classes.hpp"
#include "cnn.hpp"
#include "detail/error.hpp"
#include "io.hpp"
#include "json.hpp"
#include "labels.hpp"
#include "render.hpp"
#include "stream.hpp"

namespace msquid::pipeline {

struct Verdict {
  std::string source_id;
  std::uint64_t seq_no = 0;
  Label label = Label::Benign;
  double p_malicious = 0.0;
  FeatureHistogram histogram;
  double ts = 0.0;
};

/// {"source_id":…,"seq":…,"label":…,"p_malicious":…,"hist":[n,p,c,e,f]}
inline std::string verdict_json(const Verdict& v) {
  nlohmann::ordered_json j;
  j["source_id"] = v.source_id;
  j["seq"] = v.seq_no;
  j["label"] = label_name(v.label);
  j["p_malicious"] = v.p_malicious;
  j["hist"] = v.histogram.counts;
  return j.dump();
}

struct PipelineConfig {
  unsigned order = kDefaultOrder;
  double threshold = 0.5;
  std::size_t queue_capacity = 256;
  unsigned workers = 0;  // 0 = hardware concurrency
  // Malformed chunks are written here as <source_id>_<seq_no>.bin when set.
  std::optional<std::filesystem::path> reject_dir;
  std::function<void(const std::string&)> on_diagnostic;
};

struct PipelineStats {
  std::size_t chunks = 0;
  std::size_t verdicts = 0;
  std::size_t rejected = 0;
  std::size_t malicious = 0;
  std::size_t max_in_flight = 0;
};

enum class PipelineErrc { SourceFailure, OrderMismatch };
using PipelineError = Error<PipelineErrc>;

using VerdictSink = std::function<void(const Verdict&)>;

/// Classify one chunk. Throws on malformed input (empty or oversized chunk).
inline Verdict judge(const cnn::CnnModel& model, const PayloadChunk& chunk, unsigned order,
                     double threshold) {
  const VisImage img = layout(chunk.bytes, order);
  Verdict v;
  v.histogram = histogram(chunk.bytes);
  const auto p = cnn::forward(model, cnn::encode_input(img, order));
  const auto c = cnn::classify_probability(p[1], threshold);
  v.source_id = chunk.source_id;
  v.seq_no = chunk.seq_no;
  v.label = c.label;
  v.p_malicious = c.p_malicious;
  v.ts = chunk.ts;
  return v;
}

inline PipelineStats run_pipeline(ChunkSource& source, const cnn::CnnModel& model,
                                  const PipelineConfig& cfg, const VerdictSink& emit) {
  if (model.input_side != hilbert::side(cfg.order)) {
    throw PipelineError(PipelineErrc::OrderMismatch,
                        "model input side " + std::to_string(model.input_side) +
                            " does not match image order " + std::to_string(cfg.order));
  }
  const std::size_t capacity = std::max<std::size_t>(1, cfg.queue_capacity);
  unsigned workers = cfg.workers == 0 ? std::max(1u, std::thread::hardware_concurrency())
                                      : cfg.workers;

  struct Job {
    std::size_t index;
    PayloadChunk chunk;
  };
  struct Result {
    std::optional<Verdict> verdict;
    std::string diagnostic;
    PayloadChunk rejected;
  };

  BoundedQueue<Job> jobs(capacity);
  std::mutex mu;
  std::condition_variable cv;
  std::map<std::size_t, Result> done;
  std::size_t in_flight = 0;
  std::size_t admitted = 0;
  bool source_finished = false;
  bool aborting = false;
  std::exception_ptr source_error;
  PipelineStats stats;

  std::thread producer([&] {
    try {
      while (true) {
        {
          std::unique_lock lock(mu);
          cv.wait(lock, [&] { return aborting || in_flight < capacity; });
          if (aborting) break;
        }
        auto chunk = source.next();
        if (!chunk) break;
        std::size_t index;
        {
          std::lock_guard lock(mu);
          index = admitted++;
          ++in_flight;
          stats.max_in_flight = std::max(stats.max_in_flight, in_flight);
        }
        if (!jobs.push(Job{index, std::move(*chunk)})) break;
      }
    } catch (...) {
      std::lock_guard lock(mu);
      source_error = std::current_exception();
    }
    jobs.close();
    std::lock_guard lock(mu);
    source_finished = true;
    cv.notify_all();
  });

  std::vector<std::thread> pool;
  for (unsigned w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      while (auto job = jobs.pop()) {
        Result r;
        try {
          r.verdict = judge(model, job->chunk, cfg.order, cfg.threshold);
        } catch (const std::exception& e) {
          r.diagnostic = "chunk " + job->chunk.source_id + "#" + std::to_string(job->chunk.seq_no) +
                         " rejected: " + e.what();
          r.rejected = std::move(job->chunk);
        }
        std::lock_guard lock(mu);
        done.emplace(job->index, std::move(r));
        cv.notify_all();
      }
    });
  }

  auto shutdown = [&] {
    {
      std::lock_guard lock(mu);
      aborting = true;
      cv.notify_all();
    }
    jobs.close();
    producer.join();
    for (auto& t : pool) t.join();
  };

  try {
    std::size_t next = 0;
    while (true) {
      Result r;
      {
        std::unique_lock lock(mu);
        cv.wait(lock, [&] { return done.count(next) || (source_finished && next == admitted); });
        if (!done.count(next)) break;
        r = std::move(done[next]);
        done.erase(next);
      }
      if (r.verdict) {
        emit(*r.verdict);
        ++stats.verdicts;
        stats.malicious += r.verdict->label == Label::Malicious;
      } else {
        ++stats.rejected;
        if (cfg.on_diagnostic) cfg.on_diagnostic(r.diagnostic);
        if (cfg.reject_dir) {
          std::filesystem::create_directories(*cfg.reject_dir);
          io::write_file(*cfg.reject_dir / (r.rejected.source_id + "_" +
                                            std::to_string(r.rejected.seq_no) + ".bin"),
                         r.rejected.bytes);
        }
      }
      ++next;
      std::lock_guard lock(mu);
      --in_flight;
      cv.notify_all();
    }
  } catch (...) {
    shutdown();
    throw;
  }
  shutdown();
  stats.chunks = admitted;
  if (source_error) {
    try {
      std::rethrow_exception(source_error);
    } catch (const std::exception& e) {
      throw PipelineError(PipelineErrc::SourceFailure, std::string("source failed: ") + e.what());
    }
  }
  return stats;
}

/// Run to completion and return every verdict.
inline std::vector<Verdict> collect_verdicts(ChunkSource& source, const cnn::CnnModel& model,
                                         const PipelineConfig& cfg = {},
                                         PipelineStats* stats_out = nullptr) {
  std::vector<Verdict> out;
  auto stats = run_pipeline(source, model, cfg, [&](const Verdict& v) { out.push_back(v); });
  if (stats_out) *stats_out = stats;
  return out;
}

}  // namespace msquid::pipeline
