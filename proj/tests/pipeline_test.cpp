#include "msquid/pipeline.hpp"

#include <gtest/gtest.h>

#include <atomic>
#include <chrono>
#include <filesystem>
#include <thread>

#include "msquid/dataset.hpp"
#include "msquid/train.hpp"

using namespace msquid;
using namespace msquid::pipeline;

namespace {

constexpr unsigned kSmallOrder = 3;  // 8x8 images, 64-byte chunks

std::vector<PayloadChunk> numbered(std::size_t n, std::size_t len, std::uint8_t fill = 'a') {
  std::vector<PayloadChunk> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back({Bytes(len, fill), "src", i, double(i)});
  return out;
}

PipelineConfig small_cfg(unsigned workers = 2, std::size_t cap = 8) {
  PipelineConfig cfg;
  cfg.order = kSmallOrder;
  cfg.workers = workers;
  cfg.queue_capacity = cap;
  return cfg;
}

// Source that counts pulls and optionally fails after a number of chunks.
class CountingSource : public ChunkSource {
 public:
  CountingSource(std::vector<PayloadChunk> chunks, std::size_t fail_after = SIZE_MAX)
      : inner_(std::move(chunks)), fail_after_(fail_after) {}
  std::optional<PayloadChunk> next() override {
    if (pulled == fail_after_) throw std::runtime_error("device unplugged");
    auto c = inner_.next();
    if (c) ++pulled;
    return c;
  }
  std::atomic<std::size_t> pulled{0};

 private:
  VectorSource inner_;
  std::size_t fail_after_;
};

}  // namespace

TEST(Pipeline, ReplayedChunksYieldOrderedVerdicts) {
  const auto chunks = numbered(10, 64);
  ReplaySource src(build_schedule(chunks, 1000.0), 4);
  const auto model = cnn::CnnModel::init(1, 8);
  PipelineStats stats;
  const auto out = collect_verdicts(src, model, small_cfg(3), &stats);
  ASSERT_EQ(out.size(), 10u);
  for (std::size_t i = 0; i < out.size(); ++i) {
    EXPECT_EQ(out[i].seq_no, i);
    EXPECT_EQ(out[i].source_id, "src");
  }
  EXPECT_EQ(stats.chunks, 10u);
  EXPECT_EQ(stats.verdicts, 10u);
  EXPECT_EQ(stats.rejected, 0u);
}

TEST(Pipeline, EmptySource) {
  VectorSource src({});
  PipelineStats stats;
  EXPECT_TRUE(collect_verdicts(src, cnn::CnnModel::init(1, 8), small_cfg(), &stats).empty());
  EXPECT_EQ(stats.chunks, 0u);
}

TEST(Pipeline, VerdictsMatchDirectClassification) {
  Rng rng(5);
  std::vector<PayloadChunk> chunks;
  for (std::uint64_t i = 0; i < 60; ++i) {
    Bytes b(1 + rng.below(64));
    for (auto& x : b) x = static_cast<std::uint8_t>(rng.below(256));
    chunks.push_back({b, "r", i, 0});
  }
  const auto model = cnn::CnnModel::init(9, 8);
  VectorSource src(chunks);
  auto cfg = small_cfg(4, 5);
  cfg.threshold = 0.5;
  const auto out = collect_verdicts(src, model, cfg);
  ASSERT_EQ(out.size(), chunks.size());
  for (std::size_t i = 0; i < chunks.size(); ++i) {
    const auto direct = cnn::classify(model, layout(chunks[i].bytes, kSmallOrder), 0.5);
    EXPECT_EQ(out[i].seq_no, i);
    EXPECT_EQ(out[i].label, direct.label);
    EXPECT_DOUBLE_EQ(out[i].p_malicious, direct.p_malicious);
    EXPECT_EQ(out[i].histogram, histogram(chunks[i].bytes));
  }
}

TEST(Pipeline, AllNullChunkFlaggedByNullTrainedModel) {
  std::vector<cnn::Sample> data;
  for (const auto& c : dataset::synth_chunks(*dataset::find_profile("nullheavy"), 30, 4096, 1)) {
    data.push_back({cnn::encode_input(layout(c.bytes)), Label::Malicious});
  }
  for (const auto& c : dataset::synth_chunks(*dataset::find_profile("benign"), 30, 4096, 2)) {
    data.push_back({cnn::encode_input(layout(c.bytes)), Label::Benign});
  }
  cnn::TrainConfig tc;
  tc.iterations = 40;
  tc.seed = 3;
  const auto model = cnn::train(cnn::CnnModel::init(4, 64), data, tc).model;

  VectorSource src({{Bytes(4096, 0x00), "zeros", 0, 0}});
  PipelineConfig cfg;
  cfg.workers = 1;
  const auto out = collect_verdicts(src, model, cfg);
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out[0].label, Label::Malicious);
  EXPECT_EQ(out[0].histogram.count(ByteClass::Null), 4096u);
}

TEST(Pipeline, MalformedChunkRejectedAndQuarantined) {
  auto chunks = numbered(5, 64);
  chunks[2].bytes.assign(65, 'x');  // too large for an 8x8 image
  chunks[3].bytes.clear();
  const auto dir = std::filesystem::temp_directory_path() / "msquid_pipeline_reject";
  std::filesystem::remove_all(dir);
  auto cfg = small_cfg();
  cfg.reject_dir = dir;
  std::vector<std::string> diags;
  cfg.on_diagnostic = [&](const std::string& d) { diags.push_back(d); };
  VectorSource src(chunks);
  PipelineStats stats;
  const auto out = collect_verdicts(src, cnn::CnnModel::init(1, 8), cfg, &stats);
  ASSERT_EQ(out.size(), 3u);
  EXPECT_EQ(out[2].seq_no, 4u);
  EXPECT_EQ(stats.rejected, 2u);
  ASSERT_EQ(diags.size(), 2u);
  EXPECT_NE(diags[0].find("src#2"), std::string::npos);
  EXPECT_EQ(io::read_file(dir / "src_2.bin"), chunks[2].bytes);
  EXPECT_TRUE(std::filesystem::exists(dir / "src_3.bin"));
  std::filesystem::remove_all(dir);
}

TEST(Pipeline, SourceFailurePropagatesAfterDraining) {
  CountingSource src(numbered(10, 64), 4);
  std::vector<Verdict> got;
  try {
    run_pipeline(src, cnn::CnnModel::init(1, 8), small_cfg(), [&](const Verdict& v) { got.push_back(v); });
    FAIL();
  } catch (const PipelineError& e) {
    EXPECT_EQ(e.kind(), PipelineErrc::SourceFailure);
    EXPECT_NE(std::string(e.what()).find("device unplugged"), std::string::npos);
  }
  EXPECT_EQ(got.size(), 4u);
}

TEST(Pipeline, BackpressureBoundsInFlightWork) {
  const std::size_t cap = 3;
  CountingSource src(numbered(20, 64), SIZE_MAX);
  std::size_t emitted = 0;
  std::size_t worst_lead = 0;
  const auto stats = run_pipeline(src, cnn::CnnModel::init(1, 8), small_cfg(2, cap), [&](const Verdict&) {
    std::this_thread::sleep_for(std::chrono::milliseconds(5));
    ++emitted;
    worst_lead = std::max(worst_lead, src.pulled.load() - emitted);
  });
  EXPECT_EQ(emitted, 20u);
  EXPECT_LE(stats.max_in_flight, cap);
  EXPECT_LE(worst_lead, cap);
}

TEST(Pipeline, OrderMismatch) {
  VectorSource src(numbered(1, 10));
  PipelineConfig cfg;  // order 6 expects a 64-side model
  try {
    collect_verdicts(src, cnn::CnnModel::init(1, 8), cfg);
    FAIL();
  } catch (const PipelineError& e) {
    EXPECT_EQ(e.kind(), PipelineErrc::OrderMismatch);
  }
}

TEST(Pipeline, ExceptionFromSinkStopsCleanly) {
  VectorSource src(numbered(50, 64));
  int n = 0;
  EXPECT_THROW(run_pipeline(src, cnn::CnnModel::init(1, 8), small_cfg(), [&](const Verdict&) {
                 if (++n == 3) throw std::runtime_error("disk full");
               }),
               std::runtime_error);
}

TEST(Verdicts, JsonShape) {
  Verdict v;
  v.source_id = "cap";
  v.seq_no = 7;
  v.label = Label::Malicious;
  v.p_malicious = 0.75;
  v.histogram = histogram(to_bytes(std::string_view("\x00 A", 3)));
  EXPECT_EQ(verdict_json(v),
            R"({"source_id":"cap","seq":7,"label":"malicious","p_malicious":0.75,"hist":[1,2,0,0,0]})");
}
