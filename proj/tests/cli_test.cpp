// Drives the msquid binary end to end in scratch directories.

#include <gtest/gtest.h>
#include <sys/wait.h>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "msquid/msquid.hpp"
#include "test_util.hpp"

namespace fs = std::filesystem;
using namespace msquid;
using namespace msquid::testutil;

namespace {

struct RunResult {
  int code;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::size_t count_lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir_ = fs::temp_directory_path() / (std::string("msquid_cli_") + info->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  RunResult run(const std::string& args) {
    const auto out = dir_ / "stdout.txt", err = dir_ / "stderr.txt";
    const std::string cmd = std::string("cd '") + dir_.string() + "' && '" MSQUID_CLI "' " + args + " >'" +
                            out.string() + "' 2>'" + err.string() + "'";
    const int status = std::system(cmd.c_str());
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(out), slurp(err)};
  }

  fs::path path(const std::string& name) const { return dir_ / name; }

  // A capture of UDP datagrams, one per payload, spaced `gap` seconds apart.
  void write_capture(const std::string& name, const std::vector<Bytes>& payloads, double gap = 0.0) {
    std::vector<pcap::RawPacket> pkts;
    for (std::size_t i = 0; i < payloads.size(); ++i) {
      pcap::RawPacket p;
      const double t = gap * static_cast<double>(i);
      p.ts_sec = static_cast<std::uint32_t>(t);
      p.ts_frac = static_cast<std::uint32_t>((t - p.ts_sec) * 1e6);
      p.data = udp_frame(payloads[i]);
      p.original_len = p.captured_len();
      pkts.push_back(p);
    }
    io::write_file(path(name), pcap::write_pcap(pkts, {}));
  }

  // Small corpus at order 4 (256-byte chunks) so training stays quick.
  void small_corpus(std::size_t benign = 30, std::size_t ddos = 30) {
    if (benign) {
      ASSERT_EQ(run("--order 4 --seed 1 synth --profile benign --count " + std::to_string(benign) +
                    " --out-dir data --manifest train.jsonl").code, 0);
    }
    ASSERT_EQ(run("--order 4 --seed 1 synth --profile ddos --count " + std::to_string(ddos) +
                  " --out-dir data --manifest train.jsonl").code, 0);
  }

  fs::path dir_;
};

}  // namespace

TEST_F(Cli, VisualizeRawFileGivesOneImage) {
  Bytes raw(4096);
  for (std::size_t i = 0; i < raw.size(); ++i) raw[i] = static_cast<std::uint8_t>(i);
  io::write_file(path("blob.bin"), raw);
  const auto r = run("visualize --input blob.bin --out-dir img");
  ASSERT_EQ(r.code, 0) << r.err;
  const auto png = decode_png(io::read_file(path("img/blob_0.png")));
  EXPECT_EQ(png.width, 64u);
  EXPECT_EQ(png.height, 64u);
  EXPECT_EQ(slurp(path("img/histograms.csv")),
            std::string(kHistogramCsvHeader) + "\n" + histogram_csv_row(histogram(raw)) + "\n");
}

TEST_F(Cli, VisualizeCaptureSplitsIntoChunks) {
  write_capture("cap.pcap", {Bytes(2000, 'a'), Bytes(2000, 0), Bytes(1000, 0xff)});
  const auto r = run("visualize --input cap.pcap --out-dir img --scale 2");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(path("img/cap_0.png")));
  EXPECT_TRUE(fs::exists(path("img/cap_1.png")));
  EXPECT_FALSE(fs::exists(path("img/cap_2.png")));
  const auto second = decode_png(io::read_file(path("img/cap_1.png")));
  EXPECT_EQ(second.width, 128u);
  EXPECT_EQ(count_lines(slurp(path("img/histograms.csv"))), 3u);
}

TEST_F(Cli, VisualizeMissingInput) {
  const auto r = run("visualize --input nope.pcap");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("nope.pcap"), std::string::npos);
}

TEST_F(Cli, VisualizeCorruptCaptureReportsOffset) {
  Bytes bad(30, 0);
  bad[0] = 0xd4, bad[1] = 0xc3, bad[2] = 0xb2, bad[3] = 0xa1;
  io::write_file(path("bad.pcap"), bad);
  const auto r = run("visualize --input bad.pcap");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("offset 24"), std::string::npos) << r.err;
}

TEST_F(Cli, SynthWritesFilesAndManifest) {
  const auto r = run("--seed 5 synth --profile ddos --count 50 --out-dir data --manifest m.jsonl");
  ASSERT_EQ(r.code, 0) << r.err;
  std::size_t files = 0;
  for (const auto& e : fs::directory_iterator(path("data"))) files += e.path().extension() == ".bin";
  EXPECT_EQ(files, 50u);
  const auto records = dataset::load_manifest(path("m.jsonl"));
  ASSERT_EQ(records.size(), 50u);
  EXPECT_EQ(records[0].label, Label::Malicious);
  EXPECT_EQ(records[0].family, Family::Ddos);
  EXPECT_EQ(records[0].path, "data/ddos_0.bin");
  EXPECT_EQ(io::read_file(dataset::resolve(records[7], path("m.jsonl"))).size(), 4096u);
}

TEST_F(Cli, SynthIsSeedDeterministic) {
  ASSERT_EQ(run("--seed 9 synth --profile whiteheavy --count 3 --out-dir a").code, 0);
  ASSERT_EQ(run("--seed 9 synth --profile whiteheavy --count 3 --out-dir b").code, 0);
  ASSERT_EQ(run("--seed 10 synth --profile whiteheavy --count 3 --out-dir c").code, 0);
  for (int i = 0; i < 3; ++i) {
    const auto name = "whiteheavy_" + std::to_string(i) + ".bin";
    EXPECT_EQ(slurp(path("a") / name), slurp(path("b") / name));
    EXPECT_NE(slurp(path("a") / name), slurp(path("c") / name));
  }
}

TEST_F(Cli, SynthUnknownProfile) {
  const auto r = run("synth --profile nosuch");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("nosuch"), std::string::npos);
}

TEST_F(Cli, SynthRejectsInconsistentOverride) {
  EXPECT_EQ(run("synth --profile benign --label benign --family ddos").code, 2);
  EXPECT_EQ(run("synth --profile benign --label bogus").code, 2);
}

TEST_F(Cli, TrainProducesLoadableModel) {
  small_corpus();
  const auto r = run("--order 4 --seed 2 train --manifest train.jsonl --iterations 20 --out m.msqd");
  ASSERT_EQ(r.code, 0) << r.err;
  const auto model = cnn::load_model(io::read_file(path("m.msqd")));
  EXPECT_EQ(model.input_side, 16u);
  EXPECT_EQ(r.out.rfind("train_accuracy,", 0), 0u);
  const auto trace = slurp(path("m.msqd.loss.csv"));
  EXPECT_EQ(trace.rfind("iteration,loss\n", 0), 0u);
  EXPECT_EQ(count_lines(trace), 21u);
}

TEST_F(Cli, TrainGuardNeedsThirtyPerClass) {
  small_corpus(29, 40);
  const auto r = run("--order 4 train --manifest train.jsonl --iterations 5");
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.err.find("30"), std::string::npos) << r.err;
  EXPECT_FALSE(fs::exists(path("model.msqd")));
}

TEST_F(Cli, TrainIsSeedDeterministic) {
  small_corpus();
  ASSERT_EQ(run("--order 4 --seed 4 train --manifest train.jsonl --iterations 10 --threads 1 --out a.msqd").code, 0);
  ASSERT_EQ(run("--order 4 --seed 4 train --manifest train.jsonl --iterations 10 --threads 3 --out b.msqd").code, 0);
  ASSERT_EQ(run("--order 4 --seed 5 train --manifest train.jsonl --iterations 10 --out c.msqd").code, 0);
  EXPECT_EQ(slurp(path("a.msqd")), slurp(path("b.msqd")));
  EXPECT_NE(slurp(path("a.msqd")), slurp(path("c.msqd")));
}

TEST_F(Cli, TrainSeedFromEnvironment) {
  small_corpus();
  ASSERT_EQ(run("--order 4 --seed 6 train --manifest train.jsonl --iterations 5 --out a.msqd").code, 0);
  ASSERT_EQ(std::system(("cd '" + dir_.string() + "' && MSQUID_SEED=6 '" MSQUID_CLI
                         "' --order 4 --quiet train --manifest train.jsonl --iterations 5 --out b.msqd >/dev/null")
                            .c_str()),
            0);
  EXPECT_EQ(slurp(path("a.msqd")), slurp(path("b.msqd")));
}

TEST_F(Cli, EvaluateReportLayout) {
  small_corpus();
  ASSERT_EQ(run("--order 4 train --manifest train.jsonl --iterations 10 --out m.msqd").code, 0);
  const auto r = run("--order 4 evaluate --manifest train.jsonl --model m.msqd --out report.csv");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out.rfind("metric,value\naccuracy,", 0), 0u) << r.out;
  const auto p = r.out.find("\nprecision,"), rc = r.out.find("\nrecall,"), f = r.out.find("\nf1,");
  EXPECT_TRUE(p < rc && rc < f);
  EXPECT_NE(r.out.find("family,benign,accuracy,"), std::string::npos);
  EXPECT_NE(r.out.find("family,ddos,accuracy,"), std::string::npos);
  EXPECT_NE(r.out.find("\naggregate,"), std::string::npos);
  EXPECT_EQ(slurp(path("report.csv")), r.out);
}

TEST_F(Cli, EvaluateTrivialCorpusWithPerfectModel) {
  ASSERT_EQ(run("--order 4 synth --profile benign --count 4 --out-dir d --manifest m.jsonl").code, 0);
  auto model = cnn::CnnModel::zeros(16);
  model.dense2_b = {5.0, -5.0};  // always benign
  io::write_file(path("benign.msqd"), cnn::save_model(model));
  const auto r = run("--order 4 evaluate --manifest m.jsonl --model benign.msqd --positive benign");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("aggregate,1.000000,1.000000,1.000000,1.000000"), std::string::npos) << r.out;
  // With malicious as the positive class there are no positives at all.
  const auto u = run("--order 4 evaluate --manifest m.jsonl --model benign.msqd");
  EXPECT_NE(u.out.find("recall,undefined"), std::string::npos) << u.out;
}

TEST_F(Cli, EvaluateRejectsWrongOrderModel) {
  ASSERT_EQ(run("--order 4 synth --profile benign --count 2 --out-dir d --manifest m.jsonl").code, 0);
  io::write_file(path("m.msqd"), cnn::save_model(cnn::CnnModel::zeros(16)));
  EXPECT_EQ(run("evaluate --manifest m.jsonl --model m.msqd").code, 2);
  EXPECT_EQ(run("--order 4 evaluate --manifest m.jsonl --model missing.msqd").code, 2);
}

TEST_F(Cli, DetectEmptyCapture) {
  io::write_file(path("m.msqd"), cnn::save_model(cnn::CnnModel::init(1, 8)));
  write_capture("empty.pcap", {});
  const auto r = run("--order 3 detect --input empty.pcap --model m.msqd");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(r.out.empty());
  EXPECT_NE(r.err.find("summary: 0 chunks"), std::string::npos) << r.err;
}

TEST_F(Cli, DetectEmitsOneVerdictPerChunk) {
  io::write_file(path("m.msqd"), cnn::save_model(cnn::CnnModel::init(1, 8)));
  std::vector<Bytes> payloads;
  for (int i = 0; i < 7; ++i) payloads.push_back(Bytes(64, static_cast<std::uint8_t>(i * 30)));
  write_capture("cap.pcap", payloads, 0.001);
  const auto r = run("--order 3 detect --input cap.pcap --model m.msqd --speed 100 --out v.jsonl --queue 2");
  ASSERT_EQ(r.code, 0) << r.err;
  std::ifstream in(path("v.jsonl"));
  std::string line;
  std::uint64_t seq = 0;
  while (std::getline(in, line)) {
    const auto j = nlohmann::json::parse(line);
    EXPECT_EQ(j.at("seq").get<std::uint64_t>(), seq++);
    EXPECT_EQ(j.at("source_id"), "cap");
    EXPECT_EQ(j.at("hist").size(), 5u);
  }
  EXPECT_EQ(seq, 7u);
  EXPECT_NE(r.err.find("summary: 7 chunks"), std::string::npos) << r.err;
}

TEST_F(Cli, DetectSpeedScalesWallClock) {
  io::write_file(path("m.msqd"), cnn::save_model(cnn::CnnModel::init(1, 8)));
  std::vector<Bytes> payloads(7, Bytes(64, 'x'));
  write_capture("cap.pcap", payloads, 0.5);  // spans 3 s
  auto timed = [&](const std::string& speed) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto r = run("--order 3 detect --input cap.pcap --model m.msqd --out v.jsonl --speed " + speed);
    EXPECT_EQ(r.code, 0) << r.err;
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  };
  // Process start-up and model loading are measured once and taken off.
  const double overhead = timed("1000000");
  const double slow = timed("1") - overhead;
  const double fast = timed("10") - overhead;
  EXPECT_NEAR(slow, 3.0, 0.3);
  EXPECT_NEAR(slow / fast, 10.0, 3.0) << "slow " << slow << " fast " << fast;
}

TEST_F(Cli, DetectBadSpeedAndMissingModel) {
  write_capture("cap.pcap", {Bytes(10, 'a')});
  io::write_file(path("m.msqd"), cnn::save_model(cnn::CnnModel::init(1, 8)));
  EXPECT_EQ(run("--order 3 detect --input cap.pcap --model m.msqd --speed 0").code, 2);
  EXPECT_EQ(run("--order 3 detect --input cap.pcap --model none.msqd").code, 2);
  EXPECT_EQ(run("detect --input cap.pcap --model m.msqd").code, 2);  // order mismatch
}

TEST_F(Cli, UsageErrors) {
  EXPECT_EQ(run("").code, 2);
  EXPECT_EQ(run("frobnicate").code, 2);
  EXPECT_EQ(run("--order 12 visualize --input x").code, 2);
  EXPECT_EQ(run("--help").code, 0);
}
