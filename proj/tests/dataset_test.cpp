#include "msquid/dataset.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <map>
#include <set>
#include <sstream>

#include "msquid/render.hpp"

using namespace msquid;
using namespace msquid::dataset;

namespace {

std::vector<SampleRecord> make_records(std::size_t benign, std::size_t malicious) {
  std::vector<SampleRecord> out;
  for (std::size_t i = 0; i < benign; ++i) {
    out.push_back({"b" + std::to_string(i) + ".bin", Label::Benign, Family::Benign, "test"});
  }
  for (std::size_t i = 0; i < malicious; ++i) {
    out.push_back({"m" + std::to_string(i) + ".bin", Label::Malicious, Family::Ddos, "test"});
  }
  return out;
}

}  // namespace

TEST(Manifest, EmptyInput) {
  std::istringstream in("");
  EXPECT_TRUE(parse_manifest(in).empty());
}

TEST(Manifest, Roundtrip) {
  const std::vector<SampleRecord> recs{
      {"a.pcap", Label::Benign, Family::Benign, "home lan"},
      {"dir/b.bin", Label::Malicious, Family::OsScan, "repo \"x\""},
      {"c.bin", Label::Malicious, Family::Unknown, ""},
  };
  std::istringstream in(format_manifest(recs));
  EXPECT_EQ(parse_manifest(in), recs);
  EXPECT_EQ(manifest_line(recs[0]),
            R"({"path":"a.pcap","label":"benign","family":"benign","source":"home lan"})");
}

TEST(Manifest, FuzzRoundtrip) {
  Rng rng(17);
  for (int round = 0; round < 100; ++round) {
    std::vector<SampleRecord> recs(rng.below(6));
    for (auto& r : recs) {
      r.label = rng.below(2) ? Label::Malicious : Label::Benign;
      r.family = r.label == Label::Benign ? Family::Benign : static_cast<Family>(rng.below(7));
      for (std::size_t i = 0, n = rng.below(12); i < n; ++i) r.path += static_cast<char>(0x20 + rng.below(95));
      for (std::size_t i = 0, n = rng.below(12); i < n; ++i) r.source += static_cast<char>(1 + rng.below(126));
    }
    std::istringstream in(format_manifest(recs));
    ASSERT_EQ(parse_manifest(in), recs);
  }
}

TEST(Manifest, Errors) {
  auto kind_of = [](const std::string& text) {
    std::istringstream in(text);
    try {
      parse_manifest(in);
    } catch (const DatasetError& e) {
      return std::make_pair(e.kind(), e.line());
    }
    return std::make_pair(DatasetErrc::CannotOpen, std::size_t{0});
  };
  const std::string good = R"({"path":"a","label":"benign","family":"benign","source":""})";
  EXPECT_EQ(kind_of(good + "\n" + R"({"path":"a","label":"suspicious","family":"ddos","source":""})"),
            std::make_pair(DatasetErrc::InvalidLabel, std::size_t{2}));
  EXPECT_EQ(kind_of(R"({"path":"a","label":"malicious","family":"worm","source":""})").first,
            DatasetErrc::InvalidLabel);
  EXPECT_EQ(kind_of(R"({"path":"a","label":"benign","family":"ddos","source":""})").first,
            DatasetErrc::InvalidLabel);
  EXPECT_EQ(kind_of(R"({"path":"a","label":"benign","family":"benign","source":"","x":1})").first,
            DatasetErrc::ParseError);
  EXPECT_EQ(kind_of(R"({"path":"a","label":"benign"})").first, DatasetErrc::ParseError);
  EXPECT_EQ(kind_of(good + "\n\n{not json").second, 3u);
}

TEST(Split, SevenThree) {
  const auto recs = make_records(5, 5);
  const auto s = split(recs, {0.7, 1});
  EXPECT_EQ(s.train.size(), 7u);
  EXPECT_EQ(s.test.size(), 3u);
  std::multiset<std::string> all;
  for (const auto& r : s.train) all.insert(r.path);
  for (const auto& r : s.test) all.insert(r.path);
  std::multiset<std::string> want;
  for (const auto& r : recs) want.insert(r.path);
  EXPECT_EQ(all, want);
}

TEST(Split, DeterministicPerSeed) {
  const auto recs = make_records(20, 13);
  const auto a = split(recs, {0.6, 7});
  const auto b = split(recs, {0.6, 7});
  EXPECT_EQ(a.train, b.train);
  EXPECT_EQ(a.test, b.test);
  const auto c = split(recs, {0.6, 8});
  EXPECT_NE(a.train, c.train);
}

TEST(Split, TooFewRecords) {
  try {
    split(make_records(1, 0), {0.7, 1});
    FAIL();
  } catch (const DatasetError& e) {
    EXPECT_EQ(e.kind(), DatasetErrc::TooFewRecords);
  }
  EXPECT_THROW(split(make_records(4, 0), {0.5, 1}), DatasetError);
}

TEST(Split, PartitionWithBothLabelsEachSide) {
  Rng rng(3);
  for (int round = 0; round < 300; ++round) {
    const std::size_t b = 2 + rng.below(10), m = 2 + rng.below(10);
    const auto recs = make_records(b, m);
    const double frac = rng.uniform(0.05, 0.95);
    const auto s = split(recs, {frac, rng.next_u64()});
    ASSERT_FALSE(s.train.empty());
    ASSERT_FALSE(s.test.empty());
    ASSERT_EQ(s.train.size() + s.test.size(), recs.size());
    for (const auto* side : {&s.train, &s.test}) {
      std::set<Label> labels;
      for (const auto& r : *side) labels.insert(r.label);
      ASSERT_EQ(labels.size(), 2u);
    }
    std::set<std::string> seen;
    for (const auto& r : s.train) seen.insert(r.path);
    for (const auto& r : s.test) ASSERT_FALSE(seen.count(r.path));
  }
}

TEST(NestedStages, SupersetsWithWideningCoverage) {
  std::vector<SampleRecord> pool;
  for (int i = 0; i < 40; ++i) pool.push_back({"b", Label::Benign, Family::Benign, ""});
  for (Family f : {Family::Ddos, Family::Backdoor, Family::Botnet}) {
    for (int i = 0; i < 14; ++i) pool.push_back({"m", Label::Malicious, f, ""});
  }
  const std::vector<std::size_t> sizes{20, 40, 82};
  const std::vector<std::vector<Family>> unlocks{{Family::Ddos}, {Family::Backdoor}, {Family::Botnet}};
  const auto stages = nested_stages(pool, sizes, unlocks, [](const SampleRecord& r) { return r.family; });
  ASSERT_EQ(stages.size(), 3u);
  for (std::size_t k = 0; k < stages.size(); ++k) {
    EXPECT_EQ(stages[k].size(), sizes[k]);
    if (k > 0) {
      EXPECT_TRUE(std::includes(stages[k].begin(), stages[k].end(), stages[k - 1].begin(),
                                stages[k - 1].end()));
    }
  }
  std::map<Family, int> first;
  for (auto i : stages[0]) ++first[pool[i].family];
  EXPECT_EQ(first[Family::Benign], 10);
  EXPECT_EQ(first[Family::Ddos], 10);
  EXPECT_EQ(first.count(Family::Botnet), 0u);
}

TEST(Synth, DegenerateProfileIsAllNull) {
  SynthProfile p{"nulls", {1, 0, 0, 0, 0}, 0.3};
  for (const auto& c : synth_chunks(p, 3, 500, 1)) {
    for (auto b : c.bytes) ASSERT_EQ(b, 0x00);
  }
}

TEST(Synth, DdosControlFrequencyWithinTolerance) {
  const auto p = *find_profile("ddos");
  ASSERT_DOUBLE_EQ(p.frequencies[static_cast<std::size_t>(ByteClass::Control)], 0.55);
  ASSERT_DOUBLE_EQ(p.jitter, 0.05);
  // Tolerance: jitter plus three binomial standard deviations at n = 4096.
  const double tol = 0.05 + 3 * std::sqrt(0.55 * 0.45 / 4096);
  for (const auto& c : synth_chunks(p, 20, 4096, 42)) {
    EXPECT_NEAR(histogram(c.bytes).frequency(ByteClass::Control), 0.55, tol);
  }
}

TEST(Synth, Deterministic) {
  const auto p = *find_profile("benign");
  EXPECT_EQ(synth_chunks(p, 4, 256, 9), synth_chunks(p, 4, 256, 9));
  EXPECT_NE(synth_chunks(p, 1, 256, 9)[0].bytes, synth_chunks(p, 1, 256, 10)[0].bytes);
  // Chunk i does not depend on how many chunks precede it in the call.
  EXPECT_EQ(synth_chunks(p, 4, 256, 9)[3].bytes, synth_chunks(p, 1, 256, 9, 3)[0].bytes);
}

TEST(Synth, BytesStayInClassRanges) {
  SynthProfile p{"mix", {0.2, 0.2, 0.2, 0.2, 0.2}, 0.0};
  std::set<std::uint8_t> seen;
  for (const auto& c : synth_chunks(p, 5, 20000, 3)) seen.insert(c.bytes.begin(), c.bytes.end());
  EXPECT_EQ(seen.size(), 256u);  // every value in every class range is reachable
}

TEST(Synth, ConvergesWithChunkLength) {
  SynthProfile p{"flat", {0.1, 0.3, 0.2, 0.25, 0.15}, 0.0};
  for (auto [len, tol] : {std::pair{4096, 0.03}, std::pair{65536, 0.008}}) {
    const auto h = histogram(synth_chunks(p, 1, len, 5)[0].bytes);
    for (std::size_t c = 0; c < kDataClassCount; ++c) {
      EXPECT_NEAR(h.frequency(static_cast<ByteClass>(c)), p.frequencies[c], tol) << len;
    }
  }
}

TEST(Synth, BadProfile) {
  EXPECT_THROW(synth_chunks({"bad", {0.5, 0.6, 0, 0, 0}, 0}, 1, 100, 0), DatasetError);
  EXPECT_THROW(synth_chunks({"neg", {1.2, -0.2, 0, 0, 0}, 0}, 1, 100, 0), DatasetError);
  EXPECT_THROW(synth_chunks(*find_profile("benign"), 1, 99, 0), DatasetError);
  EXPECT_THROW(synth_chunks(*find_profile("benign"), 0, 100, 0), DatasetError);
}

TEST(BuiltinProfiles, SumToOneAndOrdering) {
  const auto profiles = builtin_profiles();
  std::set<std::string> names;
  for (const auto& p : profiles) {
    names.insert(p.name);
    double s = 0;
    for (double f : p.frequencies) s += f;
    EXPECT_NEAR(s, 1.0, 1e-9) << p.name;
    EXPECT_TRUE(consistent(p.label, p.family));
  }
  EXPECT_EQ(names, (std::set<std::string>{"benign", "nullheavy", "ddos", "whiteheavy"}));
  const auto ctrl = [](const SynthProfile& p) { return p.frequencies[static_cast<std::size_t>(ByteClass::Control)]; };
  const auto ddos = *find_profile("ddos");
  for (const auto& p : profiles) {
    if (p.name != "ddos") EXPECT_GT(ctrl(ddos), ctrl(p));
  }
  EXPECT_FALSE(find_profile("nosuch"));
}

TEST(BuiltinProfiles, BenignImagesMostlyNotBlack) {
  const auto chunks = synth_chunks(*find_profile("benign"), 100, 4096, 77);
  double black = 0;
  for (const auto& c : chunks) {
    const auto n = layout(c.bytes).class_counts();
    black += static_cast<double>(n[static_cast<std::size_t>(ByteClass::Null)]) / 4096.0;
  }
  EXPECT_LT(black / 100.0, 0.15);
}
