#pragma once

// Labelled sample manifests, seeded train/test splits and a synthetic traffic
// generator driven by byte-class frequency profiles.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "byte_classes.hpp"
#include "detail/error.hpp"
#include "detail/random.hpp"
#include "json.hpp"
#include "labels.hpp"
#include "stream.hpp"

namespace msquid::dataset {

enum class DatasetErrc { ParseError, InvalidLabel, TooFewRecords, BadProfile, CannotOpen };

class DatasetError : public Error<DatasetErrc> {
 public:
  DatasetError(DatasetErrc kind, const std::string& msg, std::size_t line = 0)
      : Error(kind, line ? "line " + std::to_string(line) + ": " + msg : msg), line_(line) {}

  /// 1-based manifest line, 0 when not applicable.
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

struct SampleRecord {
  std::string path;
  Label label = Label::Benign;
  Family family = Family::Benign;
  std::string source;

  friend bool operator==(const SampleRecord&, const SampleRecord&) = default;
};

// ---- manifest (JSON Lines: path, label, family, source) -------------------

inline std::string manifest_line(const SampleRecord& r) {
  nlohmann::ordered_json j;
  j["path"] = r.path;
  j["label"] = label_name(r.label);
  j["family"] = family_name(r.family);
  j["source"] = r.source;
  return j.dump();
}

inline SampleRecord parse_manifest_line(const std::string& text, std::size_t line_no) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw DatasetError(DatasetErrc::ParseError, e.what(), line_no);
  }
  if (!j.is_object()) throw DatasetError(DatasetErrc::ParseError, "record is not an object", line_no);
  for (const auto& [key, _] : j.items()) {
    if (key != "path" && key != "label" && key != "family" && key != "source") {
      throw DatasetError(DatasetErrc::ParseError, "unknown key '" + key + "'", line_no);
    }
  }
  auto field = [&](const char* key) -> std::string {
    if (!j.contains(key) || !j[key].is_string()) {
      throw DatasetError(DatasetErrc::ParseError, std::string("missing string field '") + key + "'",
                         line_no);
    }
    return j[key].get<std::string>();
  };
  SampleRecord r;
  r.path = field("path");
  const auto label_text = field("label");
  const auto label = parse_label(label_text);
  if (!label) throw DatasetError(DatasetErrc::InvalidLabel, "invalid label '" + label_text + "'", line_no);
  const auto family_text = field("family");
  const auto family = parse_family(family_text);
  if (!family) {
    throw DatasetError(DatasetErrc::InvalidLabel, "invalid family '" + family_text + "'", line_no);
  }
  if (!consistent(*label, *family)) {
    throw DatasetError(DatasetErrc::InvalidLabel,
                       "label '" + label_text + "' conflicts with family '" + family_text + "'",
                       line_no);
  }
  r.label = *label;
  r.family = *family;
  r.source = field("source");
  return r;
}

/// Blank lines are ignored.
inline std::vector<SampleRecord> parse_manifest(std::istream& in) {
  std::vector<SampleRecord> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    out.push_back(parse_manifest_line(line, line_no));
  }
  return out;
}

inline std::vector<SampleRecord> load_manifest(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw DatasetError(DatasetErrc::CannotOpen, "cannot open manifest " + file.string());
  return parse_manifest(in);
}

inline std::string format_manifest(std::span<const SampleRecord> records) {
  std::string out;
  for (const auto& r : records) out += manifest_line(r) + "\n";
  return out;
}

inline void save_manifest(std::span<const SampleRecord> records, const std::filesystem::path& file,
                          bool append = false) {
  std::ofstream out(file, append ? std::ios::app : std::ios::trunc);
  if (!out) throw DatasetError(DatasetErrc::CannotOpen, "cannot write manifest " + file.string());
  out << format_manifest(records);
}

/// Record paths are resolved against the manifest's directory.
inline std::filesystem::path resolve(const SampleRecord& r, const std::filesystem::path& manifest) {
  std::filesystem::path p(r.path);
  return p.is_absolute() ? p : manifest.parent_path() / p;
}

// ---- splits ----------------------------------------------------------------

struct SplitSpec {
  double train_fraction = 0.7;
  std::uint64_t seed = 0;
};

template <typename T>
struct Split {
  std::vector<T> train;
  std::vector<T> test;
};

/// Seeded shuffle, cut at floor(train_fraction * n), then the fewest swaps
/// across the cut so both sides hold at least one sample of each label.
template <typename T, typename LabelOf>
Split<T> split(const std::vector<T>& items, const SplitSpec& spec, LabelOf label_of) {
  const std::size_t n = items.size();
  if (n < 2) throw DatasetError(DatasetErrc::TooFewRecords, "split needs at least 2 records");
  if (!(spec.train_fraction > 0.0 && spec.train_fraction < 1.0)) {
    throw DatasetError(DatasetErrc::TooFewRecords, "train fraction must lie in (0, 1)");
  }
  std::array<std::size_t, 2> per_label{};
  for (const auto& it : items) ++per_label[static_cast<std::size_t>(label_of(it))];
  for (std::size_t c = 0; c < 2; ++c) {
    if (per_label[c] == 1) {
      throw DatasetError(DatasetErrc::TooFewRecords,
                         "a label with a single record cannot appear on both sides of a split");
    }
  }
  if (per_label[0] == 0 || per_label[1] == 0) {
    throw DatasetError(DatasetErrc::TooFewRecords, "split needs both labels present");
  }

  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng(mix_seed(spec.seed, 0x73706c6974));
  rng.shuffle(idx);
  std::size_t cut = static_cast<std::size_t>(std::floor(spec.train_fraction * static_cast<double>(n)));
  // Each side needs room for one record of each label; n >= 4 here.
  cut = std::clamp<std::size_t>(cut, 2, n - 2);

  auto lab = [&](std::size_t pos) { return static_cast<std::size_t>(label_of(items[idx[pos]])); };
  auto count_side = [&](std::size_t lo, std::size_t hi, std::size_t c) {
    std::size_t k = 0;
    for (std::size_t i = lo; i < hi; ++i) k += lab(i) == c;
    return k;
  };
  // Move one sample of label c into [lo, hi) from the other side, giving back
  // a sample whose label is plentiful on this side.
  auto repair = [&](std::size_t lo, std::size_t hi, std::size_t olo, std::size_t ohi, std::size_t c) {
    if (count_side(lo, hi, c) > 0) return;
    std::size_t donor = ohi;
    for (std::size_t i = olo; i < ohi; ++i) {
      if (lab(i) == c) { donor = i; break; }
    }
    std::size_t give = hi;
    for (std::size_t i = hi; i-- > lo;) {
      if (count_side(lo, hi, lab(i)) > 1) { give = i; break; }
    }
    if (donor == ohi || give == hi) {
      throw DatasetError(DatasetErrc::TooFewRecords, "cannot place every label on both sides");
    }
    std::swap(idx[donor], idx[give]);
  };
  for (std::size_t c = 0; c < 2; ++c) {
    repair(0, cut, cut, n, c);
    repair(cut, n, 0, cut, c);
  }

  Split<T> out;
  out.train.reserve(cut);
  out.test.reserve(n - cut);
  for (std::size_t i = 0; i < n; ++i) (i < cut ? out.train : out.test).push_back(items[idx[i]]);
  return out;
}

inline Split<SampleRecord> split(const std::vector<SampleRecord>& records, const SplitSpec& spec) {
  return split(records, spec, [](const SampleRecord& r) { return r.label; });
}

/// Nested training sets (each a prefix-superset of the previous) that widen
/// malware-family coverage stage by stage. Stage k holds sizes[k] items: half
/// benign, the rest spread evenly over the malicious families unlocked in
/// stages 0..k. Returns indices into `pool`, each stage in pool order.
template <typename T, typename FamilyOf>
std::vector<std::vector<std::size_t>> nested_stages(const std::vector<T>& pool,
                                                    std::span<const std::size_t> sizes,
                                                    std::span<const std::vector<Family>> unlocks,
                                                    FamilyOf family_of) {
  if (sizes.size() != unlocks.size()) {
    throw DatasetError(DatasetErrc::TooFewRecords, "one family unlock list per stage required");
  }
  std::map<Family, std::vector<std::size_t>> by_family;
  for (std::size_t i = 0; i < pool.size(); ++i) by_family[family_of(pool[i])].push_back(i);

  std::map<Family, std::size_t> taken;
  std::vector<Family> allowed;
  std::vector<std::vector<std::size_t>> stages;
  std::size_t prev_size = 0;
  for (std::size_t k = 0; k < sizes.size(); ++k) {
    for (Family f : unlocks[k]) {
      if (std::find(allowed.begin(), allowed.end(), f) == allowed.end()) allowed.push_back(f);
    }
    const std::size_t size = sizes[k];
    if (size < prev_size || size > pool.size()) {
      throw DatasetError(DatasetErrc::TooFewRecords, "stage sizes must be non-decreasing and fit the pool");
    }
    prev_size = size;
    auto avail = [&](Family f) { return by_family[f].size() - taken[f]; };
    std::size_t in_stage = 0;
    for (const auto& [f, n] : taken) in_stage += n;
    std::size_t need = size - in_stage;

    // Benign first, up to half the stage.
    const std::size_t benign_target = size / 2;
    std::size_t add_benign = std::min(avail(Family::Benign),
                                      benign_target > taken[Family::Benign] ? benign_target - taken[Family::Benign] : 0);
    add_benign = std::min(add_benign, need);
    taken[Family::Benign] += add_benign;
    need -= add_benign;
    // Round-robin over unlocked families, then anything left.
    bool progress = true;
    while (need > 0 && progress) {
      progress = false;
      for (Family f : allowed) {
        if (need == 0) break;
        if (f != Family::Benign && avail(f) > 0) {
          ++taken[f];
          --need;
          progress = true;
        }
      }
    }
    for (auto& [f, list] : by_family) {
      const std::size_t more = std::min(need, avail(f));
      taken[f] += more;
      need -= more;
    }
    std::vector<std::size_t> stage;
    for (const auto& [f, n] : taken) {
      stage.insert(stage.end(), by_family[f].begin(), by_family[f].begin() + static_cast<std::ptrdiff_t>(n));
    }
    std::sort(stage.begin(), stage.end());
    stages.push_back(std::move(stage));
  }
  return stages;
}

// ---- synthetic traffic -------------------------------------------------------

struct SynthProfile {
  std::string name;
  // Target class frequencies, indexed by ByteClass (Null .. Full).
  std::array<double, kDataClassCount> frequencies{};
  // Per-chunk multiplicative noise bound: each frequency is scaled by a
  // factor in [1 - jitter, 1 + jitter] before renormalisation.
  double jitter = 0.0;
  Label label = Label::Benign;
  Family family = Family::Benign;
};

inline void validate(const SynthProfile& p) {
  double sum = 0.0;
  for (double f : p.frequencies) {
    if (!(f >= 0.0) || !std::isfinite(f)) {
      throw DatasetError(DatasetErrc::BadProfile, "profile '" + p.name + "' has a negative frequency");
    }
    sum += f;
  }
  if (std::abs(sum - 1.0) > 1e-9) {
    throw DatasetError(DatasetErrc::BadProfile, "profile '" + p.name + "' frequencies do not sum to 1");
  }
  if (!(p.jitter >= 0.0 && p.jitter < 1.0)) {
    throw DatasetError(DatasetErrc::BadProfile, "profile '" + p.name + "' jitter must lie in [0, 1)");
  }
}

// Frequencies are calibrations of the qualitative class-frequency contrast
// between benign and malicious captures, not measured values. Each malicious
// profile departs from benign along its own class rather than a shared one,
// so a detector fitted to one family does not automatically catch the others.
inline std::vector<SynthProfile> builtin_profiles() {
  //                   null  print  ctrl   ext   full
  return {
      {"benign", {0.10, 0.55, 0.15, 0.15, 0.05}, 0.05, Label::Benign, Family::Benign},
      {"nullheavy", {0.45, 0.50, 0.02, 0.02, 0.01}, 0.05, Label::Malicious, Family::Backdoor},
      {"ddos", {0.05, 0.30, 0.55, 0.10, 0.00}, 0.05, Label::Malicious, Family::Ddos},
      {"whiteheavy", {0.08, 0.50, 0.04, 0.03, 0.35}, 0.05, Label::Malicious, Family::Botnet},
  };
}

inline std::optional<SynthProfile> find_profile(std::string_view name) {
  for (auto& p : builtin_profiles()) {
    if (p.name == name) return p;
  }
  return std::nullopt;
}

namespace detail {

inline std::uint8_t draw_byte(ByteClass c, Rng& rng) {
  switch (c) {
    case ByteClass::Null: return 0x00;
    case ByteClass::Full: return 0xff;
    case ByteClass::Printable: return static_cast<std::uint8_t>(0x20 + rng.below(95));
    case ByteClass::Control: {
      const auto k = rng.below(32);  // 0x01..0x1f and 0x7f
      return static_cast<std::uint8_t>(k == 31 ? 0x7f : 0x01 + k);
    }
    case ByteClass::Extended: return static_cast<std::uint8_t>(0x80 + rng.below(127));
    case ByteClass::Padding: break;
  }
  return 0;
}

}  // namespace detail

inline constexpr std::size_t kMinSynthChunkLen = 100;

/// Chunk i uses its own stream seeded from (seed, i), so chunks can be
/// generated in any order or in parallel with identical results.
inline std::vector<PayloadChunk> synth_chunks(const SynthProfile& profile, std::size_t count,
                                              std::size_t chunk_len, std::uint64_t seed,
                                              std::size_t first_index = 0) {
  validate(profile);
  if (count == 0 || chunk_len < kMinSynthChunkLen) {
    throw DatasetError(DatasetErrc::BadProfile, "synthesis needs count >= 1 and chunk_len >= 100");
  }
  std::vector<PayloadChunk> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t index = first_index + i;
    Rng rng(mix_seed(seed, index));
    std::array<double, kDataClassCount> f{};
    double sum = 0.0;
    for (std::size_t c = 0; c < kDataClassCount; ++c) {
      f[c] = profile.frequencies[c] * rng.uniform(1.0 - profile.jitter, 1.0 + profile.jitter);
      sum += f[c];
    }
    std::array<double, kDataClassCount> cdf{};
    double acc = 0.0;
    for (std::size_t c = 0; c < kDataClassCount; ++c) {
      acc += f[c] / sum;
      cdf[c] = acc;
    }
    std::size_t last_positive = 0;
    for (std::size_t c = 0; c < kDataClassCount; ++c) {
      if (f[c] > 0.0) last_positive = c;
    }
    PayloadChunk chunk;
    chunk.source_id = profile.name;
    chunk.seq_no = index;
    chunk.bytes.resize(chunk_len);
    for (auto& b : chunk.bytes) {
      const double u = rng.uniform();
      std::size_t c = 0;
      while (c < kDataClassCount && !(u < cdf[c])) ++c;
      if (c == kDataClassCount) c = last_positive;  // rounding left cdf just below 1
      b = detail::draw_byte(static_cast<ByteClass>(c), rng);
    }
    out.push_back(std::move(chunk));
  }
  return out;
}

}  // namespace msquid::dataset
