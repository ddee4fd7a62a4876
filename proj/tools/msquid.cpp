// msquid: command-line front end for visualising, synthesising, training,
// evaluating and replay-based detection.
//
// Exit codes: 0 success, 2 input or usage error, 3 training guard violated.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "msquid/msquid.hpp"

namespace fs = std::filesystem;
using namespace msquid;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInput = 2;
constexpr int kExitGuard = 3;

struct Globals {
  std::optional<std::uint64_t> seed;
  unsigned order = kDefaultOrder;
  double threshold = 0.5;
  bool quiet = false;

  std::uint64_t resolved_seed() const {
    if (seed) return *seed;
    if (const char* env = std::getenv("MSQUID_SEED")) {
      try {
        return std::stoull(env);
      } catch (const std::exception&) {
        throw CLI::ValidationError("MSQUID_SEED", "must be an unsigned integer");
      }
    }
    return 0;
  }

  std::size_t capacity() const { return static_cast<std::size_t>(hilbert::cell_count(order)); }
};

// Failure that maps straight onto a process exit code.
struct ExitError {
  int code;
  std::string message;
};

void info(const Globals& g, const std::string& msg) {
  if (!g.quiet) std::cerr << msg << "\n";
}

std::vector<PayloadChunk> load_input(const fs::path& path, std::size_t capacity,
                                     const io::SkipHandler& on_skip = {}) {
  if (!fs::exists(path)) throw ExitError{kExitInput, "input not found: " + path.string()};
  try {
    return io::load_chunks(path, capacity, on_skip);
  } catch (const pcap::PcapError& e) {
    throw ExitError{kExitInput, path.string() + ": offset " + std::to_string(e.offset()) + ": " +
                                    e.what()};
  } catch (const std::exception& e) {
    throw ExitError{kExitInput, path.string() + ": " + e.what()};
  }
}

// ---- visualize --------------------------------------------------------------

struct VisualizeArgs {
  std::string input;
  std::string out_dir = ".";
  std::uint32_t scale = 1;
};

int cmd_visualize(const Globals& g, const VisualizeArgs& a) {
  const auto chunks = load_input(a.input, g.capacity());
  fs::create_directories(a.out_dir);
  std::string csv = std::string(kHistogramCsvHeader) + "\n";
  for (const auto& c : chunks) {
    const auto img = layout(c.bytes, g.order);
    io::write_file(fs::path(a.out_dir) / (c.source_id + "_" + std::to_string(c.seq_no) + ".png"),
                   png::emit_png(img, a.scale));
    csv += histogram_csv_row(histogram(c.bytes)) + "\n";
  }
  io::write_text(fs::path(a.out_dir) / "histograms.csv", csv);
  info(g, "visualize: " + std::to_string(chunks.size()) + " images written to " + a.out_dir);
  return kExitOk;
}

// ---- synth ------------------------------------------------------------------

struct SynthArgs {
  std::string profile;
  std::size_t count = 1;
  std::optional<std::string> label;
  std::optional<std::string> family;
  std::string out_dir = ".";
  std::optional<std::string> manifest;
  std::size_t chunk_len = 0;  // 0 = one full image
  std::size_t start_index = 0;
};

int cmd_synth(const Globals& g, const SynthArgs& a) {
  auto profile = dataset::find_profile(a.profile);
  if (!profile) throw ExitError{kExitInput, "unknown profile '" + a.profile + "'"};
  if (a.label) {
    auto l = parse_label(*a.label);
    if (!l) throw ExitError{kExitInput, "invalid label '" + *a.label + "'"};
    profile->label = *l;
    if (!consistent(profile->label, profile->family)) {
      profile->family = *l == Label::Benign ? Family::Benign : Family::Unknown;
    }
  }
  if (a.family) {
    auto f = parse_family(*a.family);
    if (!f || !consistent(profile->label, *f)) {
      throw ExitError{kExitInput, "invalid family '" + *a.family + "' for label " +
                                      std::string(label_name(profile->label))};
    }
    profile->family = *f;
  }
  const std::size_t len = a.chunk_len == 0 ? g.capacity() : a.chunk_len;
  std::vector<PayloadChunk> chunks;
  try {
    chunks = dataset::synth_chunks(*profile, a.count, len,
                                   mix_seed(g.resolved_seed(), fnv1a(profile->name)), a.start_index);
  } catch (const dataset::DatasetError& e) {
    throw ExitError{kExitInput, e.what()};
  }
  fs::create_directories(a.out_dir);
  std::vector<dataset::SampleRecord> records;
  const fs::path manifest_dir =
      a.manifest ? fs::absolute(*a.manifest).parent_path() : fs::current_path();
  for (const auto& c : chunks) {
    const fs::path file = fs::path(a.out_dir) / (profile->name + "_" + std::to_string(c.seq_no) + ".bin");
    io::write_file(file, c.bytes);
    records.push_back({fs::relative(fs::absolute(file), manifest_dir).generic_string(),
                       profile->label, profile->family, "synth:" + profile->name});
  }
  if (a.manifest) {
    if (!fs::path(*a.manifest).parent_path().empty()) {
      fs::create_directories(fs::path(*a.manifest).parent_path());
    }
    dataset::save_manifest(records, *a.manifest, /*append=*/true);
  }
  info(g, "synth: " + std::to_string(chunks.size()) + " " + profile->name + " chunks");
  return kExitOk;
}

// ---- shared corpus loading ----------------------------------------------------

struct CorpusItem {
  cnn::Sample sample;
  Family family;
};

std::vector<CorpusItem> load_corpus(const Globals& g, const std::string& manifest) {
  std::vector<dataset::SampleRecord> records;
  try {
    records = dataset::load_manifest(manifest);
  } catch (const dataset::DatasetError& e) {
    throw ExitError{kExitInput, manifest + ": " + e.what()};
  }
  std::vector<CorpusItem> corpus;
  for (const auto& r : records) {
    for (const auto& c : load_input(dataset::resolve(r, manifest), g.capacity())) {
      corpus.push_back({{cnn::encode_input(layout(c.bytes, g.order), g.order), r.label}, r.family});
    }
  }
  return corpus;
}

cnn::CnnModel load_model_file(const std::string& path) {
  if (!fs::exists(path)) throw ExitError{kExitInput, "model not found: " + path};
  try {
    return cnn::load_model(io::read_file(path));
  } catch (const cnn::CnnError& e) {
    throw ExitError{kExitInput, path + ": " + e.what()};
  }
}

// ---- train ------------------------------------------------------------------

struct TrainArgs {
  std::string manifest;
  std::string out = "model.msqd";
  std::optional<std::string> loss_csv;
  cnn::TrainConfig cfg;
};

int cmd_train(const Globals& g, TrainArgs a) {
  const auto corpus = load_corpus(g, a.manifest);
  std::vector<cnn::Sample> data;
  data.reserve(corpus.size());
  for (const auto& item : corpus) data.push_back(item.sample);

  a.cfg.seed = g.resolved_seed();
  cnn::TrainResult result;
  try {
    result = cnn::train(cnn::CnnModel::init(mix_seed(a.cfg.seed, 1), hilbert::side(g.order)), data,
                        a.cfg);
  } catch (const cnn::TrainError& e) {
    if (e.kind() == cnn::CnnErrc::TooFewSamples) throw ExitError{kExitGuard, e.what()};
    throw ExitError{kExitInput, e.what()};
  }
  io::write_file(a.out, cnn::save_model(result.model));
  std::string trace = "iteration,loss\n";
  char buf[64];
  for (std::size_t i = 0; i < result.loss_trace.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g\n", i, result.loss_trace[i]);
    trace += buf;
  }
  io::write_text(a.loss_csv.value_or(a.out + ".loss.csv"), trace);

  std::size_t correct = 0;
  for (const auto& s : data) {
    correct += cnn::classify_probability(cnn::forward(result.model, s.input)[1], g.threshold).label ==
               s.label;
  }
  std::snprintf(buf, sizeof buf, "%.6f", static_cast<double>(correct) / static_cast<double>(data.size()));
  std::cout << "train_accuracy," << buf << "\n";
  return kExitOk;
}

// ---- evaluate -----------------------------------------------------------------

struct EvaluateArgs {
  std::string manifest;
  std::string model;
  std::optional<std::string> out;
  std::string positive = "malicious";
  bool pretty = false;
};

std::string pretty_table(const std::string& csv) {
  std::istringstream in(csv);
  std::string line, out;
  char buf[128];
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    std::string row;
    for (const auto& c : cells) {
      std::snprintf(buf, sizeof buf, "%-12s", c.c_str());
      row += buf;
    }
    out += row + "\n";
  }
  return out;
}

int cmd_evaluate(const Globals& g, const EvaluateArgs& a) {
  const auto positive = parse_label(a.positive);
  if (!positive) throw ExitError{kExitInput, "invalid positive class '" + a.positive + "'"};
  const auto model = load_model_file(a.model);
  if (model.input_side != hilbert::side(g.order)) {
    throw ExitError{kExitInput, "model input side does not match --order"};
  }
  const auto corpus = load_corpus(g, a.manifest);
  if (corpus.empty()) throw ExitError{kExitInput, "manifest yields no samples"};
  metrics::ConfusionMatrix cm;
  cm.positive = *positive;
  std::vector<metrics::FamilyRecord> records;
  for (const auto& item : corpus) {
    const auto c = cnn::classify_probability(cnn::forward(model, item.sample.input)[1], g.threshold);
    cm.add(item.sample.label, c.label);
    records.push_back({std::string(family_name(item.family)), item.sample.label, c.label});
  }
  const std::string report = metrics::report_csv(cm, records);
  if (a.out) io::write_text(*a.out, report);
  std::cout << (a.pretty ? pretty_table(report) : report);
  return kExitOk;
}

// ---- detect -------------------------------------------------------------------

struct DetectArgs {
  std::string input;
  std::string model;
  double speed = 1.0;
  std::optional<std::string> out;
  std::optional<std::string> reject_dir;
  std::size_t queue = 256;
};

int cmd_detect(const Globals& g, const DetectArgs& a) {
  const auto model = load_model_file(a.model);
  auto chunks = load_input(a.input, g.capacity(), [&](std::size_t i, const std::string& why) {
    info(g, "detect: skipping packet " + std::to_string(i) + ": " + why);
  });
  ReplaySchedule schedule;
  try {
    schedule = build_schedule(std::move(chunks), a.speed);
  } catch (const ReplayError& e) {
    throw ExitError{kExitInput, e.what()};
  }
  ReplaySource source(std::move(schedule), a.queue);
  pipeline::PipelineConfig cfg;
  cfg.order = g.order;
  cfg.threshold = g.threshold;
  cfg.queue_capacity = a.queue;
  if (a.reject_dir) cfg.reject_dir = *a.reject_dir;
  cfg.on_diagnostic = [&](const std::string& d) { info(g, "detect: " + d); };

  std::ofstream file;
  if (a.out) {
    file.open(*a.out, std::ios::trunc);
    if (!file) throw ExitError{kExitInput, "cannot write " + *a.out};
  }
  std::ostream& os = a.out ? static_cast<std::ostream&>(file) : std::cout;
  pipeline::PipelineStats stats;
  try {
    stats = pipeline::run_pipeline(source, model, cfg, [&](const pipeline::Verdict& v) {
      os << pipeline::verdict_json(v) << "\n";
    });
  } catch (const pipeline::PipelineError& e) {
    throw ExitError{kExitInput, e.what()};
  }
  os.flush();
  std::cerr << "summary: " << stats.chunks << " chunks, " << stats.malicious << " malicious, "
            << (stats.verdicts - stats.malicious) << " benign, " << stats.rejected << " rejected\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"msquid: byte-class visualisation and CNN classification of network traffic"};
  app.require_subcommand(1);
  app.fallthrough();

  Globals g;
  std::uint64_t seed_value = 0;
  auto* seed_opt = app.add_option("--seed", seed_value, "Seed for all randomness (env MSQUID_SEED)");
  app.add_option("--order", g.order, "Hilbert order of images (side = 2^order)")
      ->check(CLI::Range(2u, 8u));
  app.add_option("--threshold", g.threshold, "Malicious if p_malicious >= threshold")
      ->check(CLI::Range(0.0, 1.0));
  app.add_flag("--quiet", g.quiet, "Suppress informational messages");

  VisualizeArgs va;
  auto* vis = app.add_subcommand("visualize", "Render chunks of a pcap or raw file to PNG");
  vis->add_option("--input", va.input, "pcap or raw byte file")->required();
  vis->add_option("--out-dir", va.out_dir, "Output directory");
  vis->add_option("--scale", va.scale, "Pixels per cell")->check(CLI::PositiveNumber);

  SynthArgs sa;
  auto* syn = app.add_subcommand("synth", "Generate a synthetic labelled corpus");
  syn->add_option("--profile", sa.profile, "benign | nullheavy | ddos | whiteheavy")->required();
  syn->add_option("--count", sa.count, "Number of chunks")->check(CLI::PositiveNumber);
  syn->add_option("--label", sa.label, "Override label (benign | malicious)");
  syn->add_option("--family", sa.family, "Override malware family");
  syn->add_option("--out-dir", sa.out_dir, "Directory for .bin chunks");
  syn->add_option("--manifest", sa.manifest, "Manifest to append records to");
  syn->add_option("--chunk-len", sa.chunk_len, "Bytes per chunk (default: one full image)");
  syn->add_option("--start-index", sa.start_index, "Index of the first generated chunk");

  TrainArgs ta;
  auto* trn = app.add_subcommand("train", "Train a classifier from a manifest");
  trn->add_option("--manifest", ta.manifest, "JSON Lines manifest")->required();
  trn->add_option("--iterations", ta.cfg.iterations, "Mini-batch steps")->check(CLI::PositiveNumber);
  trn->add_option("--batch-size", ta.cfg.batch_size)->check(CLI::PositiveNumber);
  trn->add_option("--learning-rate", ta.cfg.learning_rate)->check(CLI::PositiveNumber);
  trn->add_option("--momentum", ta.cfg.momentum)->check(CLI::Range(0.0, 0.999999));
  trn->add_option("--threads", ta.cfg.threads, "Worker threads (0 = all cores)");
  trn->add_option("--out", ta.out, "Model file");
  trn->add_option("--loss-csv", ta.loss_csv, "Loss trace CSV (default <out>.loss.csv)");

  EvaluateArgs ea;
  auto* evl = app.add_subcommand("evaluate", "Score a model on a labelled manifest");
  evl->add_option("--manifest", ea.manifest)->required();
  evl->add_option("--model", ea.model)->required();
  evl->add_option("--out", ea.out, "Also write the CSV report here");
  evl->add_option("--positive", ea.positive, "Positive class for P/R/F1");
  evl->add_flag("--pretty", ea.pretty, "Aligned table instead of CSV");

  DetectArgs da;
  auto* det = app.add_subcommand("detect", "Replay a capture through the detection pipeline");
  det->add_option("--input", da.input, "pcap capture")->required();
  det->add_option("--model", da.model)->required();
  det->add_option("--speed", da.speed, "Replay speed multiplier")->check(CLI::PositiveNumber);
  det->add_option("--out", da.out, "Write verdicts here instead of stdout");
  det->add_option("--reject-dir", da.reject_dir, "Quarantine directory for malformed chunks");
  det->add_option("--queue", da.queue, "In-flight chunk bound")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitInput;
  }
  if (*seed_opt) g.seed = seed_value;

  try {
    if (*vis) return cmd_visualize(g, va);
    if (*syn) return cmd_synth(g, sa);
    if (*trn) return cmd_train(g, ta);
    if (*evl) return cmd_evaluate(g, ea);
    if (*det) return cmd_detect(g, da);
  } catch (const ExitError& e) {
    std::cerr << "msquid: " << e.message << "\n";
    return e.code;
  } catch (const CLI::ValidationError& e) {
    std::cerr << "msquid: " << e.what() << "\n";
    return kExitInput;
  } catch (const std::exception& e) {
    std::cerr << "msquid: " << e.what() << "\n";
    return kExitInput;
  }
  return kExitInput;
}
