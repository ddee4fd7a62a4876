#pragma once

// Confusion-matrix accounting and accuracy / precision / recall / F1, with
// per-family accuracy breakdowns and a CSV report.

#include <cstdint>
#include <cstdio>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "detail/error.hpp"
#include "labels.hpp"

namespace msquid::metrics {

enum class MetricsErrc { LengthMismatch, EmptyInput, DegenerateDenominator };
using MetricsError = Error<MetricsErrc>;

struct ConfusionMatrix {
  std::uint64_t tp = 0, tn = 0, fp = 0, fn = 0;
  Label positive = Label::Malicious;

  std::uint64_t total() const { return tp + tn + fp + fn; }

  void add(Label truth, Label predicted) {
    const bool t = truth == positive, p = predicted == positive;
    if (t && p) ++tp;
    else if (!t && !p) ++tn;
    else if (!t && p) ++fp;
    else ++fn;
  }

  /// The same predictions counted with the other class as positive.
  ConfusionMatrix swapped() const { return {tn, tp, fn, fp, other(positive)}; }

  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;
};

inline ConfusionMatrix confusion(std::span<const Label> truth, std::span<const Label> predicted,
                                 Label positive = Label::Malicious) {
  if (truth.size() != predicted.size()) {
    throw MetricsError(MetricsErrc::LengthMismatch, "truth and prediction lists differ in length");
  }
  if (truth.empty()) throw MetricsError(MetricsErrc::EmptyInput, "no predictions to score");
  ConfusionMatrix cm;
  cm.positive = positive;
  for (std::size_t i = 0; i < truth.size(); ++i) cm.add(truth[i], predicted[i]);
  return cm;
}

namespace detail {

inline double ratio(std::uint64_t num, std::uint64_t den, const char* what) {
  if (den == 0) {
    throw MetricsError(MetricsErrc::DegenerateDenominator, std::string(what) + " is undefined");
  }
  return static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace detail

inline double accuracy(const ConfusionMatrix& cm) {
  return detail::ratio(cm.tp + cm.tn, cm.total(), "accuracy (empty matrix)");
}

inline double precision(const ConfusionMatrix& cm) {
  return detail::ratio(cm.tp, cm.tp + cm.fp, "precision (no positive predictions)");
}

inline double recall(const ConfusionMatrix& cm) {
  return detail::ratio(cm.tp, cm.tp + cm.fn, "recall (no positive instances)");
}

/// Harmonic mean of precision and recall.
inline double f1(double p, double r) {
  if (!(p + r > 0.0)) {
    throw MetricsError(MetricsErrc::DegenerateDenominator, "F1 undefined when P + R = 0");
  }
  return 2.0 * p * r / (p + r);
}

inline double f1(const ConfusionMatrix& cm) { return f1(precision(cm), recall(cm)); }

struct FamilyRecord {
  std::string family;
  Label truth;
  Label predicted;
};

inline std::map<std::string, double> per_family_accuracy(std::span<const FamilyRecord> records) {
  if (records.empty()) throw MetricsError(MetricsErrc::EmptyInput, "no records to group");
  std::map<std::string, std::pair<std::uint64_t, std::uint64_t>> tally;  // correct, total
  for (const auto& r : records) {
    auto& [correct, total] = tally[r.family];
    correct += r.truth == r.predicted;
    ++total;
  }
  std::map<std::string, double> out;
  for (const auto& [family, ct] : tally) {
    out[family] = static_cast<double>(ct.first) / static_cast<double>(ct.second);
  }
  return out;
}

// Undefined metrics are reported as "undefined", never as zero.
inline std::string format_metric(const std::optional<double>& v) {
  if (!v) return "undefined";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", *v);
  return buf;
}

template <typename F>
std::optional<double> try_metric(F&& f) {
  try {
    return f();
  } catch (const MetricsError&) {
    return std::nullopt;
  }
}

/// CSV report:
///   metric,value
///   accuracy,<A>  precision,<P>  recall,<R>  f1,<F1>   (one per row)
///   family,<name>,accuracy,<value>                     (one per family)
///   aggregate,<A>,<P>,<R>,<F1>
inline std::string report_csv(const ConfusionMatrix& cm, std::span<const FamilyRecord> records) {
  const auto a = try_metric([&] { return accuracy(cm); });
  const auto p = try_metric([&] { return precision(cm); });
  const auto r = try_metric([&] { return recall(cm); });
  const auto f = try_metric([&] { return f1(cm); });
  std::string out = "metric,value\n";
  out += "accuracy," + format_metric(a) + "\n";
  out += "precision," + format_metric(p) + "\n";
  out += "recall," + format_metric(r) + "\n";
  out += "f1," + format_metric(f) + "\n";
  if (!records.empty()) {
    for (const auto& [family, acc] : per_family_accuracy(records)) {
      out += "family," + family + ",accuracy," + format_metric(acc) + "\n";
    }
  }
  out += "aggregate," + format_metric(a) + "," + format_metric(p) + "," + format_metric(r) + "," +
         format_metric(f) + "\n";
  return out;
}

}  // namespace msquid::metrics
