#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>

namespace msquid {

enum class Label { Benign = 0, Malicious = 1 };

inline constexpr std::string_view label_name(Label l) {
  return l == Label::Benign ? "benign" : "malicious";
}

inline std::optional<Label> parse_label(std::string_view s) {
  if (s == "benign") return Label::Benign;
  if (s == "malicious") return Label::Malicious;
  return std::nullopt;
}

inline constexpr Label other(Label l) { return l == Label::Benign ? Label::Malicious : Label::Benign; }

// Malware families of the evaluation corpus, plus catch-alls.
enum class Family { Trojan, Ddos, Botnet, OsScan, Keylogger, Backdoor, Unknown, Benign };

inline constexpr std::array<std::string_view, 8> kFamilyNames{
    "trojan", "ddos", "botnet", "os_scan", "keylogger", "backdoor", "unknown", "benign"};

inline constexpr std::string_view family_name(Family f) {
  return kFamilyNames[static_cast<std::size_t>(f)];
}

inline std::optional<Family> parse_family(std::string_view s) {
  for (std::size_t i = 0; i < kFamilyNames.size(); ++i) {
    if (kFamilyNames[i] == s) return static_cast<Family>(i);
  }
  return std::nullopt;
}

/// Benign samples carry the benign family and nothing else does.
inline constexpr bool consistent(Label l, Family f) {
  return (l == Label::Benign) == (f == Family::Benign);
}

}  // namespace msquid
