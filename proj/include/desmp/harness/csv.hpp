// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "desmp/errors.hpp"
#include "desmp/fl/history.hpp"

namespace desmp::harness {

/// Shortest-round-trip-safe decimal; "inf", "-inf" and "nan" spelled out.
inline std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline const std::vector<std::string>& rounds_header() {
  static const std::vector<std::string> h{"round",       "epsilon",     "gamma",       "sensitivity", "train_loss",
                                          "test_loss",   "test_accuracy", "delta_spent", "noise_scale", "attack_mean",
                                          "noise_kl",    "attacker_loss", "reward",     "verdict"};
  return h;
}

inline const std::vector<std::string>& sweep_header() {
  static const std::vector<std::string> h{"seed",       "epsilon",         "gamma",  "rounds", "final_loss",
                                          "final_accuracy", "stop_reason", "status", "error"};
  return h;
}

inline const std::vector<std::string>& rewards_header() {
  static const std::vector<std::string> h{"episode", "explore_prob", "accumulated_reward"};
  return h;
}

inline const std::vector<std::string>& detection_header() {
  static const std::vector<std::string> h{"episode", "round",         "epsilon",   "test_loss",
                                          "baseline", "attacker_loss", "verdict"};
  return h;
}

inline std::string join(const std::vector<std::string>& fields) {
  std::string out;
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i) out += ',';
    out += fields[i];
  }
  return out;
}

/// Quotes a field when it contains a separator, quote or newline.
inline std::string quote(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out += '"';
    out += ch;
  }
  return out + '"';
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool in_quotes = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (in_quotes) {
      if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (ch == '"') {
        in_quotes = false;
      } else {
        cur += ch;
      }
    } else if (ch == '"') {
      in_quotes = true;
    } else if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur += ch;
    }
  }
  out.push_back(cur);
  return out;
}

inline std::string rounds_row(const fl::RoundRecord& r) {
  return join({std::to_string(r.round), fmt(r.epsilon), fmt(r.gamma), fmt(r.sensitivity), fmt(r.train_loss),
               fmt(r.test_loss), fmt(r.test_accuracy), fmt(r.delta_spent), fmt(r.noise_scale), fmt(r.attack_mean),
               fmt(r.noise_kl), fmt(r.attacker_loss), fmt(r.reward), fl::to_string(r.verdict)});
}

inline std::string rounds_csv(const fl::TrainingHistory& h) {
  std::string out = join(rounds_header()) + '\n';
  for (const auto& r : h) out += rounds_row(r) + '\n';
  return out;
}

/// Writes to a sibling temporary file and renames it into place, so
/// readers never observe a partial file.
inline void write_atomic(const std::filesystem::path& path, const std::string& content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open " + tmp.string() + " for writing");
    out << content;
    if (!out.flush()) throw Error("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (header[i] == name) return i;
    }
    throw FormatError("missing column " + name, 0);
  }
};

inline CsvTable parse_csv(const std::string& text) {
  CsvTable t;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    auto fields = split_csv_line(line);
    if (t.header.empty()) {
      t.header = std::move(fields);
    } else {
      if (fields.size() != t.header.size()) {
        throw FormatError("line " + std::to_string(line_no) + ": expected " + std::to_string(t.header.size()) +
                              " fields, got " + std::to_string(fields.size()),
                          line_no);
      }
      t.rows.push_back(std::move(fields));
    }
  }
  if (t.header.empty()) throw FormatError("empty CSV file", 0);
  return t;
}

inline double parse_real(const std::string& s) {
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  if (s == "nan" || s.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != s.size()) throw FormatError("not a number: '" + s + "'", 0);
  return v;
}

}  // namespace desmp::harness
