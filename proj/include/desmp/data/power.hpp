// SPDX-License-Identifier: Apache-2.0
#pragma once

// Reader for the UCI household power consumption text file: semicolon
// separated, one header line, "?" for missing values.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <string>
#include <string_view>
#include <vector>

#include "desmp/data/dataset.hpp"
#include "desmp/errors.hpp"

namespace desmp::data {

struct PowerData {
  Dataset dataset;
  std::size_t dropped_rows = 0;
  std::vector<std::string> feature_names;
  std::vector<double> feature_mean;
  std::vector<double> feature_std;
};

namespace detail {

inline std::vector<std::string_view> split_fields(std::string_view line, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(sep, start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline bool parse_double(std::string_view s, double& out) {
  s = trim(s);
  if (s.empty()) return false;
  if (s.front() == '+') s.remove_prefix(1);
  const auto res = std::from_chars(s.data(), s.data() + s.size(), out);
  return res.ec == std::errc() && res.ptr == s.data() + s.size() && std::isfinite(out);
}

}  // namespace detail

/// Columns named in `skip` (date and time by default) are ignored; the
/// target column is returned raw and every other column is z-scored.
inline PowerData load_power_csv(const std::string& path, const std::string& target = "Global_active_power",
                                const std::vector<std::string>& skip = {"Date", "Time"}) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path, 0);
  std::string line;
  if (!std::getline(in, line)) throw FormatError(path + ": empty file", 1);

  const auto header = detail::split_fields(line, ';');
  int target_col = -1;
  std::vector<std::size_t> feature_cols;
  PowerData out;
  for (std::size_t c = 0; c < header.size(); ++c) {
    const std::string name(detail::trim(header[c]));
    if (name == target) {
      target_col = static_cast<int>(c);
    } else if (std::find(skip.begin(), skip.end(), name) == skip.end()) {
      feature_cols.push_back(c);
      out.feature_names.push_back(name);
    }
  }
  if (target_col < 0) throw FormatError(path + ": missing target column " + target, 1);
  if (feature_cols.empty()) throw FormatError(path + ": no feature columns", 1);

  std::vector<double> feats;
  std::vector<double> targets;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    const auto fields = detail::split_fields(line, ';');
    if (fields.size() != header.size()) {
      throw FormatError(path + ":" + std::to_string(line_no) + ": expected " + std::to_string(header.size()) +
                            " fields, found " + std::to_string(fields.size()),
                        line_no);
    }
    bool missing = false;
    std::vector<double> row;
    row.reserve(feature_cols.size());
    double y = 0.0;
    auto read = [&](std::size_t c, double& v) {
      const auto f = detail::trim(fields[c]);
      if (f == "?" || f.empty()) {
        missing = true;
        return;
      }
      if (!detail::parse_double(f, v)) {
        throw FormatError(path + ":" + std::to_string(line_no) + ": unparseable value '" + std::string(f) +
                              "' in column " + std::string(detail::trim(header[c])),
                          line_no);
      }
    };
    read(static_cast<std::size_t>(target_col), y);
    for (auto c : feature_cols) {
      double v = 0.0;
      read(c, v);
      row.push_back(v);
    }
    if (missing) {
      ++out.dropped_rows;
      continue;
    }
    feats.insert(feats.end(), row.begin(), row.end());
    targets.push_back(y);
  }
  if (targets.empty()) throw FormatError(path + ": no complete rows", line_no);

  const std::size_t n = targets.size();
  const std::size_t dim = feature_cols.size();
  out.feature_mean.assign(dim, 0.0);
  out.feature_std.assign(dim, 0.0);
  for (std::size_t j = 0; j < dim; ++j) {
    double mean = 0.0;
    for (std::size_t r = 0; r < n; ++r) mean += feats[r * dim + j];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
      const double d = feats[r * dim + j] - mean;
      var += d * d;
    }
    var /= static_cast<double>(n);
    const double sd = std::sqrt(var);
    out.feature_mean[j] = mean;
    out.feature_std[j] = sd;
    for (std::size_t r = 0; r < n; ++r) {
      double& v = feats[r * dim + j];
      v = sd > 0.0 ? (v - mean) / sd : 0.0;
    }
  }
  out.dataset.task = nn::Task::regression;
  out.dataset.features = nn::Matrix(n, dim, std::move(feats));
  out.dataset.values = std::move(targets);
  return out;
}

}  // namespace desmp::data
