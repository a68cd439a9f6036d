// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdio>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "desmp/errors.hpp"
#include "desmp/nn/matrix.hpp"
#include "desmp/nn/model.hpp"

namespace desmp::data {

/// Feature matrix plus targets. `labels` is used for classification,
/// `values` (one per row) for regression.
struct Dataset {
  nn::Task task = nn::Task::classification;
  nn::Matrix features;
  std::vector<int> labels;
  std::vector<double> values;
  std::size_t classes = 0;  // classification only

  std::size_t size() const noexcept { return features.rows; }
  std::size_t dim() const noexcept { return features.cols; }
  std::size_t output_size() const noexcept { return task == nn::Task::classification ? classes : 1; }

  /// Rows `indices` as a training batch.
  nn::Batch batch(std::span<const std::size_t> indices) const {
    nn::Batch b;
    b.inputs = nn::Matrix(indices.size(), dim());
    for (std::size_t r = 0; r < indices.size(); ++r) {
      const auto src = features.row(indices[r]);
      std::copy(src.begin(), src.end(), b.inputs.row(r).begin());
    }
    if (task == nn::Task::classification) {
      b.labels.reserve(indices.size());
      for (auto i : indices) b.labels.push_back(labels[i]);
    } else {
      b.values.reserve(indices.size());
      for (auto i : indices) b.values.push_back(values[i]);
    }
    return b;
  }

  /// The whole dataset as one batch.
  nn::Batch all() const {
    nn::Batch b;
    b.inputs = features;
    b.labels = labels;
    b.values = values;
    return b;
  }

  Dataset subset(std::span<const std::size_t> indices) const {
    Dataset d;
    d.task = task;
    d.classes = classes;
    auto b = batch(indices);
    d.features = std::move(b.inputs);
    d.labels = std::move(b.labels);
    d.values = std::move(b.values);
    return d;
  }

  void validate() const {
    if (task == nn::Task::classification) {
      if (labels.size() != size()) throw ShapeError("label count does not match feature rows");
    } else if (values.size() != size()) {
      throw ShapeError("target count does not match feature rows");
    }
  }
};

struct TrainTest {
  Dataset train;
  Dataset test;
};

/// Seeded split of `d` with `test_fraction` of the rows held out.
inline TrainTest split(const Dataset& d, double test_fraction, Stream& rng) {
  std::vector<std::size_t> idx(d.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  shuffle(idx, rng);
  auto n_test = static_cast<std::size_t>(static_cast<double>(d.size()) * test_fraction);
  if (n_test == 0 || n_test >= d.size()) throw DomainError("test fraction leaves an empty split");
  std::span<const std::size_t> all(idx);
  return {d.subset(all.subspan(n_test)), d.subset(all.first(n_test))};
}

/// Writes `d` as CSV: x0..x{dim-1}, then `label` or `target`.
inline void write_csv(const Dataset& d, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open " + path + " for writing");
  for (std::size_t j = 0; j < d.dim(); ++j) out << 'x' << j << ',';
  out << (d.task == nn::Task::classification ? "label" : "target") << '\n';
  char buf[32];
  for (std::size_t r = 0; r < d.size(); ++r) {
    for (double v : d.features.row(r)) {
      std::snprintf(buf, sizeof buf, "%.17g", v);
      out << buf << ',';
    }
    if (d.task == nn::Task::classification) {
      out << d.labels[r];
    } else {
      std::snprintf(buf, sizeof buf, "%.17g", d.values[r]);
      out << buf;
    }
    out << '\n';
  }
}

}  // namespace desmp::data
