// SPDX-License-Identifier: Apache-2.0
#pragma once

// Dense ReLU network with a log-softmax (classification) or linear
// (regression) head, trained by plain mini-batch SGD.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "desmp/errors.hpp"
#include "desmp/nn/matrix.hpp"
#include "desmp/rng.hpp"

namespace desmp::nn {

enum class Task { classification, regression };

inline const char* to_string(Task t) { return t == Task::classification ? "classification" : "regression"; }

/// Shape of one dense layer: `rows` outputs, `cols` inputs.
struct LayerShape {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t weight_count() const noexcept { return rows * cols; }
  std::size_t param_count() const noexcept { return rows * cols + rows; }
  friend bool operator==(const LayerShape&, const LayerShape&) = default;
};

/// Flat concatenation of every layer's weights (row-major) followed by its
/// biases, plus the per-layer shapes.
struct ParamVector {
  std::vector<double> values;
  std::vector<LayerShape> shapes;

  ParamVector() = default;
  explicit ParamVector(std::vector<LayerShape> layer_shapes) : shapes(std::move(layer_shapes)) {
    std::size_t n = 0;
    for (const auto& s : shapes) n += s.param_count();
    values.assign(n, 0.0);
  }
  ParamVector(std::vector<double> vals, std::vector<LayerShape> layer_shapes)
      : values(std::move(vals)), shapes(std::move(layer_shapes)) {
    std::size_t n = 0;
    for (const auto& s : shapes) n += s.param_count();
    if (n != values.size()) throw ShapeError("parameter count does not match layer shapes");
  }

  std::size_t size() const noexcept { return values.size(); }

  /// Offset of the first weight of `layer`.
  std::size_t offset(std::size_t layer) const {
    std::size_t off = 0;
    for (std::size_t l = 0; l < layer; ++l) off += shapes[l].param_count();
    return off;
  }

  std::span<double> weights(std::size_t layer) {
    return {values.data() + offset(layer), shapes[layer].weight_count()};
  }
  std::span<const double> weights(std::size_t layer) const {
    return {values.data() + offset(layer), shapes[layer].weight_count()};
  }
  std::span<double> bias(std::size_t layer) {
    return {values.data() + offset(layer) + shapes[layer].weight_count(), shapes[layer].rows};
  }
  std::span<const double> bias(std::size_t layer) const {
    return {values.data() + offset(layer) + shapes[layer].weight_count(), shapes[layer].rows};
  }

  bool all_finite() const {
    return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
  }

  bool same_layout(const ParamVector& other) const { return shapes == other.shapes; }

  friend bool operator==(const ParamVector&, const ParamVector&) = default;
};

/// Layer sizes from input to output plus the task head.
struct ModelSpec {
  std::vector<std::size_t> layer_sizes;
  Task task = Task::classification;

  std::size_t input_size() const { return layer_sizes.front(); }
  std::size_t output_size() const { return layer_sizes.back(); }
  std::size_t layer_count() const { return layer_sizes.size() - 1; }

  void validate() const {
    if (layer_sizes.size() < 2) throw ShapeError("model needs at least an input and an output size");
    for (auto s : layer_sizes) {
      if (s == 0) throw ShapeError("layer sizes must be positive");
    }
    if (task == Task::classification && output_size() < 2) {
      throw ShapeError("classification needs at least two output classes");
    }
  }

  std::vector<LayerShape> shapes() const {
    std::vector<LayerShape> out;
    for (std::size_t l = 0; l + 1 < layer_sizes.size(); ++l) out.push_back({layer_sizes[l + 1], layer_sizes[l]});
    return out;
  }

  std::size_t param_count() const {
    std::size_t n = 0;
    for (const auto& s : shapes()) n += s.param_count();
    return n;
  }

  /// input -> hidden... -> output.
  static ModelSpec make(std::size_t input, std::vector<std::size_t> hidden, std::size_t output, Task task) {
    ModelSpec spec;
    spec.layer_sizes.push_back(input);
    spec.layer_sizes.insert(spec.layer_sizes.end(), hidden.begin(), hidden.end());
    spec.layer_sizes.push_back(output);
    spec.task = task;
    spec.validate();
    return spec;
  }

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

/// Inputs plus targets. Classification uses `labels`; regression uses
/// `values`, row-major with one row of output_size entries per sample.
struct Batch {
  Matrix inputs;
  std::vector<int> labels;
  std::vector<double> values;

  std::size_t size() const noexcept { return inputs.rows; }
};

inline void check_params(const ModelSpec& spec, const ParamVector& params) {
  spec.validate();
  if (params.shapes != spec.shapes() || params.size() != spec.param_count()) {
    throw ShapeError("parameter layout does not match model spec");
  }
}

/// Glorot-uniform weights, zero biases.
inline ParamVector init_params(const ModelSpec& spec, Stream& rng) {
  spec.validate();
  ParamVector p(spec.shapes());
  for (std::size_t l = 0; l < p.shapes.size(); ++l) {
    const auto& s = p.shapes[l];
    const double limit = std::sqrt(6.0 / static_cast<double>(s.rows + s.cols));
    for (double& w : p.weights(l)) w = (2.0 * rng.uniform() - 1.0) * limit;
  }
  return p;
}

namespace detail {

// out = in * W^T + b, row by row.
inline void dense_forward(const Matrix& in, std::span<const double> w, std::span<const double> b,
                          const LayerShape& shape, Matrix& out) {
  out = Matrix(in.rows, shape.rows);
  for (std::size_t s = 0; s < in.rows; ++s) {
    const double* x = in.data.data() + s * in.cols;
    double* z = out.data.data() + s * shape.rows;
    for (std::size_t j = 0; j < shape.rows; ++j) {
      const double* wj = w.data() + j * shape.cols;
      double acc = 0.0;
      for (std::size_t i = 0; i < shape.cols; ++i) acc += wj[i] * x[i];
      z[j] = acc + b[j];
    }
  }
}

inline void relu_inplace(Matrix& m) {
  for (double& v : m.data) v = v > 0.0 ? v : 0.0;
}

inline void log_softmax_inplace(Matrix& m) {
  for (std::size_t s = 0; s < m.rows; ++s) {
    auto r = m.row(s);
    const double mx = *std::max_element(r.begin(), r.end());
    double sum = 0.0;
    for (double v : r) sum += std::exp(v - mx);
    const double lse = mx + std::log(sum);
    for (double& v : r) v -= lse;
  }
}

// Runs the network keeping every layer's activation; acts[0] is the input.
inline std::vector<Matrix> forward_all(const ModelSpec& spec, const ParamVector& params, const Matrix& inputs) {
  std::vector<Matrix> acts;
  acts.reserve(spec.layer_count() + 1);
  acts.push_back(inputs);
  for (std::size_t l = 0; l < spec.layer_count(); ++l) {
    Matrix z;
    dense_forward(acts.back(), params.weights(l), params.bias(l), params.shapes[l], z);
    const bool last = l + 1 == spec.layer_count();
    if (!last) {
      relu_inplace(z);
    } else if (spec.task == Task::classification) {
      log_softmax_inplace(z);
    }
    acts.push_back(std::move(z));
  }
  return acts;
}

inline void check_targets(const Matrix& outputs, const Batch& batch, Task task) {
  if (outputs.rows == 0) throw ShapeError("empty batch");
  if (task == Task::classification) {
    if (batch.labels.size() != outputs.rows) throw ShapeError("label count does not match output rows");
    for (int y : batch.labels) {
      if (y < 0 || static_cast<std::size_t>(y) >= outputs.cols) throw ShapeError("label out of range");
    }
  } else if (batch.values.size() != outputs.rows * outputs.cols) {
    throw ShapeError("target count does not match outputs");
  }
}

inline void check_finite(const ParamVector& params) {
  for (std::size_t l = 0; l < params.shapes.size(); ++l) {
    const auto off = params.offset(l);
    const auto n = params.shapes[l].param_count();
    for (std::size_t i = off; i < off + n; ++i) {
      if (!std::isfinite(params.values[i])) throw NumericError("non-finite parameter", l);
    }
  }
}

}  // namespace detail

/// Network outputs: log-probabilities for classification, raw values for
/// regression.
inline Matrix forward(const ModelSpec& spec, const ParamVector& params, const Matrix& inputs) {
  check_params(spec, params);
  detail::check_finite(params);
  if (inputs.cols != spec.input_size()) {
    throw ShapeError("input has " + std::to_string(inputs.cols) + " columns, model expects " +
                     std::to_string(spec.input_size()));
  }
  return std::move(detail::forward_all(spec, params, inputs).back());
}

/// Mean negative log-likelihood (classification) or mean squared error over
/// every output element (regression).
inline double compute_loss(const Matrix& outputs, const Batch& batch, Task task) {
  detail::check_targets(outputs, batch, task);
  double sum = 0.0;
  if (task == Task::classification) {
    for (std::size_t s = 0; s < outputs.rows; ++s) sum -= outputs(s, static_cast<std::size_t>(batch.labels[s]));
    return sum / static_cast<double>(outputs.rows);
  }
  for (std::size_t i = 0; i < outputs.data.size(); ++i) {
    const double d = outputs.data[i] - batch.values[i];
    sum += d * d;
  }
  return sum / static_cast<double>(outputs.data.size());
}

struct LossAndGradient {
  double loss = 0.0;
  ParamVector gradient;
};

/// Backpropagation of compute_loss through the whole network.
inline LossAndGradient loss_and_gradient(const ModelSpec& spec, const ParamVector& params, const Batch& batch) {
  check_params(spec, params);
  detail::check_finite(params);
  if (batch.inputs.cols != spec.input_size()) throw ShapeError("batch input width does not match model");
  const auto acts = detail::forward_all(spec, params, batch.inputs);
  const Matrix& out = acts.back();
  LossAndGradient result{compute_loss(out, batch, spec.task), ParamVector(params.shapes)};

  // delta = dL/dz for the current layer
  Matrix delta(out.rows, out.cols);
  if (spec.task == Task::classification) {
    const double inv = 1.0 / static_cast<double>(out.rows);
    for (std::size_t s = 0; s < out.rows; ++s) {
      for (std::size_t j = 0; j < out.cols; ++j) delta(s, j) = std::exp(out(s, j)) * inv;
      delta(s, static_cast<std::size_t>(batch.labels[s])) -= inv;
    }
  } else {
    const double scale = 2.0 / static_cast<double>(out.data.size());
    for (std::size_t i = 0; i < out.data.size(); ++i) delta.data[i] = scale * (out.data[i] - batch.values[i]);
  }

  for (std::size_t l = spec.layer_count(); l-- > 0;) {
    const auto& shape = params.shapes[l];
    const Matrix& in = acts[l];
    auto gw = result.gradient.weights(l);
    auto gb = result.gradient.bias(l);
    for (std::size_t s = 0; s < in.rows; ++s) {
      const double* x = in.data.data() + s * in.cols;
      for (std::size_t j = 0; j < shape.rows; ++j) {
        const double d = delta(s, j);
        if (d == 0.0) continue;
        gb[j] += d;
        double* g = gw.data() + j * shape.cols;
        for (std::size_t i = 0; i < shape.cols; ++i) g[i] += d * x[i];
      }
    }
    if (l == 0) break;
    // Propagate through W and the ReLU of the layer below.
    const auto w = params.weights(l);
    Matrix below(in.rows, shape.cols);
    for (std::size_t s = 0; s < in.rows; ++s) {
      double* dst = below.data.data() + s * shape.cols;
      for (std::size_t j = 0; j < shape.rows; ++j) {
        const double d = delta(s, j);
        if (d == 0.0) continue;
        const double* wj = w.data() + j * shape.cols;
        for (std::size_t i = 0; i < shape.cols; ++i) dst[i] += d * wj[i];
      }
      const double* a = in.data.data() + s * shape.cols;
      for (std::size_t i = 0; i < shape.cols; ++i) {
        if (a[i] <= 0.0) dst[i] = 0.0;
      }
    }
    delta = std::move(below);
  }
  return result;
}

/// One SGD step: params - lr * gradient. Throws NumericError naming the
/// first layer whose gradient is not finite.
inline ParamVector sgd_step(const ModelSpec& spec, const ParamVector& params, const Batch& batch, double lr,
                            double* loss_out = nullptr) {
  if (!(lr > 0.0)) throw DomainError("learning rate must be positive");
  auto lg = loss_and_gradient(spec, params, batch);
  for (std::size_t l = 0; l < lg.gradient.shapes.size(); ++l) {
    const auto off = lg.gradient.offset(l);
    const auto n = lg.gradient.shapes[l].param_count();
    for (std::size_t i = off; i < off + n; ++i) {
      if (!std::isfinite(lg.gradient.values[i])) throw NumericError("non-finite gradient", l);
    }
  }
  ParamVector next = params;
  for (std::size_t i = 0; i < next.values.size(); ++i) next.values[i] -= lr * lg.gradient.values[i];
  if (loss_out) *loss_out = lg.loss;
  return next;
}

/// Euclidean norm of the flat vector.
inline double update_norm(std::span<const double> delta) {
  // Scaled accumulation so huge or tiny entries neither overflow nor
  // underflow.
  double scale = 0.0;
  double ssq = 1.0;
  for (double v : delta) {
    if (v == 0.0) continue;
    const double a = std::fabs(v);
    if (scale < a) {
      ssq = 1.0 + ssq * (scale / a) * (scale / a);
      scale = a;
    } else {
      ssq += (a / scale) * (a / scale);
    }
  }
  return scale * std::sqrt(ssq);
}

inline double update_norm(const ParamVector& delta) { return update_norm(std::span<const double>(delta.values)); }

/// Index of the largest entry of each row.
inline std::vector<int> predict_labels(const Matrix& outputs) {
  std::vector<int> labels(outputs.rows);
  for (std::size_t s = 0; s < outputs.rows; ++s) {
    auto r = outputs.row(s);
    labels[s] = static_cast<int>(std::max_element(r.begin(), r.end()) - r.begin());
  }
  return labels;
}

}  // namespace desmp::nn
