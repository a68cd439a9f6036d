// SPDX-License-Identifier: Apache-2.0
#pragma once

// Seeded synthetic datasets for desk-scale experiments.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "desmp/data/dataset.hpp"
#include "desmp/errors.hpp"
#include "desmp/rng.hpp"

namespace desmp::data {

/// Isotropic unit-variance Gaussian blobs. Centers are rescaled so the
/// closest pair sits exactly `margin` standard deviations apart. Labels
/// cycle through the classes so the set is balanced.
inline Dataset synth_classification(std::size_t n, std::size_t dim, std::size_t classes, double margin,
                                    std::uint64_t seed) {
  if (!(margin > 0.0)) throw DomainError("margin must be positive");
  if (classes == 0 || dim == 0) throw DomainError("classes and dim must be positive");
  auto rng = Stream::derive(seed, Purpose::dataset, 1);
  std::vector<double> centers(classes * dim);
  for (auto& c : centers) c = rng.normal();
  if (classes > 1) {
    double min_dist = std::numeric_limits<double>::infinity();
    for (std::size_t a = 0; a < classes; ++a) {
      for (std::size_t b = a + 1; b < classes; ++b) {
        double d2 = 0.0;
        for (std::size_t j = 0; j < dim; ++j) {
          const double d = centers[a * dim + j] - centers[b * dim + j];
          d2 += d * d;
        }
        min_dist = std::min(min_dist, std::sqrt(d2));
      }
    }
    for (auto& c : centers) c *= margin / min_dist;
  }

  Dataset d;
  d.task = nn::Task::classification;
  d.classes = classes;
  d.features = nn::Matrix(n, dim);
  d.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto label = i % classes;
    d.labels[i] = static_cast<int>(label);
    for (std::size_t j = 0; j < dim; ++j) d.features(i, j) = centers[label * dim + j] + rng.normal();
  }
  return d;
}

/// Standard-normal features, target = x . w + b + noise with a fixed random
/// w ~ N(0, 1/dim) and b ~ N(0, 1).
inline Dataset synth_regression(std::size_t n, std::size_t dim, double noise_std, std::uint64_t seed) {
  if (!(noise_std >= 0.0)) throw DomainError("noise_std must be non-negative");
  if (dim == 0) throw DomainError("dim must be positive");
  auto rng = Stream::derive(seed, Purpose::dataset, 2);
  std::vector<double> w(dim);
  for (auto& v : w) v = rng.normal() / std::sqrt(static_cast<double>(dim));
  const double bias = rng.normal();

  Dataset d;
  d.task = nn::Task::regression;
  d.features = nn::Matrix(n, dim);
  d.values.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    double y = bias;
    for (std::size_t j = 0; j < dim; ++j) {
      const double x = rng.normal();
      d.features(i, j) = x;
      y += x * w[j];
    }
    d.values[i] = y + noise_std * rng.normal();
  }
  return d;
}

}  // namespace desmp::data
