// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstddef>
#include <numeric>
#include <set>
#include <vector>

#include "desmp/errors.hpp"
#include "desmp/rng.hpp"

namespace desmp::data {

/// Sample indices owned by each client.
struct Partition {
  std::vector<std::vector<std::size_t>> assignment;

  std::size_t clients() const noexcept { return assignment.size(); }
};

/// Label-sorted shard split: samples are ordered by label, cut into
/// clients * shards_per_client contiguous shards (the last shard takes the
/// remainder), and each client receives shards_per_client random shards.
inline Partition partition_noniid(std::size_t n_samples, const std::vector<int>& labels, std::size_t clients,
                                  std::size_t shards_per_client, Stream& rng) {
  if (clients == 0 || shards_per_client == 0) throw DomainError("client and shard counts must be positive");
  if (clients > n_samples) throw DomainError("more clients than samples");
  if (labels.size() != n_samples) throw ShapeError("label count does not match sample count");
  const std::size_t shards = std::min(clients * shards_per_client, n_samples);
  const std::size_t per_client = shards / clients;

  std::vector<std::size_t> order(n_samples);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return labels[a] < labels[b]; });

  const std::size_t shard_size = n_samples / shards;
  std::vector<std::size_t> shard_ids(shards);
  std::iota(shard_ids.begin(), shard_ids.end(), std::size_t{0});
  shuffle(shard_ids, rng);

  Partition p;
  p.assignment.resize(clients);
  for (std::size_t s = 0; s < shards; ++s) {
    // per_client shards each, leftovers round-robin when shards do not divide
    const std::size_t client = s < per_client * clients ? s / per_client : s - per_client * clients;
    const std::size_t id = shard_ids[s];
    const std::size_t begin = id * shard_size;
    const std::size_t end = id + 1 == shards ? n_samples : begin + shard_size;
    auto& dst = p.assignment[client];
    dst.insert(dst.end(), order.begin() + static_cast<std::ptrdiff_t>(begin),
               order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  for (auto& a : p.assignment) std::sort(a.begin(), a.end());
  return p;
}

/// Uniform random split into near-equal parts.
inline Partition partition_iid(std::size_t n_samples, std::size_t clients, Stream& rng) {
  if (clients == 0) throw DomainError("client count must be positive");
  if (clients > n_samples) throw DomainError("more clients than samples");
  std::vector<std::size_t> order(n_samples);
  std::iota(order.begin(), order.end(), std::size_t{0});
  shuffle(order, rng);
  Partition p;
  p.assignment.resize(clients);
  for (std::size_t i = 0; i < n_samples; ++i) p.assignment[i % clients].push_back(order[i]);
  for (auto& a : p.assignment) std::sort(a.begin(), a.end());
  return p;
}

/// Mean number of distinct labels held by a client.
inline double mean_distinct_labels(const Partition& p, const std::vector<int>& labels) {
  double total = 0.0;
  for (const auto& a : p.assignment) {
    std::set<int> seen;
    for (auto i : a) seen.insert(labels[i]);
    total += static_cast<double>(seen.size());
  }
  return total / static_cast<double>(p.clients());
}

/// 1 - mean_distinct / classes: 0 when every client sees every class.
inline double label_skew(const Partition& p, const std::vector<int>& labels, std::size_t classes) {
  return 1.0 - mean_distinct_labels(p, labels) / static_cast<double>(classes);
}

}  // namespace desmp::data
