// SPDX-License-Identifier: Apache-2.0
#pragma once

// Federated training with clipped, noised aggregation: client sampling,
// local SGD, median-norm sensitivity, norm clipping, Gaussian (or attacked)
// noise, budget-gated termination.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "desmp/attack/desmp.hpp"
#include "desmp/data/dataset.hpp"
#include "desmp/data/partition.hpp"
#include "desmp/dp/mechanism.hpp"
#include "desmp/errors.hpp"
#include "desmp/fl/history.hpp"
#include "desmp/nn/model.hpp"
#include "desmp/rng.hpp"

namespace desmp::fl {

struct FLConfig {
  std::size_t total_clients = 100;      // K
  std::size_t clients_per_round = 30;   // k
  std::size_t batch_size = 32;          // b
  std::size_t local_epochs = 10;        // i
  double learning_rate = 0.01;          // eta
  // Accuracy threshold (classification) or loss threshold (regression).
  std::optional<double> threshold;
  std::size_t max_rounds = 30;          // T
  std::uint64_t master_seed = 1;
  // End the run with StopReason::diverged when the model turns non-finite
  // instead of raising RoundError.
  bool stop_on_divergence = false;

  void validate() const {
    if (total_clients == 0) throw ConfigError("fl.K", "must be positive");
    if (clients_per_round == 0) throw ConfigError("fl.k", "must be positive");
    if (clients_per_round > total_clients) throw ConfigError("fl.k", "must not exceed fl.K");
    if (batch_size == 0) throw ConfigError("fl.batch_size", "must be positive");
    if (local_epochs == 0) throw ConfigError("fl.local_epochs", "must be positive");
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
      throw ConfigError("fl.learning_rate", "must be non-negative");
    }
    if (max_rounds == 0) throw ConfigError("fl.max_rounds", "must be positive");
  }

  friend bool operator==(const FLConfig&, const FLConfig&) = default;
};

/// Noise calibration for a run. epsilon = +inf disables noise, clipping
/// still applies, and the accountant is never charged.
struct PrivacySetting {
  dp::PrivacyParams params{};
  double budget = 0.001;

  friend bool operator==(const PrivacySetting&, const PrivacySetting&) = default;
};

struct FederatedData {
  data::Dataset train;
  data::Dataset test;
  data::Partition partition;
};

/// k distinct client ids drawn uniformly without replacement, ascending.
inline std::vector<std::size_t> select_clients(std::size_t total, std::size_t k, Stream& rng) {
  if (k > total) throw ConfigError("fl.k", "cannot select more clients than exist");
  std::vector<std::size_t> ids(total);
  std::iota(ids.begin(), ids.end(), std::size_t{0});
  for (std::size_t i = 0; i < k; ++i) {
    const auto j = i + rng.below(total - i);
    std::swap(ids[i], ids[j]);
  }
  ids.resize(k);
  std::sort(ids.begin(), ids.end());
  return ids;
}

struct LocalUpdate {
  nn::ParamVector delta;
  double norm = 0.0;
  double train_loss = std::numeric_limits<double>::quiet_NaN();  // mean batch loss of the last epoch
};

/// `epochs` passes of mini-batch SGD over `indices`, reshuffled each epoch.
inline nn::ParamVector train_epochs(const nn::ModelSpec& spec, nn::ParamVector params, const data::Dataset& data,
                                    std::span<const std::size_t> indices, std::size_t batch_size, std::size_t epochs,
                                    double lr, Stream& rng, double* last_epoch_loss = nullptr) {
  if (indices.empty()) throw DomainError("client has no data");
  std::vector<std::size_t> order(indices.begin(), indices.end());
  double epoch_loss = std::numeric_limits<double>::quiet_NaN();
  for (std::size_t e = 0; e < epochs; ++e) {
    shuffle(order, rng);
    double sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += batch_size) {
      const auto len = std::min(batch_size, order.size() - start);
      const auto batch = data.batch(std::span<const std::size_t>(order).subspan(start, len));
      double loss = 0.0;
      if (lr > 0.0) {
        params = nn::sgd_step(spec, params, batch, lr, &loss);
      } else {
        loss = nn::compute_loss(nn::forward(spec, params, batch.inputs), batch, spec.task);
      }
      sum += loss;
      ++batches;
    }
    epoch_loss = sum / static_cast<double>(batches);
  }
  if (last_epoch_loss) *last_epoch_loss = epoch_loss;
  return params;
}

/// Local model update: parameter delta from the global model and its norm.
inline LocalUpdate local_train(const nn::ModelSpec& spec, const data::Dataset& data,
                               std::span<const std::size_t> indices, const nn::ParamVector& global,
                               const FLConfig& cfg, Stream& rng) {
  LocalUpdate u;
  auto local = train_epochs(spec, global, data, indices, cfg.batch_size, cfg.local_epochs, cfg.learning_rate, rng,
                            &u.train_loss);
  u.delta = std::move(local);
  for (std::size_t i = 0; i < u.delta.values.size(); ++i) u.delta.values[i] -= global.values[i];
  u.norm = nn::update_norm(u.delta);
  return u;
}

/// Median of the update norms; the mean of the two middle values for an
/// even count.
inline double median_sensitivity(std::vector<double> norms) {
  if (norms.empty()) throw DomainError("median of an empty list");
  std::sort(norms.begin(), norms.end());
  const auto n = norms.size();
  return n % 2 == 1 ? norms[n / 2] : 0.5 * (norms[n / 2 - 1] + norms[n / 2]);
}

/// delta / max(1, norm / S).
inline nn::ParamVector clip_update(nn::ParamVector delta, double norm, double sensitivity) {
  if (!(sensitivity > 0.0)) throw DomainError("clipping bound must be positive");
  const double factor = std::max(1.0, norm / sensitivity);
  if (factor > 1.0) {
    for (double& v : delta.values) v /= factor;
  }
  return delta;
}

struct ClientUpdate {
  std::size_t client = 0;
  nn::ParamVector delta;
};

/// w_t + (sum of updates + noise) / k, reducing in the order given.
inline nn::ParamVector aggregate(const nn::ParamVector& global, std::span<const nn::ParamVector> clipped,
                                 std::span<const double> noise) {
  if (clipped.empty()) throw DomainError("no client updates to aggregate");
  const auto d = global.size();
  if (noise.size() != d) throw ShapeError("noise dimension does not match model");
  std::vector<double> sum(d, 0.0);
  for (const auto& u : clipped) {
    if (u.size() != d) throw ShapeError("client update dimension does not match model");
    for (std::size_t i = 0; i < d; ++i) sum[i] += u.values[i];
  }
  const double k = static_cast<double>(clipped.size());
  nn::ParamVector next = global;
  for (std::size_t i = 0; i < d; ++i) next.values[i] += (sum[i] + noise[i]) / k;
  return next;
}

/// Same as above, reducing in ascending client-id order whatever the input
/// order.
inline nn::ParamVector aggregate(const nn::ParamVector& global, std::vector<ClientUpdate> updates,
                                 std::span<const double> noise) {
  std::sort(updates.begin(), updates.end(), [](const auto& a, const auto& b) { return a.client < b.client; });
  std::vector<nn::ParamVector> ordered;
  ordered.reserve(updates.size());
  for (auto& u : updates) ordered.push_back(std::move(u.delta));
  return aggregate(global, std::span<const nn::ParamVector>(ordered), noise);
}

struct Evaluation {
  double loss = 0.0;
  double accuracy = std::numeric_limits<double>::quiet_NaN();
};

inline Evaluation evaluate(const nn::ModelSpec& spec, const nn::ParamVector& params, const data::Dataset& test) {
  const auto out = nn::forward(spec, params, test.features);
  Evaluation e;
  const auto batch = test.all();
  e.loss = nn::compute_loss(out, batch, spec.task);
  if (spec.task == nn::Task::classification) {
    const auto pred = nn::predict_labels(out);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == test.labels[i] ? 1 : 0;
    e.accuracy = static_cast<double>(correct) / static_cast<double>(pred.size());
  }
  return e;
}

/// What an epsilon controller sees after each round.
struct Observation {
  double federated_loss = 0.0;
  double attacker_loss = 0.0;
  double epsilon = std::numeric_limits<double>::quiet_NaN();
};

struct Feedback {
  double reward = std::numeric_limits<double>::quiet_NaN();
  Verdict verdict = Verdict::none;
};

/// Picks the privacy loss for each round (the RL agent plugs in here).
class PrivacyController {
 public:
  virtual ~PrivacyController() = default;
  /// Called once with the untrained model's observation.
  virtual void begin_episode(const Observation& initial) = 0;
  virtual double select_epsilon(std::size_t round) = 0;
  virtual Feedback end_round(std::size_t round, const Observation& outcome) = 0;
  virtual void end_episode() {}
};

enum class StopReason { threshold_reached, budget_exhausted, max_rounds, diverged };

inline const char* to_string(StopReason r) {
  switch (r) {
    case StopReason::threshold_reached:
      return "threshold_reached";
    case StopReason::budget_exhausted:
      return "budget_exhausted";
    case StopReason::diverged:
      return "diverged";
    case StopReason::max_rounds:
      break;
  }
  return "max_rounds";
}

struct TrainingResult {
  nn::ParamVector final_params;
  TrainingHistory history;
  StopReason reason = StopReason::max_rounds;
  Evaluation initial;
};

/// Error raised inside a round, tagged with the round number.
class RoundError : public Error {
 public:
  RoundError(std::size_t round, const std::string& what)
      : Error("round " + std::to_string(round) + ": " + what), round_(round) {}
  std::size_t round() const noexcept { return round_; }

 private:
  std::size_t round_;
};

inline bool threshold_met(const FLConfig& cfg, nn::Task task, const Evaluation& e) {
  if (!cfg.threshold) return false;
  return task == nn::Task::classification ? e.accuracy >= *cfg.threshold : e.loss <= *cfg.threshold;
}

/// The federated training loop. `initial` defaults to a Glorot
/// initialization drawn from the master seed.
inline TrainingResult run_training(const FLConfig& cfg, const nn::ModelSpec& spec, const PrivacySetting& privacy,
                                   const attack::AttackProfile& profile, PrivacyController* controller,
                                   const FederatedData& fed, std::optional<nn::ParamVector> initial = std::nullopt) {
  cfg.validate();
  spec.validate();
  if (fed.partition.clients() != cfg.total_clients) {
    throw ConfigError("fl.K", "partition has " + std::to_string(fed.partition.clients()) + " clients");
  }
  for (const auto& a : fed.partition.assignment) {
    if (a.empty()) throw DomainError("every client needs at least one sample");
  }
  if (!(profile.gamma >= 0.0)) throw ConfigError("attack.gamma", "must be non-negative");

  TrainingResult result;
  if (initial) {
    nn::check_params(spec, *initial);
    result.final_params = std::move(*initial);
  } else {
    auto init_rng = Stream::derive(cfg.master_seed, Purpose::init);
    result.final_params = nn::init_params(spec, init_rng);
  }
  nn::ParamVector& w = result.final_params;
  dp::PrivacyAccountant accountant(privacy.budget);
  const auto dim = w.size();

  result.initial = evaluate(spec, w, fed.test);
  if (controller) controller->begin_episode({result.initial.loss, 0.0, std::numeric_limits<double>::quiet_NaN()});

  for (std::size_t t = 1; t <= cfg.max_rounds; ++t) {
    try {
      dp::PrivacyParams round_params = privacy.params;
      const bool charge_needed = controller != nullptr || round_params.noise_enabled();
      if (charge_needed && accountant.spent() + round_params.delta_round >
                               accountant.budget() * (1.0 + dp::PrivacyAccountant::kSlack)) {
        result.reason = StopReason::budget_exhausted;
        break;
      }

      auto sel_rng = Stream::derive(cfg.master_seed, Purpose::selection, t);
      const auto selected = select_clients(cfg.total_clients, cfg.clients_per_round, sel_rng);

      std::vector<LocalUpdate> updates;
      updates.reserve(selected.size());
      std::vector<double> norms;
      double train_loss = 0.0;
      for (auto c : selected) {
        auto rng = Stream::derive(cfg.master_seed, Purpose::local_training, t, c);
        updates.push_back(local_train(spec, fed.train, fed.partition.assignment[c], w, cfg, rng));
        norms.push_back(updates.back().norm);
        train_loss += updates.back().train_loss;
      }
      train_loss /= static_cast<double>(selected.size());

      if (controller) round_params.epsilon = controller->select_epsilon(t);
      const bool noisy = round_params.noise_enabled();
      if (noisy && accountant.charge(round_params) == dp::ChargeStatus::budget_exhausted) {
        result.reason = StopReason::budget_exhausted;
        break;
      }

      const double sensitivity = median_sensitivity(norms);
      std::vector<nn::ParamVector> clipped;
      clipped.reserve(updates.size());
      for (auto& u : updates) {
        clipped.push_back(sensitivity > 0.0 ? clip_update(std::move(u.delta), u.norm, sensitivity)
                                            : std::move(u.delta));
      }

      RoundRecord rec;
      rec.round = t;
      rec.epsilon = round_params.epsilon;
      rec.gamma = profile.enabled ? profile.gamma : 0.0;
      rec.sensitivity = sensitivity;
      rec.train_loss = train_loss;
      rec.delta_spent = accountant.spent();

      std::vector<double> noise(dim, 0.0);
      std::optional<nn::ParamVector> shadow;
      if (noisy && sensitivity > 0.0) {
        const double sigma = dp::calibrate_sigma(round_params);
        const dp::GaussianSpec benign{0.0, sigma * sensitivity};
        const auto deployed = profile.enabled ? attack::malicious_spec(benign, profile) : benign;
        auto noise_rng = Stream::derive(cfg.master_seed, Purpose::noise, t);
        noise = dp::sample_noise(deployed, dim, noise_rng);
        rec.noise_scale = deployed.scale;
        rec.attack_mean = deployed.mean;
        rec.noise_kl = dp::gaussian_kl(deployed, benign);
        if (profile.enabled) {
          auto shadow_rng = Stream::derive(cfg.master_seed, Purpose::noise, t);
          const auto benign_noise = dp::sample_noise(benign, dim, shadow_rng);
          shadow = aggregate(w, std::span<const nn::ParamVector>(clipped), benign_noise);
        }
      }

      w = aggregate(w, std::span<const nn::ParamVector>(clipped), noise);
      const auto eval = evaluate(spec, w, fed.test);
      rec.test_loss = eval.loss;
      rec.test_accuracy = eval.accuracy;
      if (shadow) rec.attacker_loss = eval.loss - evaluate(spec, *shadow, fed.test).loss;

      if (controller) {
        const auto fb = controller->end_round(t, {eval.loss, rec.attacker_loss, round_params.epsilon});
        rec.reward = fb.reward;
        rec.verdict = fb.verdict;
      }
      result.history.push_back(rec);

      if (threshold_met(cfg, spec.task, eval)) {
        result.reason = StopReason::threshold_reached;
        break;
      }
    } catch (const RoundError&) {
      throw;
    } catch (const NumericError& e) {
      if (!cfg.stop_on_divergence) throw RoundError(t, e.what());
      result.reason = StopReason::diverged;
      break;
    } catch (const std::exception& e) {
      throw RoundError(t, e.what());
    }
  }
  if (controller) controller->end_episode();
  return result;
}

}  // namespace desmp::fl
