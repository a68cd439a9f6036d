// SPDX-License-Identifier: Apache-2.0
#pragma once

// DP-exploiting stealthy model poisoning: the benign aggregation noise is
// replaced by a mean-shifted Gaussian whose KL divergence from the benign
// one equals the attacker's tolerance gamma.

#include <cmath>
#include <cstddef>
#include <cstdint>

#include "desmp/data/dataset.hpp"
#include "desmp/dp/mechanism.hpp"
#include "desmp/errors.hpp"
#include "desmp/nn/model.hpp"

namespace desmp::attack {

enum class AttackPoint { aggregation_noise };

struct AttackProfile {
  double gamma = 0.0;
  bool enabled = false;
  AttackPoint target = AttackPoint::aggregation_noise;

  friend bool operator==(const AttackProfile&, const AttackProfile&) = default;
};

struct AttackReport {
  double mu_a = 0.0;           // realized mean of the malicious noise
  double sigma_used = 0.0;     // deviation the shift was computed from
  double kl = 0.0;             // KL(f_a || f_0)
  std::int64_t misclassified = 0;
  double objective_value = 0.0;
};

/// theta + sqrt(2 gamma) sigma.
inline double attack_mean_shift(double theta, double sigma, double gamma) {
  if (!(gamma >= 0.0)) throw DomainError("gamma must be non-negative");
  if (!(sigma > 0.0)) throw DomainError("sigma must be positive");
  return theta + std::sqrt(2.0 * gamma) * sigma;
}

/// Malicious replacement for `benign`: same scale, mean shifted using the
/// benign scale as sigma.
inline dp::GaussianSpec malicious_spec(const dp::GaussianSpec& benign, const AttackProfile& profile) {
  if (!profile.enabled) throw DomainError("attack profile is disabled");
  return {attack_mean_shift(benign.mean, benign.scale, profile.gamma), benign.scale};
}

enum class Stealth { stealthy, violated };

inline Stealth stealthiness_check(const AttackProfile& profile, const dp::GaussianSpec& fa,
                                  const dp::GaussianSpec& f0) {
  return dp::gaussian_kl(fa, f0) <= profile.gamma + 1e-12 ? Stealth::stealthy : Stealth::violated;
}

struct Objective {
  std::int64_t misclassified = 0;
  double value = 0.0;
};

/// Misclassification count (classification) or summed absolute residual
/// (regression) of the model on `test`.
inline Objective adversarial_objective(const nn::ModelSpec& spec, const nn::ParamVector& params,
                                       const data::Dataset& test) {
  if (test.size() == 0) throw DomainError("test set is empty");
  if (test.task != spec.task) throw DomainError("test set task does not match model task");
  const auto out = nn::forward(spec, params, test.features);
  Objective obj;
  if (spec.task == nn::Task::classification) {
    const auto pred = nn::predict_labels(out);
    for (std::size_t i = 0; i < pred.size(); ++i) obj.misclassified += pred[i] != test.labels[i] ? 1 : 0;
    obj.value = static_cast<double>(obj.misclassified);
  } else {
    for (std::size_t i = 0; i < out.data.size(); ++i) obj.value += std::fabs(out.data[i] - test.values[i]);
  }
  return obj;
}

}  // namespace desmp::attack
