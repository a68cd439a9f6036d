// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

namespace desmp::fl {

enum class Verdict { none, clear, attack_suspected, no_baseline };

inline const char* to_string(Verdict v) {
  switch (v) {
    case Verdict::clear:
      return "clear";
    case Verdict::attack_suspected:
      return "attack_suspected";
    case Verdict::no_baseline:
      return "no_baseline";
    case Verdict::none:
      break;
  }
  return "";
}

/// Metrics of one completed communication round.
struct RoundRecord {
  static constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

  std::size_t round = 0;
  double epsilon = std::numeric_limits<double>::infinity();  // +inf: no DP
  double gamma = 0.0;
  double sensitivity = 0.0;
  double train_loss = kNaN;
  double test_loss = kNaN;
  double test_accuracy = kNaN;  // NaN for regression
  double delta_spent = 0.0;     // cumulative
  double noise_scale = 0.0;     // sigma * S actually applied
  double attack_mean = 0.0;     // mean of the deployed noise
  double noise_kl = 0.0;        // KL(deployed || benign)
  double attacker_loss = 0.0;   // loss(attacked) - loss(benign draw), 0 without attack
  double reward = kNaN;         // NaN when no agent is active
  Verdict verdict = Verdict::none;
};

using TrainingHistory = std::vector<RoundRecord>;

}  // namespace desmp::fl
