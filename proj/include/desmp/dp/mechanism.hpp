// SPDX-License-Identifier: Apache-2.0
#pragma once

// Gaussian mechanism calibration and sampling, Gaussian KL divergence, and
// the per-round privacy accountant.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <vector>

#include "desmp/errors.hpp"
#include "desmp/rng.hpp"

namespace desmp::dp {

/// Epsilon sentinel for runs without noise.
inline constexpr double kNoPrivacy = std::numeric_limits<double>::infinity();

struct PrivacyParams {
  double epsilon = 1.0;        // privacy loss; +inf means no DP
  double delta_round = 1e-5;   // privacy spent per noised aggregation
  double sensitivity = 1.0;    // Delta f

  bool noise_enabled() const noexcept { return std::isfinite(epsilon); }

  void validate() const {
    if (!(epsilon > 0.0)) throw CalibrationError("epsilon must be positive");
    if (!(delta_round > 0.0 && delta_round < 1.0)) throw CalibrationError("delta_round must lie in (0, 1)");
    if (!(sensitivity > 0.0) || !std::isfinite(sensitivity)) throw CalibrationError("sensitivity must be positive");
  }

  friend bool operator==(const PrivacyParams&, const PrivacyParams&) = default;
};

/// Mean and standard deviation of a scalar Gaussian noise source.
struct GaussianSpec {
  double mean = 0.0;
  double scale = 1.0;

  friend bool operator==(const GaussianSpec&, const GaussianSpec&) = default;
};

/// Noise multiplier of the Gaussian mechanism:
/// sqrt(2 ln(1.25/delta)) * sensitivity / epsilon.
inline double calibrate_sigma(const PrivacyParams& p) {
  if (!(p.epsilon > 0.0) || !std::isfinite(p.epsilon)) throw CalibrationError("epsilon must be positive and finite");
  if (!(p.delta_round > 0.0)) throw CalibrationError("delta must be positive");
  if (!(p.delta_round < 1.25)) throw CalibrationError("delta must be below 1.25 for a positive log term");
  if (!(p.sensitivity > 0.0) || !std::isfinite(p.sensitivity)) throw CalibrationError("sensitivity must be positive");
  return std::sqrt(2.0 * std::log(1.25 / p.delta_round)) * p.sensitivity / p.epsilon;
}

/// Laplace scale sensitivity / epsilon. Calibration only; the training loop
/// always uses the Gaussian mechanism.
inline double laplace_scale(const PrivacyParams& p) {
  if (!(p.epsilon > 0.0) || !std::isfinite(p.epsilon)) throw CalibrationError("epsilon must be positive and finite");
  if (!(p.sensitivity > 0.0)) throw CalibrationError("sensitivity must be positive");
  return p.sensitivity / p.epsilon;
}

/// `dim` i.i.d. draws from Normal(mean, scale^2). Every draw is
/// mean + scale * z with z taken from the stream in order, so two specs
/// sharing a stream share their standard-normal variates.
inline std::vector<double> sample_noise(const GaussianSpec& spec, std::size_t dim, Stream& rng) {
  if (dim == 0) throw DomainError("noise dimension must be positive");
  if (!(spec.scale >= 0.0)) throw DomainError("noise scale must be non-negative");
  std::vector<double> out(dim);
  for (auto& v : out) v = spec.mean + spec.scale * rng.normal();
  return out;
}

/// KL(fa || f0) for two univariate Gaussians.
inline double gaussian_kl(const GaussianSpec& fa, const GaussianSpec& f0) {
  if (!(fa.scale > 0.0) || !(f0.scale > 0.0)) throw DomainError("Gaussian scales must be positive");
  const double d = fa.mean - f0.mean;
  if (fa.scale == f0.scale) return d * d / (2.0 * f0.scale * f0.scale);
  const double va = fa.scale * fa.scale;
  const double v0 = f0.scale * f0.scale;
  return std::log(f0.scale / fa.scale) + (va + d * d) / (2.0 * v0) - 0.5;
}

enum class ChargeStatus { ok, budget_exhausted };

/// Linear composition: every noised aggregation spends delta_round.
class PrivacyAccountant {
 public:
  explicit PrivacyAccountant(double budget) : budget_(budget) {
    if (!(budget >= 0.0)) throw DomainError("privacy budget must be non-negative");
  }

  /// Spends one round. On exhaustion nothing changes and the caller keeps
  /// the previous global model.
  ChargeStatus charge(const PrivacyParams& p) {
    if (!(p.delta_round > 0.0)) throw DomainError("delta_round must be positive");
    const double next = spent_ + p.delta_round;
    // Relative slack absorbs representation error of sums like 100 * 1e-5.
    if (next > budget_ * (1.0 + kSlack)) return ChargeStatus::budget_exhausted;
    spent_ = next;
    ++rounds_charged_;
    return ChargeStatus::ok;
  }

  double budget() const noexcept { return budget_; }
  double spent() const noexcept { return spent_; }
  std::uint64_t rounds_charged() const noexcept { return rounds_charged_; }

  static constexpr double kSlack = 1e-12;

 private:
  double budget_;
  double spent_ = 0.0;
  std::uint64_t rounds_charged_ = 0;
};

}  // namespace desmp::dp
