// SPDX-License-Identifier: Apache-2.0
#pragma once

// Tabular Q-learning agent that picks the per-round privacy loss, plus the
// baseline-deviation attack detector built on its visited states.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <istream>
#include <limits>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "desmp/errors.hpp"
#include "desmp/fl/engine.hpp"
#include "desmp/fl/history.hpp"
#include "desmp/rng.hpp"

namespace desmp::rl {

/// `points` log-spaced values from lo to hi inclusive.
inline std::vector<double> log_grid(double lo, double hi, std::size_t points) {
  std::vector<double> g(points);
  for (std::size_t i = 0; i < points; ++i) {
    const double t = points == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(points - 1);
    g[i] = lo * std::pow(hi / lo, t);
  }
  g.front() = lo;
  g.back() = hi;
  return g;
}

struct RewardWeights {
  double federated = 1.0;  // psi_1
  double attacker = 1.0;   // psi_2
  double privacy = 1.0;    // psi_3
  friend bool operator==(const RewardWeights&, const RewardWeights&) = default;
};

struct RLConfig {
  double alpha = 0.1;
  double chi = 1.0;
  RewardWeights psi{};
  double f_l_max = 2.5;
  double m_l_max = 1.0;
  double loss_floor = 1e-6;
  std::vector<double> eps_grid = log_grid(0.1, 20.0, 10);
  std::size_t f_bins = 10;
  std::size_t m_bins = 10;
  double explore_start = 1.0;
  double explore_min = 0.05;
  double explore_decay = 0.995;
  std::size_t episodes = 300;
  std::size_t initial_eps_index = 5;
  // Rewards m_l / m_max instead of m_max / m_l.
  bool invert_attacker_term = false;
  // When false the agent's state treats the attacker loss as 0 (what a
  // deployed defender can observe).
  bool observe_attacker_loss = true;
  // Frozen-policy attack-free episodes run after training to fill the
  // baseline table.
  std::size_t baseline_episodes = 10;

  void validate() const {
    if (!(alpha > 0.0 && alpha <= 1.0)) throw ConfigError("rl.alpha", "must lie in (0, 1]");
    if (!(chi >= 0.0 && chi <= 1.0)) throw ConfigError("rl.chi", "must lie in [0, 1]");
    if (!(f_l_max > 0.0)) throw ConfigError("rl.f_l_max", "must be positive");
    if (!(m_l_max > 0.0)) throw ConfigError("rl.m_l_max", "must be positive");
    if (!(loss_floor > 0.0)) throw ConfigError("rl.loss_floor", "must be positive");
    if (eps_grid.empty()) throw ConfigError("rl.eps_grid", "must not be empty");
    for (std::size_t i = 0; i < eps_grid.size(); ++i) {
      if (!(eps_grid[i] > 0.0) || !std::isfinite(eps_grid[i])) throw ConfigError("rl.eps_grid", "values must be positive");
      if (i > 0 && !(eps_grid[i] > eps_grid[i - 1])) throw ConfigError("rl.eps_grid", "must be strictly increasing");
    }
    if (f_bins == 0) throw ConfigError("rl.f_bins", "must be positive");
    if (m_bins == 0) throw ConfigError("rl.m_bins", "must be positive");
    if (!(explore_min >= 0.0 && explore_min <= 1.0)) throw ConfigError("rl.explore_min", "must be a probability");
    if (!(explore_start >= explore_min && explore_start <= 1.0)) {
      throw ConfigError("rl.explore_start", "must be a probability no smaller than rl.explore_min");
    }
    if (!(explore_decay > 0.0 && explore_decay <= 1.0)) throw ConfigError("rl.explore_decay", "must lie in (0, 1]");
    if (episodes == 0) throw ConfigError("rl.episodes", "must be positive");
    if (initial_eps_index >= eps_grid.size()) throw ConfigError("rl.initial_eps_index", "outside the epsilon grid");
  }

  friend bool operator==(const RLConfig&, const RLConfig&) = default;
};

struct AgentState {
  std::size_t m_bin = 0;
  std::size_t f_bin = 0;
  std::size_t eps_idx = 0;
  friend bool operator==(const AgentState&, const AgentState&) = default;
};

enum class ActionKind { increase, decrease, keep };

struct ActionSpec {
  ActionKind kind = ActionKind::keep;
  std::size_t steps = 0;
  friend bool operator==(const ActionSpec&, const ActionSpec&) = default;
};

inline constexpr std::size_t kActionCount = 5;
inline constexpr std::array<ActionSpec, kActionCount> kActions{{
    {ActionKind::increase, 1},
    {ActionKind::increase, 2},
    {ActionKind::decrease, 1},
    {ActionKind::decrease, 2},
    {ActionKind::keep, 0},
}};

inline std::string describe(const ActionSpec& a) {
  switch (a.kind) {
    case ActionKind::increase:
      return "increase x" + std::to_string(a.steps);
    case ActionKind::decrease:
      return "decrease x" + std::to_string(a.steps);
    case ActionKind::keep:
      break;
  }
  return "static";
}

/// Uniform bin of v over [0, max]; out-of-range and NaN values clamp to
/// the edge bins (NaN to the top).
inline std::size_t bin_of(double v, double max, std::size_t bins) {
  if (std::isnan(v) || v >= max) return bins - 1;
  if (v <= 0.0) return 0;
  const auto b = static_cast<std::size_t>(std::floor(v / max * static_cast<double>(bins)));
  return std::min(b, bins - 1);
}

inline std::size_t grid_index(double eps, const std::vector<double>& grid) {
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (std::fabs(grid[i] - eps) <= 1e-12 * std::max(1.0, std::fabs(eps))) return i;
  }
  throw DomainError("epsilon " + std::to_string(eps) + " is not on the grid");
}

inline AgentState discretize_state(double m_l, double f_l, double eps, const RLConfig& cfg) {
  return {bin_of(m_l, cfg.m_l_max, cfg.m_bins), bin_of(f_l, cfg.f_l_max, cfg.f_bins), grid_index(eps, cfg.eps_grid)};
}

/// psi1 f_max / f_l + psi2 m_max / m_l + psi3 / eps, with both losses
/// floored at cfg.loss_floor. A non-finite federated loss earns nothing
/// from the first term.
inline double reward(double f_l, double m_l, double eps, const RLConfig& cfg) {
  if (!(eps > 0.0)) throw DomainError("epsilon must be positive");
  const double f = std::isnan(f_l) ? std::numeric_limits<double>::infinity() : std::max(f_l, cfg.loss_floor);
  const double m = std::max(std::isnan(m_l) ? 0.0 : m_l, cfg.loss_floor);
  const double attacker = cfg.invert_attacker_term ? m / cfg.m_l_max : cfg.m_l_max / m;
  return cfg.psi.federated * cfg.f_l_max / f + cfg.psi.attacker * attacker + cfg.psi.privacy / eps;
}

/// Dense action-value table with visit counts, zero-initialized.
class QTable {
 public:
  QTable() = default;
  QTable(std::size_t m_bins, std::size_t f_bins, std::size_t grid)
      : m_bins_(m_bins), f_bins_(f_bins), grid_(grid), values_(m_bins * f_bins * grid * kActionCount, 0.0),
        visits_(values_.size(), 0) {}
  explicit QTable(const RLConfig& cfg) : QTable(cfg.m_bins, cfg.f_bins, cfg.eps_grid.size()) {}

  double& at(const AgentState& s, std::size_t a) { return values_[index(s, a)]; }
  double at(const AgentState& s, std::size_t a) const { return values_[index(s, a)]; }
  std::uint64_t& visits(const AgentState& s, std::size_t a) { return visits_[index(s, a)]; }
  std::uint64_t visits(const AgentState& s, std::size_t a) const { return visits_[index(s, a)]; }

  double max_value(const AgentState& s) const {
    double best = at(s, 0);
    for (std::size_t a = 1; a < kActionCount; ++a) best = std::max(best, at(s, a));
    return best;
  }

  /// Argmax over actions, lowest index on ties.
  std::size_t greedy(const AgentState& s) const {
    std::size_t best = 0;
    for (std::size_t a = 1; a < kActionCount; ++a) {
      if (at(s, a) > at(s, best)) best = a;
    }
    return best;
  }

  std::size_t m_bins() const noexcept { return m_bins_; }
  std::size_t f_bins() const noexcept { return f_bins_; }
  std::size_t grid_size() const noexcept { return grid_; }
  const std::vector<double>& values() const noexcept { return values_; }

  bool contains(const AgentState& s) const noexcept {
    return s.m_bin < m_bins_ && s.f_bin < f_bins_ && s.eps_idx < grid_;
  }

  friend bool operator==(const QTable&, const QTable&) = default;

 private:
  std::size_t index(const AgentState& s, std::size_t a) const {
    if (!contains(s) || a >= kActionCount) throw DomainError("state or action outside the Q-table");
    return ((s.m_bin * f_bins_ + s.f_bin) * grid_ + s.eps_idx) * kActionCount + a;
  }

  std::size_t m_bins_ = 0;
  std::size_t f_bins_ = 0;
  std::size_t grid_ = 0;
  std::vector<double> values_;
  std::vector<std::uint64_t> visits_;
};

/// Epsilon-greedy: uniform over actions with probability explore_prob,
/// greedy otherwise.
inline std::size_t choose_action(const QTable& q, const AgentState& s, double explore_prob, Stream& rng) {
  if (!(explore_prob >= 0.0 && explore_prob <= 1.0)) throw DomainError("exploration probability must lie in [0, 1]");
  if (rng.uniform() < explore_prob) return static_cast<std::size_t>(rng.below(kActionCount));
  return q.greedy(s);
}

inline std::size_t apply_action(std::size_t eps_idx, const ActionSpec& a, std::size_t grid_len) {
  switch (a.kind) {
    case ActionKind::increase:
      return std::min(eps_idx + a.steps, grid_len - 1);
    case ActionKind::decrease:
      return eps_idx >= a.steps ? eps_idx - a.steps : 0;
    case ActionKind::keep:
      break;
  }
  return eps_idx;
}

/// Q(s,a) += alpha (r + chi max_a' Q(s',a') - Q(s,a)); no bootstrap term
/// when `next` is empty (episode end).
inline void q_update(QTable& q, const AgentState& s, std::size_t a, double r, const std::optional<AgentState>& next,
                     const RLConfig& cfg) {
  if (!std::isfinite(r)) throw DomainError("reward must be finite");
  const double target = r + (next ? cfg.chi * q.max_value(*next) : 0.0);
  double& v = q.at(s, a);
  v += cfg.alpha * (target - v);
  ++q.visits(s, a);
}

/// Running mean of the federated loss observed after acting in each state.
class BaselineTable {
 public:
  struct Entry {
    double mean = 0.0;
    std::uint64_t count = 0;
    friend bool operator==(const Entry&, const Entry&) = default;
  };

  BaselineTable() = default;
  BaselineTable(std::size_t m_bins, std::size_t f_bins, std::size_t grid)
      : m_bins_(m_bins), f_bins_(f_bins), grid_(grid), entries_(m_bins * f_bins * grid) {}
  explicit BaselineTable(const RLConfig& cfg) : BaselineTable(cfg.m_bins, cfg.f_bins, cfg.eps_grid.size()) {}

  void observe(const AgentState& s, double f_l) {
    if (!std::isfinite(f_l)) return;
    auto& e = entries_[index(s)];
    ++e.count;
    e.mean += (f_l - e.mean) / static_cast<double>(e.count);
  }

  std::optional<double> mean(const AgentState& s) const {
    const auto& e = entries_[index(s)];
    if (e.count == 0) return std::nullopt;
    return e.mean;
  }

  Entry& entry(const AgentState& s) { return entries_[index(s)]; }
  const Entry& entry(const AgentState& s) const { return entries_[index(s)]; }

  std::size_t m_bins() const noexcept { return m_bins_; }
  std::size_t f_bins() const noexcept { return f_bins_; }
  std::size_t grid_size() const noexcept { return grid_; }

  std::size_t visited() const {
    return static_cast<std::size_t>(std::count_if(entries_.begin(), entries_.end(), [](const Entry& e) { return e.count > 0; }));
  }

  friend bool operator==(const BaselineTable&, const BaselineTable&) = default;

 private:
  std::size_t index(const AgentState& s) const {
    if (s.m_bin >= m_bins_ || s.f_bin >= f_bins_ || s.eps_idx >= grid_) throw DomainError("state outside the baseline table");
    return (s.m_bin * f_bins_ + s.f_bin) * grid_ + s.eps_idx;
  }

  std::size_t m_bins_ = 0;
  std::size_t f_bins_ = 0;
  std::size_t grid_ = 0;
  std::vector<Entry> entries_;
};

/// attack_suspected when the observed loss exceeds the state's baseline by
/// more than `margin` (relative).
inline fl::Verdict detect(double f_l_observed, const AgentState& s, const BaselineTable& baseline, double margin) {
  if (!(margin >= 0.0)) throw DomainError("margin must be non-negative");
  const auto m = baseline.mean(s);
  if (!m) return fl::Verdict::no_baseline;
  if (std::isinf(margin)) return fl::Verdict::clear;
  return f_l_observed > *m * (1.0 + margin) ? fl::Verdict::attack_suspected : fl::Verdict::clear;
}

/// Shared state tracking for the controllers below.
class AgentBase : public fl::PrivacyController {
 public:
  explicit AgentBase(const RLConfig& cfg) : cfg_(cfg) { cfg_.validate(); }

  void begin_episode(const fl::Observation& initial) override {
    eps_idx_ = cfg_.initial_eps_index;
    state_ = observe_state(initial.attacker_loss, initial.federated_loss);
    accumulated_ = 0.0;
  }

  double accumulated_reward() const noexcept { return accumulated_; }
  const RLConfig& config() const noexcept { return cfg_; }

 protected:
  AgentState observe_state(double m_l, double f_l) const {
    return {bin_of(cfg_.observe_attacker_loss ? m_l : 0.0, cfg_.m_l_max, cfg_.m_bins),
            bin_of(f_l, cfg_.f_l_max, cfg_.f_bins), eps_idx_};
  }

  double act(std::size_t action) {
    decision_state_ = state_;
    action_ = action;
    eps_idx_ = apply_action(eps_idx_, kActions[action], cfg_.eps_grid.size());
    return cfg_.eps_grid[eps_idx_];
  }

  RLConfig cfg_;
  std::size_t eps_idx_ = 0;
  AgentState state_{};
  AgentState decision_state_{};
  std::size_t action_ = 0;
  double accumulated_ = 0.0;
};

/// Epsilon-greedy learner. Optionally records the baseline loss per
/// decision state (only meaningful on attack-free episodes).
class LearningAgent : public AgentBase {
 public:
  LearningAgent(const RLConfig& cfg, QTable& q, double explore_prob, Stream rng, BaselineTable* baseline = nullptr)
      : AgentBase(cfg), q_(q), explore_(explore_prob), rng_(rng), baseline_(baseline) {}

  void begin_episode(const fl::Observation& initial) override {
    AgentBase::begin_episode(initial);
    pending_.reset();
  }

  double select_epsilon(std::size_t) override {
    if (pending_) {
      q_update(q_, pending_->s, pending_->a, pending_->r, state_, cfg_);
      pending_.reset();
    }
    return act(choose_action(q_, state_, explore_, rng_));
  }

  fl::Feedback end_round(std::size_t, const fl::Observation& outcome) override {
    const double eps = cfg_.eps_grid[eps_idx_];
    const double r = reward(outcome.federated_loss, outcome.attacker_loss, eps, cfg_);
    accumulated_ += r;
    if (baseline_) baseline_->observe(decision_state_, outcome.federated_loss);
    state_ = observe_state(outcome.attacker_loss, outcome.federated_loss);
    pending_ = Transition{decision_state_, action_, r};
    return {r, fl::Verdict::none};
  }

  void end_episode() override {
    if (pending_) q_update(q_, pending_->s, pending_->a, pending_->r, std::nullopt, cfg_);
    pending_.reset();
  }

 private:
  struct Transition {
    AgentState s;
    std::size_t a;
    double r;
  };

  QTable& q_;
  double explore_;
  Stream rng_;
  BaselineTable* baseline_;
  std::optional<Transition> pending_;
};

/// Frozen greedy policy. Either records the baseline (calibration) or
/// judges every round against it (detection). The attacker loss is never
/// part of its state: a deployed defender cannot measure it.
class GreedyPolicy : public AgentBase {
 public:
  enum class Mode { calibrate, detect };

  GreedyPolicy(const RLConfig& cfg, const QTable& q, BaselineTable& baseline, Mode mode, double margin = 0.2)
      : AgentBase(cfg), q_(q), baseline_(baseline), mode_(mode), margin_(margin) {}

  double select_epsilon(std::size_t) override { return act(q_.greedy(state_)); }

  fl::Feedback end_round(std::size_t, const fl::Observation& outcome) override {
    const double eps = cfg_.eps_grid[eps_idx_];
    const double r = reward(outcome.federated_loss, outcome.attacker_loss, eps, cfg_);
    accumulated_ += r;
    fl::Feedback fb{r, fl::Verdict::none};
    if (mode_ == Mode::calibrate) {
      baseline_.observe(decision_state_, outcome.federated_loss);
    } else {
      fb.verdict = detect(outcome.federated_loss, decision_state_, baseline_, margin_);
      baselines_.push_back(baseline_.mean(decision_state_));
    }
    state_ = observe_state(0.0, outcome.federated_loss);
    return fb;
  }

  void begin_episode(const fl::Observation& initial) override {
    AgentBase::begin_episode({initial.federated_loss, 0.0, initial.epsilon});
    baselines_.clear();
  }

  /// Baseline mean behind each verdict of the current episode.
  const std::vector<std::optional<double>>& baselines() const noexcept { return baselines_; }

 private:
  const QTable& q_;
  BaselineTable& baseline_;
  Mode mode_;
  double margin_;
  std::vector<std::optional<double>> baselines_;
};

/// Runs one episode with the given controller; episode index selects the
/// environment's randomness.
using Environment = std::function<void(fl::PrivacyController&, std::size_t episode)>;

struct EpisodeStats {
  std::size_t episode = 0;
  double explore_prob = 0.0;
  double accumulated_reward = 0.0;
};

struct TrainedAgent {
  QTable q;
  BaselineTable baseline;
  std::vector<EpisodeStats> curve;
};

inline double explore_probability(const RLConfig& cfg, std::size_t episode) {
  return std::max(cfg.explore_min, cfg.explore_start * std::pow(cfg.explore_decay, static_cast<double>(episode)));
}

/// Q-learning over cfg.episodes episodes. When `record_baseline` is set the
/// training episodes also feed the baseline table; the frozen-policy
/// calibration episodes (cfg.baseline_episodes) always do, and run through
/// `calibration_env`, which must be attack-free.
inline TrainedAgent train_agent(const Environment& env, const RLConfig& cfg, std::uint64_t seed,
                                bool record_baseline = false, const Environment* calibration_env = nullptr) {
  cfg.validate();
  TrainedAgent out{QTable(cfg), BaselineTable(cfg), {}};
  for (std::size_t e = 0; e < cfg.episodes; ++e) {
    const double p = explore_probability(cfg, e);
    LearningAgent agent(cfg, out.q, p, Stream::derive(seed, Purpose::exploration, e),
                        record_baseline ? &out.baseline : nullptr);
    env(agent, e);
    out.curve.push_back({e, p, agent.accumulated_reward()});
  }
  if (calibration_env) {
    for (std::size_t e = 0; e < cfg.baseline_episodes; ++e) {
      GreedyPolicy policy(cfg, out.q, out.baseline, GreedyPolicy::Mode::calibrate);
      (*calibration_env)(policy, cfg.episodes + e);
    }
  }
  return out;
}

/// Trailing moving average; entry i averages rewards [i - window + 1, i]
/// and exists from i = window - 1 on.
inline std::vector<double> moving_average(const std::vector<double>& xs, std::size_t window) {
  std::vector<double> out;
  if (window == 0 || xs.size() < window) return out;
  double sum = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sum += xs[i];
    if (i >= window) sum -= xs[i - window];
    if (i + 1 >= window) out.push_back(sum / static_cast<double>(window));
  }
  return out;
}

// Policy file: a version line, the grid, then one line per visited entry.
//   desmp-policy 1
//   dims <m_bins> <f_bins> <grid_size> <actions>
//   grid <eps...>
//   q <m> <f> <e> <action> <value> <visits>
//   b <m> <f> <e> <mean> <count>

inline constexpr int kPolicyVersion = 1;

struct Policy {
  std::vector<double> eps_grid;
  QTable q;
  BaselineTable baseline;
};

inline std::string format_real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void save_policy(std::ostream& out, const std::vector<double>& grid, const QTable& q,
                        const BaselineTable& baseline) {
  out << "desmp-policy " << kPolicyVersion << '\n';
  out << "dims " << q.m_bins() << ' ' << q.f_bins() << ' ' << q.grid_size() << ' ' << kActionCount << '\n';
  out << "grid";
  for (double g : grid) out << ' ' << format_real(g);
  out << '\n';
  for (std::size_t m = 0; m < q.m_bins(); ++m) {
    for (std::size_t f = 0; f < q.f_bins(); ++f) {
      for (std::size_t e = 0; e < q.grid_size(); ++e) {
        const AgentState s{m, f, e};
        for (std::size_t a = 0; a < kActionCount; ++a) {
          if (q.visits(s, a) == 0 && q.at(s, a) == 0.0) continue;
          out << "q " << m << ' ' << f << ' ' << e << ' ' << a << ' ' << format_real(q.at(s, a)) << ' '
              << q.visits(s, a) << '\n';
        }
        const auto& b = baseline.entry(s);
        if (b.count > 0) out << "b " << m << ' ' << f << ' ' << e << ' ' << format_real(b.mean) << ' ' << b.count << '\n';
      }
    }
  }
}

inline Policy load_policy(std::istream& in) {
  std::string line;
  std::size_t line_no = 0;
  auto fail = [&](const std::string& what) { throw FormatError("policy line " + std::to_string(line_no) + ": " + what, line_no); };
  if (!std::getline(in, line)) fail("empty policy file");
  ++line_no;
  {
    std::istringstream ls(line);
    std::string tag;
    int version = 0;
    if (!(ls >> tag >> version) || tag != "desmp-policy") fail("missing policy header");
    if (version != kPolicyVersion) fail("unsupported policy version " + std::to_string(version));
  }
  Policy p;
  std::size_t m_bins = 0, f_bins = 0, grid = 0, actions = 0;
  bool have_dims = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "dims") {
      if (!(ls >> m_bins >> f_bins >> grid >> actions) || actions != kActionCount || m_bins == 0 || f_bins == 0 || grid == 0) {
        fail("bad dims line");
      }
      p.q = QTable(m_bins, f_bins, grid);
      p.baseline = BaselineTable(m_bins, f_bins, grid);
      have_dims = true;
    } else if (tag == "grid") {
      double g = 0.0;
      while (ls >> g) p.eps_grid.push_back(g);
    } else if (tag == "q" || tag == "b") {
      if (!have_dims) fail("entry before dims line");
      AgentState s;
      if (!(ls >> s.m_bin >> s.f_bin >> s.eps_idx)) fail("bad state tuple");
      if (!p.q.contains(s)) fail("state outside table dims");
      if (tag == "q") {
        std::size_t a = 0;
        double v = 0.0;
        std::uint64_t visits = 0;
        if (!(ls >> a >> v >> visits) || a >= kActionCount || !std::isfinite(v)) fail("bad q entry");
        p.q.at(s, a) = v;
        p.q.visits(s, a) = visits;
      } else {
        double mean = 0.0;
        std::uint64_t count = 0;
        if (!(ls >> mean >> count) || count == 0) fail("bad baseline entry");
        p.baseline.entry(s) = {mean, count};
      }
    } else {
      fail("unknown record '" + tag + "'");
    }
  }
  if (!have_dims) fail("missing dims line");
  if (p.eps_grid.size() != grid) fail("grid length does not match dims");
  return p;
}

}  // namespace desmp::rl
