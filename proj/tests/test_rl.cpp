// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <array>
#include <cmath>
#include <sstream>

#include "desmp/rl/agent.hpp"

using namespace desmp;
using rl::AgentState;
using rl::QTable;
using rl::RLConfig;

namespace {

RLConfig unit_config() {
  RLConfig c;
  c.f_l_max = 1.0;
  c.m_l_max = 1.0;
  return c;
}

/// Deterministic MDP on grid states: next state and reward per (s, a).
struct ToyMdp {
  std::size_t states;
  std::vector<std::size_t> next;  // states * actions
  std::vector<double> reward;
};

/// Q* by value iteration, iterated to a fixed point.
std::vector<double> value_iteration(const ToyMdp& m, double chi) {
  const auto A = rl::kActionCount;
  std::vector<double> q(m.states * A, 0.0);
  for (int it = 0; it < 5000; ++it) {
    std::vector<double> nq(q.size());
    for (std::size_t s = 0; s < m.states; ++s) {
      for (std::size_t a = 0; a < A; ++a) {
        const auto sn = m.next[s * A + a];
        double best = q[sn * A];
        for (std::size_t b = 1; b < A; ++b) best = std::max(best, q[sn * A + b]);
        nq[s * A + a] = m.reward[s * A + a] + chi * best;
      }
    }
    q.swap(nq);
  }
  return q;
}

/// Runs `episodes` through a controller: the observed loss depends only on
/// the chosen epsilon.
class ToyEnv {
 public:
  ToyEnv(std::function<double(double)> loss, std::size_t rounds, double attacker = 0.0)
      : loss_(std::move(loss)), rounds_(rounds), attacker_(attacker) {}

  void operator()(fl::PrivacyController& ctl, std::size_t) const {
    ctl.begin_episode({2.0, attacker_, std::numeric_limits<double>::quiet_NaN()});
    for (std::size_t t = 1; t <= rounds_; ++t) {
      const double eps = ctl.select_epsilon(t);
      ctl.end_round(t, {loss_(eps), attacker_, eps});
    }
    ctl.end_episode();
  }

 private:
  std::function<double(double)> loss_;
  std::size_t rounds_;
  double attacker_;
};

}  // namespace

TEST(LogGrid, EndpointsAndSpacing) {
  const auto g = rl::log_grid(0.1, 20.0, 10);
  ASSERT_EQ(g.size(), 10u);
  EXPECT_EQ(g.front(), 0.1);
  EXPECT_EQ(g.back(), 20.0);
  for (std::size_t i = 1; i < g.size(); ++i) EXPECT_NEAR(g[i] / g[i - 1], std::pow(200.0, 1.0 / 9), 1e-12);
}

TEST(Discretize, Examples) {
  const auto c = unit_config();
  EXPECT_EQ(rl::discretize_state(0.3, 0.0, c.eps_grid[2], c).f_bin, 0u);
  EXPECT_EQ(rl::discretize_state(0.3, 7.0, c.eps_grid[2], c).f_bin, 9u);
  EXPECT_EQ(rl::discretize_state(0.3, 0.55, c.eps_grid[2], c).f_bin, 5u);
  EXPECT_EQ(rl::discretize_state(-1.0, 0.55, c.eps_grid[2], c).m_bin, 0u);
  EXPECT_EQ(rl::discretize_state(0.3, 0.55, c.eps_grid[2], c).eps_idx, 2u);
  EXPECT_EQ(rl::discretize_state(0.3, std::nan(""), 20.0, c).f_bin, 9u);
  EXPECT_THROW(rl::discretize_state(0.3, 0.5, 3.0, c), DomainError);
}

TEST(Reward, Examples) {
  auto c = unit_config();
  EXPECT_DOUBLE_EQ(rl::reward(0.5, 0.25, 2.0, c), 6.5);
  c.psi = {0, 0, 1};
  EXPECT_DOUBLE_EQ(rl::reward(0.3, 0.7, 0.1, c), 10.0);
  c.psi = {1, 1, 0};
  for (double eps : {0.1, 1.0, 20.0}) EXPECT_DOUBLE_EQ(rl::reward(c.f_l_max, c.m_l_max, eps, c), 2.0);
}

TEST(Reward, FloorsAndInversion) {
  auto c = unit_config();
  c.psi = {0, 1, 0};
  EXPECT_DOUBLE_EQ(rl::reward(1.0, 0.0, 1.0, c), 1e6);
  EXPECT_DOUBLE_EQ(rl::reward(1.0, -3.0, 1.0, c), 1e6);
  c.invert_attacker_term = true;
  EXPECT_DOUBLE_EQ(rl::reward(1.0, 0.5, 1.0, c), 0.5);
  c.psi = {1, 0, 0};
  EXPECT_DOUBLE_EQ(rl::reward(0.0, 0.5, 1.0, c), 1e6);
  EXPECT_THROW(rl::reward(1.0, 1.0, 0.0, c), DomainError);
}

TEST(ChooseAction, GreedyAndTieBreak) {
  QTable q(1, 1, 1);
  const AgentState s{0, 0, 0};
  auto rng = Stream::derive(1, Purpose::exploration);
  EXPECT_EQ(rl::choose_action(q, s, 0.0, rng), 0u);
  q.at(s, 3) = 1.0;
  EXPECT_EQ(rl::choose_action(q, s, 0.0, rng), 3u);
  EXPECT_THROW(rl::choose_action(q, s, 1.5, rng), DomainError);
}

TEST(ChooseAction, UniformWhenFullyExploring) {
  QTable q(1, 1, 1);
  const AgentState s{0, 0, 0};
  q.at(s, 2) = 100.0;
  auto rng = Stream::derive(2, Purpose::exploration);
  std::array<int, rl::kActionCount> counts{};
  const int n = 100000;
  for (int i = 0; i < n; ++i) ++counts[rl::choose_action(q, s, 1.0, rng)];
  const double se = std::sqrt(0.2 * 0.8 / n);
  for (int c : counts) EXPECT_NEAR(static_cast<double>(c) / n, 0.2, 3 * se);
}

TEST(ApplyAction, Examples) {
  EXPECT_EQ(rl::apply_action(4, rl::kActions[4], 10), 4u);
  EXPECT_EQ(rl::apply_action(0, rl::kActions[3], 10), 0u);
  EXPECT_EQ(rl::apply_action(3, rl::kActions[1], 10), 5u);
  EXPECT_EQ(rl::apply_action(9, rl::kActions[0], 10), 9u);
  EXPECT_EQ(rl::apply_action(5, rl::kActions[2], 10), 4u);
  EXPECT_EQ(rl::describe(rl::kActions[3]), "decrease x2");
}

TEST(QUpdate, Examples) {
  auto c = unit_config();
  QTable q(c);
  const AgentState s{1, 2, 3}, sn{0, 0, 0};
  rl::q_update(q, s, 1, 1.0, sn, c);
  EXPECT_DOUBLE_EQ(q.at(s, 1), 0.1);
  EXPECT_EQ(q.visits(s, 1), 1u);
  rl::q_update(q, s, 1, 0.0, sn, c);
  EXPECT_DOUBLE_EQ(q.at(s, 1), 0.1 * 0.9);
  EXPECT_THROW(rl::q_update(q, s, 1, std::nan(""), sn, c), DomainError);
  EXPECT_THROW(rl::q_update(q, s, 1, 1.0 / 0.0, sn, c), DomainError);
}

TEST(QUpdate, ChainMdpConvergesToValueIteration) {
  // Two states: action 0 moves to the other state, the rest stay.
  ToyMdp m{2, {}, {}};
  for (std::size_t s = 0; s < 2; ++s) {
    for (std::size_t a = 0; a < rl::kActionCount; ++a) {
      m.next.push_back(a == 0 ? 1 - s : s);
      m.reward.push_back(s == 1 ? 1.0 : 0.0 + 0.1 * static_cast<double>(a));
    }
  }
  auto c = unit_config();
  c.chi = 0.9;
  QTable q(1, 1, 2);
  auto rng = Stream::derive(3, Purpose::exploration);
  for (int i = 0; i < 100000; ++i) {
    const auto s = static_cast<std::size_t>(rng.below(2));
    const auto a = static_cast<std::size_t>(rng.below(rl::kActionCount));
    rl::q_update(q, {0, 0, s}, a, m.reward[s * 5 + a], AgentState{0, 0, m.next[s * 5 + a]}, c);
  }
  const auto oracle = value_iteration(m, c.chi);
  for (std::size_t s = 0; s < 2; ++s) {
    for (std::size_t a = 0; a < rl::kActionCount; ++a) EXPECT_NEAR(q.at({0, 0, s}, a), oracle[s * 5 + a], 1e-6);
  }
}

TEST(Detect, Examples) {
  rl::BaselineTable b(1, 1, 2);
  b.observe({0, 0, 0}, 0.10);
  EXPECT_EQ(rl::detect(0.13, {0, 0, 0}, b, 0.2), fl::Verdict::attack_suspected);
  EXPECT_EQ(rl::detect(0.11, {0, 0, 0}, b, 0.2), fl::Verdict::clear);
  EXPECT_EQ(rl::detect(0.11, {0, 0, 1}, b, 0.2), fl::Verdict::no_baseline);
  EXPECT_EQ(rl::detect(1e9, {0, 0, 0}, b, std::numeric_limits<double>::infinity()), fl::Verdict::clear);
  EXPECT_THROW(rl::detect(0.1, {0, 0, 0}, b, -0.1), DomainError);
}

TEST(Baseline, RunningMean) {
  rl::BaselineTable b(2, 2, 2);
  for (double v : {1.0, 2.0, 6.0}) b.observe({1, 0, 1}, v);
  b.observe({1, 0, 1}, std::nan(""));
  EXPECT_DOUBLE_EQ(*b.mean({1, 0, 1}), 3.0);
  EXPECT_EQ(b.entry({1, 0, 1}).count, 3u);
  EXPECT_EQ(b.visited(), 1u);
}

TEST(Explore, ScheduleDecaysToFloor) {
  RLConfig c;
  EXPECT_EQ(rl::explore_probability(c, 0), 1.0);
  double prev = 1.0;
  for (std::size_t e = 1; e < 2000; ++e) {
    const double p = rl::explore_probability(c, e);
    EXPECT_LE(p, prev);
    EXPECT_GE(p, 0.05);
    prev = p;
  }
  EXPECT_EQ(prev, 0.05);
}

TEST(TrainAgent, SingleRandomEpisode) {
  RLConfig c;
  c.episodes = 1;
  c.explore_min = 1.0;
  ToyEnv env([](double eps) { return 1.0 / (1.0 + eps); }, 5);
  const auto t = rl::train_agent(std::cref(env), c, 1);
  ASSERT_EQ(t.curve.size(), 1u);
  EXPECT_EQ(t.curve[0].explore_prob, 1.0);
}

TEST(TrainAgent, ConstantEnvironmentGivesConstantReward) {
  RLConfig c;
  c.episodes = 50;
  c.psi = {1, 1, 0};
  ToyEnv env([](double) { return 0.8; }, 6, 0.4);
  const auto t = rl::train_agent(std::cref(env), c, 2);
  const double per_round = rl::reward(0.8, 0.4, 1.0, c);
  for (const auto& e : t.curve) EXPECT_NEAR(e.accumulated_reward, 6 * per_round, 1e-9);
}

TEST(TrainAgent, ToyEnvironmentLearnsMaximumEpsilon) {
  RLConfig c;
  c.episodes = 400;
  c.explore_decay = 0.98;
  c.psi = {1, 0, 0};
  const auto loss = [](double eps) { return 2.4 / (1.0 + eps); };
  ToyEnv env(loss, 10);
  const auto t = rl::train_agent(std::cref(env), c, 3);
  // Greedy rollout from the initial state.
  AgentState s = rl::discretize_state(0.0, 2.0, c.eps_grid[c.initial_eps_index], c);
  for (int step = 0; step < 10; ++step) {
    const auto a = t.q.greedy(s);
    const auto idx = rl::apply_action(s.eps_idx, rl::kActions[a], c.eps_grid.size());
    s = rl::discretize_state(0.0, loss(c.eps_grid[idx]), c.eps_grid[idx], c);
  }
  EXPECT_EQ(s.eps_idx, c.eps_grid.size() - 1);
}

TEST(TrainAgent, QValuesBoundedByHorizonTimesMaxReward) {
  RLConfig c;
  c.episodes = 100;
  c.psi = {1, 0, 1};
  const std::size_t T = 8;
  const auto loss = [](double eps) { return 0.5 + 1.0 / (1.0 + eps); };
  ToyEnv env(loss, T);
  const auto t = rl::train_agent(std::cref(env), c, 4);
  double r_max = 0.0;
  for (double eps : c.eps_grid) r_max = std::max(r_max, rl::reward(loss(eps), 0.0, eps, c));
  for (double v : t.q.values()) EXPECT_LE(v, T * r_max + 1e-9);

  c.chi = 0.5;
  const auto d = rl::train_agent(std::cref(env), c, 4);
  for (double v : d.q.values()) EXPECT_LE(v, r_max / (1.0 - c.chi) + 1e-9);
}

TEST(TrainAgent, RewardScalingKeepsGreedyPolicy) {
  RLConfig c;
  c.episodes = 120;
  c.psi = {1, 0, 1};
  ToyEnv env([](double eps) { return 0.3 + 1.0 / (1.0 + eps); }, 8);
  const auto a = rl::train_agent(std::cref(env), c, 5);
  c.psi = {4, 0, 4};
  const auto b = rl::train_agent(std::cref(env), c, 5);
  for (std::size_t i = 0; i < a.q.values().size(); ++i) {
    EXPECT_NEAR(b.q.values()[i], 4 * a.q.values()[i], 1e-9 * std::max(1.0, std::fabs(b.q.values()[i])));
  }
  for (std::size_t m = 0; m < c.m_bins; ++m) {
    for (std::size_t f = 0; f < c.f_bins; ++f) {
      for (std::size_t e = 0; e < c.eps_grid.size(); ++e) EXPECT_EQ(a.q.greedy({m, f, e}), b.q.greedy({m, f, e}));
    }
  }
}

TEST(TrainAgent, CalibrationFillsBaseline) {
  RLConfig c;
  c.episodes = 20;
  c.baseline_episodes = 3;
  ToyEnv env([](double eps) { return 1.0 / (1.0 + eps); }, 5);
  const rl::Environment calib = std::cref(env);
  const auto t = rl::train_agent(std::cref(env), c, 6, false, &calib);
  EXPECT_GT(t.baseline.visited(), 0u);
}

TEST(GreedyPolicy, DetectsInflatedLoss) {
  RLConfig c;
  c.episodes = 30;
  const auto clean = [](double eps) { return 0.5 + 0.1 / eps; };
  ToyEnv env(clean, 6);
  const rl::Environment calib = std::cref(env);
  auto t = rl::train_agent(std::cref(env), c, 7, true, &calib);

  rl::GreedyPolicy same(c, t.q, t.baseline, rl::GreedyPolicy::Mode::detect);
  env(same, 0);
  for (const auto& b : same.baselines()) EXPECT_TRUE(b.has_value());

  // Same schedule, loss inflated by 50%.
  std::vector<fl::Verdict> verdicts;
  rl::GreedyPolicy judge(c, t.q, t.baseline, rl::GreedyPolicy::Mode::detect);
  judge.begin_episode({2.0, 0.0, std::nan("")});
  for (std::size_t r = 1; r <= 6; ++r) {
    const double eps = judge.select_epsilon(r);
    verdicts.push_back(judge.end_round(r, {1.5 * clean(eps), 0.0, eps}).verdict);
  }
  EXPECT_EQ(verdicts.front(), fl::Verdict::attack_suspected);
}

TEST(MovingAverage, Window) {
  const auto ma = rl::moving_average({1, 2, 3, 4, 5}, 2);
  EXPECT_EQ(ma, (std::vector<double>{1.5, 2.5, 3.5, 4.5}));
  EXPECT_TRUE(rl::moving_average({1, 2}, 3).empty());
}

TEST(Policy, RoundTrip) {
  RLConfig c;
  QTable q(c);
  rl::BaselineTable b(c);
  q.at({1, 2, 3}, 4) = -0.1234567890123;
  q.visits({1, 2, 3}, 4) = 17;
  q.at({9, 9, 9}, 0) = 1e-300;
  b.observe({0, 5, 2}, 0.42);
  b.observe({0, 5, 2}, 0.43);
  std::stringstream ss;
  rl::save_policy(ss, c.eps_grid, q, b);
  const auto p = rl::load_policy(ss);
  EXPECT_EQ(p.eps_grid, c.eps_grid);
  EXPECT_EQ(p.q, q);
  EXPECT_EQ(p.baseline, b);
}

TEST(Policy, RejectsMalformedFiles) {
  const auto bad = [](const std::string& text) {
    std::istringstream in(text);
    EXPECT_THROW(rl::load_policy(in), FormatError) << text;
  };
  bad("");
  bad("desmp-policy 2\n");
  bad("something else\n");
  bad("desmp-policy 1\nq 0 0 0 0 1 1\n");
  bad("desmp-policy 1\ndims 1 1 1 5\ngrid 1\nq 0 0 3 0 1 1\n");
  bad("desmp-policy 1\ndims 1 1 2 5\ngrid 1\n");
  bad("desmp-policy 1\ndims 1 1 1 5\ngrid 1\nz 1\n");
  bad("desmp-policy 1\ndims 1 1 1 4\ngrid 1\n");
}

TEST(Config, Validation) {
  RLConfig c;
  EXPECT_NO_THROW(c.validate());
  c.eps_grid = {1.0, 0.5};
  EXPECT_THROW(c.validate(), ConfigError);
  c = RLConfig{};
  c.initial_eps_index = 10;
  EXPECT_THROW(c.validate(), ConfigError);
  c = RLConfig{};
  c.explore_min = 0.5;
  c.explore_start = 0.2;
  EXPECT_THROW(c.validate(), ConfigError);
}
