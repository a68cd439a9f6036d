// SPDX-License-Identifier: Apache-2.0
#pragma once

// Experiment orchestration behind the CLI subcommands. Each command writes
// its outputs under one run directory and returns a summary.

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "desmp/data/dataset.hpp"
#include "desmp/data/mnist.hpp"
#include "desmp/data/partition.hpp"
#include "desmp/data/power.hpp"
#include "desmp/data/synthetic.hpp"
#include "desmp/fl/engine.hpp"
#include "desmp/harness/config.hpp"
#include "desmp/harness/csv.hpp"
#include "desmp/rl/agent.hpp"

namespace desmp::harness {

namespace fs = std::filesystem;

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

/// FNV-1a over raw bytes, continuing from `h`.
inline std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

struct LoadedData {
  data::Dataset train;
  data::Dataset test;
  std::string input_hash;
};

inline const char* kMnistFiles[4] = {"train-images-idx3-ubyte", "train-labels-idx1-ubyte", "t10k-images-idx3-ubyte",
                                     "t10k-labels-idx1-ubyte"};

/// Loads or generates the dataset and its train/test split.
inline LoadedData load_data(const DatasetSpec& d) {
  LoadedData out;
  std::uint64_t h = fnv1a(to_string(d.kind));
  switch (d.kind) {
    case DatasetKind::mnist: {
      const fs::path dir(d.path);
      out.train = data::load_mnist((dir / kMnistFiles[0]).string(), (dir / kMnistFiles[1]).string());
      out.test = data::load_mnist((dir / kMnistFiles[2]).string(), (dir / kMnistFiles[3]).string());
      for (const char* f : kMnistFiles) h = fnv1a(read_text(dir / f), h);
      if (d.limit > 0 && d.limit < out.train.size()) {
        std::vector<std::size_t> idx(d.limit);
        for (std::size_t i = 0; i < d.limit; ++i) idx[i] = i;
        out.train = out.train.subset(idx);
      }
      break;
    }
    case DatasetKind::power: {
      auto p = data::load_power_csv(d.path, d.target);
      h = fnv1a(read_text(d.path), h);
      auto rng = Stream::derive(d.seed, Purpose::dataset, 3);
      auto tt = data::split(p.dataset, d.test_fraction, rng);
      out.train = std::move(tt.train);
      out.test = std::move(tt.test);
      break;
    }
    case DatasetKind::synthetic_classification:
    case DatasetKind::synthetic_regression: {
      const auto full = d.kind == DatasetKind::synthetic_classification
                            ? data::synth_classification(d.samples, d.dim, d.classes, d.margin, d.seed)
                            : data::synth_regression(d.samples, d.dim, d.noise_std, d.seed);
      const std::string params = std::to_string(d.samples) + ',' + std::to_string(d.dim) + ',' +
                                 std::to_string(d.classes) + ',' + fmt(d.margin) + ',' + fmt(d.noise_std) + ',' +
                                 std::to_string(d.seed);
      h = fnv1a(params, h);
      auto rng = Stream::derive(d.seed, Purpose::dataset, 3);
      auto tt = data::split(full, d.test_fraction, rng);
      out.train = std::move(tt.train);
      out.test = std::move(tt.test);
      break;
    }
  }
  h = fnv1a(fmt(d.test_fraction) + ',' + std::to_string(d.limit), h);
  out.input_hash = hex64(h);
  return out;
}

/// Decile buckets of a regression target, used as pseudo-labels for the
/// label-sorted partition.
inline std::vector<int> quantile_labels(const std::vector<double>& values, int buckets) {
  std::vector<std::size_t> order(values.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return values[a] < values[b]; });
  std::vector<int> labels(values.size());
  for (std::size_t r = 0; r < order.size(); ++r) {
    labels[order[r]] = static_cast<int>(r * static_cast<std::size_t>(buckets) / order.size());
  }
  return labels;
}

inline fl::FederatedData federate(const LoadedData& data, const DatasetSpec& d, std::size_t clients,
                                  std::uint64_t seed) {
  fl::FederatedData fed{data.train, data.test, {}};
  auto rng = Stream::derive(seed, Purpose::partition);
  if (d.partition == PartitionKind::iid) {
    fed.partition = data::partition_iid(data.train.size(), clients, rng);
  } else {
    const auto labels = data.train.task == nn::Task::classification ? data.train.labels
                                                                     : quantile_labels(data.train.values, 10);
    fed.partition = data::partition_noniid(data.train.size(), labels, clients, d.shards_per_client, rng);
  }
  return fed;
}

inline nn::ModelSpec model_spec(const ExperimentConfig& c, const LoadedData& data) {
  return nn::ModelSpec::make(data.train.dim(), c.hidden, data.train.output_size(), task_of(c.dataset.kind));
}

inline std::string config_hash(const ExperimentConfig& c) { return hex64(fnv1a(to_json(c).dump())); }

inline void write_manifest(const fs::path& dir, const std::string& command, const ExperimentConfig& c,
                           const std::string& input_hash) {
  json m;
  m["schema_version"] = kSchemaVersion;
  m["command"] = command;
  m["config_hash"] = config_hash(c);
  m["input_hash"] = input_hash;
  m["seed"] = c.fl.master_seed;
  m["config"] = to_json(c);
  write_atomic(dir / "manifest.json", m.dump(2) + "\n");
}

// Model file: "desmp-model 1", task, layer sizes, then one value per line.
inline std::string model_text(const nn::ModelSpec& spec, const nn::ParamVector& p) {
  std::string out = "desmp-model 1\ntask " + std::string(nn::to_string(spec.task)) + "\nlayers";
  for (auto s : spec.layer_sizes) out += ' ' + std::to_string(s);
  out += '\n';
  for (double v : p.values) out += fmt(v) + '\n';
  return out;
}

/// Seed of the FL run behind RL episode `episode`; `phase` separates
/// training/calibration (0) from detection replays (1).
inline std::uint64_t episode_seed(std::uint64_t master, std::size_t episode, std::uint64_t phase = 0) {
  return Stream::derive(master, Purpose::episode, episode, phase).next_u64();
}

struct TrainSummary {
  fl::TrainingResult result;
  fs::path dir;
};

inline TrainSummary cmd_train(const ExperimentConfig& c, const fs::path& out_dir, std::ostream& log) {
  validate(c);
  const auto data = load_data(c.dataset);
  const auto spec = model_spec(c, data);
  const auto fed = federate(data, c.dataset, c.fl.total_clients, c.fl.master_seed);
  auto result = fl::run_training(c.fl, spec, c.privacy, c.attack, nullptr, fed);

  write_atomic(out_dir / "rounds.csv", rounds_csv(result.history));
  write_atomic(out_dir / "model.txt", model_text(spec, result.final_params));
  write_manifest(out_dir, "train", c, data.input_hash);

  const auto final_eval = result.history.empty() ? result.initial
                                                 : fl::Evaluation{result.history.back().test_loss,
                                                                  result.history.back().test_accuracy};
  log << "rounds=" << result.history.size() << " stop=" << fl::to_string(result.reason)
      << " test_loss=" << fmt(final_eval.loss);
  if (spec.task == nn::Task::classification) log << " test_accuracy=" << fmt(final_eval.accuracy);
  log << '\n';
  return {std::move(result), out_dir};
}

struct SweepCell {
  std::uint64_t seed = 0;
  double epsilon = 0.0;
  double gamma = 0.0;
  std::size_t rounds = 0;
  double final_loss = std::numeric_limits<double>::quiet_NaN();
  double final_accuracy = std::numeric_limits<double>::quiet_NaN();
  std::string stop_reason;
  bool ok = false;
  std::string error;
};

inline std::string sweep_row(const SweepCell& s) {
  return join({std::to_string(s.seed), fmt(s.epsilon), fmt(s.gamma), std::to_string(s.rounds), fmt(s.final_loss),
               fmt(s.final_accuracy), s.stop_reason, s.ok ? "ok" : "error", quote(s.error)});
}

/// Cells in output order: per seed, the no-DP baseline first, then the
/// epsilon x gamma grid (gamma = 0 always included).
inline std::vector<SweepCell> sweep_cells(const ExperimentConfig& c) {
  if (c.sweep.epsilons.empty()) throw ConfigError("sweep.epsilons", "must not be empty for attack-sweep");
  std::vector<double> gammas = c.sweep.gammas;
  if (std::find(gammas.begin(), gammas.end(), 0.0) == gammas.end()) gammas.insert(gammas.begin(), 0.0);
  const auto seeds = c.sweep.seeds.empty() ? std::vector<std::uint64_t>{c.fl.master_seed} : c.sweep.seeds;
  std::vector<SweepCell> cells;
  auto add = [&](std::uint64_t seed, double e, double g) {
    SweepCell cell;
    cell.seed = seed;
    cell.epsilon = e;
    cell.gamma = g;
    cells.push_back(std::move(cell));
  };
  for (auto seed : seeds) {
    add(seed, std::numeric_limits<double>::infinity(), 0.0);
    for (double e : c.sweep.epsilons) {
      for (double g : gammas) add(seed, e, g);
    }
  }
  return cells;
}

inline std::string cell_name(const SweepCell& s) {
  return "seed" + std::to_string(s.seed) + "_eps" + fmt(s.epsilon) + "_gamma" + fmt(s.gamma);
}

struct SweepSummary {
  std::vector<SweepCell> cells;
  fs::path dir;
};

/// One training run per cell, `jobs` at a time. Failures are recorded in
/// the cell and do not stop the sweep.
inline SweepSummary cmd_attack_sweep(const ExperimentConfig& c, const fs::path& out_dir, std::size_t jobs,
                                     std::ostream& log) {
  validate(c);
  auto cells = sweep_cells(c);
  const auto data = load_data(c.dataset);
  const auto spec = model_spec(c, data);

  std::atomic<std::size_t> next{0};
  std::mutex log_mutex;
  auto worker = [&] {
    for (std::size_t i = next++; i < cells.size(); i = next++) {
      auto& cell = cells[i];
      try {
        ExperimentConfig cc = c;
        cc.fl.master_seed = cell.seed;
        cc.privacy.params.epsilon = cell.epsilon;
        cc.attack.enabled = cell.gamma > 0.0;
        cc.attack.gamma = cell.gamma;
        const auto fed = federate(data, c.dataset, c.fl.total_clients, cell.seed);
        const auto result = fl::run_training(cc.fl, spec, cc.privacy, cc.attack, nullptr, fed);
        cell.rounds = result.history.size();
        const auto& last = result.history.empty() ? fl::RoundRecord{} : result.history.back();
        cell.final_loss = result.reason == fl::StopReason::diverged ? std::numeric_limits<double>::infinity()
                          : result.history.empty()                  ? result.initial.loss
                                                                    : last.test_loss;
        cell.final_accuracy = result.history.empty() ? result.initial.accuracy : last.test_accuracy;
        cell.stop_reason = fl::to_string(result.reason);
        cell.ok = true;
        write_atomic(out_dir / "cells" / cell_name(cell) / "rounds.csv", rounds_csv(result.history));
      } catch (const std::exception& e) {
        cell.ok = false;
        cell.error = e.what();
      }
      std::lock_guard lock(log_mutex);
      log << cell_name(cell) << ' ' << (cell.ok ? "loss=" + fmt(cell.final_loss) : "error: " + cell.error) << '\n';
    }
  };
  const std::size_t n_threads = std::max<std::size_t>(1, std::min(jobs, cells.size()));
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < n_threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();

  std::string csv = join(sweep_header()) + '\n';
  for (const auto& cell : cells) csv += sweep_row(cell) + '\n';
  write_atomic(out_dir / "sweep.csv", csv);
  write_manifest(out_dir, "attack-sweep", c, data.input_hash);
  return {std::move(cells), out_dir};
}

/// Environment for the agent: one episode is one FL run on a fresh seed.
inline rl::Environment make_environment(const ExperimentConfig& c, const nn::ModelSpec& spec,
                                        const fl::FederatedData& fed, const attack::AttackProfile& profile,
                                        std::uint64_t phase = 0) {
  return [c, spec, &fed, profile, phase](fl::PrivacyController& ctl, std::size_t episode) {
    fl::FLConfig f = c.fl;
    f.master_seed = episode_seed(c.fl.master_seed, episode, phase);
    f.stop_on_divergence = true;
    fl::run_training(f, spec, c.privacy, profile, &ctl, fed);
  };
}

inline const rl::RLConfig& require_rl(const ExperimentConfig& c) {
  if (!c.rl) throw ConfigError("rl", "section required for this command");
  return *c.rl;
}

struct RLSummary {
  rl::TrainedAgent agent;
  fs::path dir;
};

inline std::string rewards_csv(const std::vector<rl::EpisodeStats>& curve) {
  std::string out = join(rewards_header()) + '\n';
  for (const auto& e : curve) {
    out += join({std::to_string(e.episode), fmt(e.explore_prob), fmt(e.accumulated_reward)}) + '\n';
  }
  return out;
}

inline RLSummary cmd_rl_train(const ExperimentConfig& c, const fs::path& out_dir, std::ostream& log) {
  validate(c);
  const auto& rc = require_rl(c);
  const auto data = load_data(c.dataset);
  const auto spec = model_spec(c, data);
  const auto fed = federate(data, c.dataset, c.fl.total_clients, c.fl.master_seed);
  const auto env = make_environment(c, spec, fed, c.attack);
  const auto calib = make_environment(c, spec, fed, attack::AttackProfile{});
  auto agent = rl::train_agent(env, rc, c.fl.master_seed, !c.attack.enabled, &calib);

  std::ostringstream policy;
  rl::save_policy(policy, rc.eps_grid, agent.q, agent.baseline);
  write_atomic(out_dir / "policy.txt", policy.str());
  write_atomic(out_dir / "rewards.csv", rewards_csv(agent.curve));
  write_manifest(out_dir, "rl-train", c, data.input_hash);

  std::vector<double> rewards;
  for (const auto& e : agent.curve) rewards.push_back(e.accumulated_reward);
  log << "episodes=" << agent.curve.size() << " final_reward=" << fmt(rewards.back())
      << " baseline_states=" << agent.baseline.visited() << '\n';
  return {std::move(agent), out_dir};
}

struct DetectionSummary {
  std::size_t suspected = 0;
  std::size_t clear = 0;
  std::size_t no_baseline = 0;
  /// suspected / (suspected + clear); NaN when every round lacked a baseline.
  double flagged_rate() const {
    const auto judged = suspected + clear;
    return judged == 0 ? std::numeric_limits<double>::quiet_NaN()
                       : static_cast<double>(suspected) / static_cast<double>(judged);
  }
};

inline rl::Policy read_policy(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("detect.policy", "cannot open " + path.string());
  return rl::load_policy(in);
}

/// Replays `detect.episodes` runs under the configured attack with the
/// frozen greedy policy and judges every round against the baseline.
inline DetectionSummary run_detection(const ExperimentConfig& c, const nn::ModelSpec& spec,
                                      const fl::FederatedData& fed, const rl::Policy& policy,
                                      std::string* csv_out = nullptr) {
  rl::RLConfig rc = c.rl ? *c.rl : rl::RLConfig{};
  if (rc.eps_grid != policy.eps_grid || rc.m_bins != policy.q.m_bins() || rc.f_bins != policy.q.f_bins()) {
    throw ConfigError("rl.eps_grid", "policy file was trained with a different grid or binning");
  }
  DetectionSummary s;
  std::string csv = join(detection_header()) + '\n';
  rl::BaselineTable baseline = policy.baseline;
  for (std::size_t e = 0; e < c.detect.episodes; ++e) {
    rl::GreedyPolicy ctl(rc, policy.q, baseline, rl::GreedyPolicy::Mode::detect, c.detect.margin);
    fl::FLConfig f = c.fl;
    f.master_seed = episode_seed(c.fl.master_seed, e, 1);
    f.stop_on_divergence = true;
    const auto result = fl::run_training(f, spec, c.privacy, c.attack, &ctl, fed);
    for (std::size_t r = 0; r < result.history.size(); ++r) {
      const auto& rec = result.history[r];
      switch (rec.verdict) {
        case fl::Verdict::attack_suspected:
          ++s.suspected;
          break;
        case fl::Verdict::clear:
          ++s.clear;
          break;
        default:
          ++s.no_baseline;
          break;
      }
      const auto& b = ctl.baselines()[r];
      csv += join({std::to_string(e), std::to_string(rec.round), fmt(rec.epsilon), fmt(rec.test_loss),
                   b ? fmt(*b) : std::string("nan"), fmt(rec.attacker_loss), fl::to_string(rec.verdict)}) +
             '\n';
    }
  }
  if (csv_out) *csv_out = std::move(csv);
  return s;
}

inline DetectionSummary cmd_detect(const ExperimentConfig& c, const fs::path& out_dir, std::ostream& log) {
  validate(c);
  const fs::path policy_path = c.detect.policy.empty() ? out_dir / "policy.txt" : fs::path(c.detect.policy);
  const auto policy = read_policy(policy_path);
  const auto data = load_data(c.dataset);
  const auto spec = model_spec(c, data);
  const auto fed = federate(data, c.dataset, c.fl.total_clients, c.fl.master_seed);
  std::string csv;
  const auto s = run_detection(c, spec, fed, policy, &csv);
  write_atomic(out_dir / "detection.csv", csv);
  write_manifest(out_dir, "detect", c, data.input_hash);
  log << "attack_suspected=" << s.suspected << " clear=" << s.clear << " no_baseline=" << s.no_baseline
      << (c.attack.enabled ? " detection_rate=" : " false_positive_rate=") << fmt(s.flagged_rate()) << '\n';
  return s;
}

enum class CsvKind { rounds, sweep, rewards, detection };

inline CsvKind classify_header(const std::vector<std::string>& header) {
  if (header == rounds_header()) return CsvKind::rounds;
  if (header == sweep_header()) return CsvKind::sweep;
  if (header == rewards_header()) return CsvKind::rewards;
  if (header == detection_header()) return CsvKind::detection;
  throw FormatError("unrecognized CSV header: " + join(header), 0);
}

inline double median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const auto n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

/// Summarizes one output CSV; files with an unknown header are rejected.
inline void report_file(const fs::path& path, std::ostream& out) {
  const auto t = parse_csv(read_text(path));
  out << path.string() << ": ";
  switch (classify_header(t.header)) {
    case CsvKind::rounds: {
      out << "rounds=" << t.rows.size();
      if (!t.rows.empty()) {
        const auto& last = t.rows.back();
        out << " final_test_loss=" << last[t.column("test_loss")]
            << " final_test_accuracy=" << last[t.column("test_accuracy")]
            << " delta_spent=" << last[t.column("delta_spent")];
      }
      out << '\n';
      break;
    }
    case CsvKind::sweep: {
      std::map<std::pair<double, double>, std::vector<double>> groups;
      std::size_t failed = 0;
      for (const auto& r : t.rows) {
        if (r[t.column("status")] != "ok") {
          ++failed;
          continue;
        }
        groups[{parse_real(r[t.column("epsilon")]), parse_real(r[t.column("gamma")])}].push_back(
            parse_real(r[t.column("final_loss")]));
      }
      out << "cells=" << t.rows.size() << " failed=" << failed << '\n';
      for (const auto& [key, losses] : groups) {
        out << "  epsilon=" << fmt(key.first) << " gamma=" << fmt(key.second) << " median_final_loss="
            << fmt(median(losses)) << " seeds=" << losses.size() << '\n';
      }
      break;
    }
    case CsvKind::rewards: {
      std::vector<double> rewards;
      for (const auto& r : t.rows) rewards.push_back(parse_real(r[t.column("accumulated_reward")]));
      const auto ma = rl::moving_average(rewards, 10);
      out << "episodes=" << rewards.size();
      if (!rewards.empty()) out << " last_reward=" << fmt(rewards.back());
      if (!ma.empty()) out << " last_moving_average=" << fmt(ma.back());
      out << '\n';
      break;
    }
    case CsvKind::detection: {
      DetectionSummary s;
      for (const auto& r : t.rows) {
        const auto& v = r[t.column("verdict")];
        if (v == "attack_suspected") ++s.suspected;
        else if (v == "clear") ++s.clear;
        else ++s.no_baseline;
      }
      out << "attack_suspected=" << s.suspected << " clear=" << s.clear << " no_baseline=" << s.no_baseline
          << " flagged_rate=" << fmt(s.flagged_rate()) << '\n';
      break;
    }
  }
}

}  // namespace desmp::harness
