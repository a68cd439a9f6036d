// SPDX-License-Identifier: Apache-2.0
#pragma once

// Experiment configuration: a versioned JSON document parsed strictly
// (unknown keys are errors naming their path) with defaults for every
// absent field.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "desmp/attack/desmp.hpp"
#include "desmp/dp/mechanism.hpp"
#include "desmp/errors.hpp"
#include "desmp/fl/engine.hpp"
#include "desmp/nn/model.hpp"
#include "desmp/rl/agent.hpp"

namespace desmp::harness {

using json = nlohmann::json;

inline constexpr int kSchemaVersion = 1;

enum class DatasetKind { mnist, power, synthetic_classification, synthetic_regression };

inline const char* to_string(DatasetKind k) {
  switch (k) {
    case DatasetKind::mnist:
      return "mnist";
    case DatasetKind::power:
      return "power";
    case DatasetKind::synthetic_classification:
      return "synthetic_classification";
    case DatasetKind::synthetic_regression:
      break;
  }
  return "synthetic_regression";
}

inline nn::Task task_of(DatasetKind k) {
  return k == DatasetKind::mnist || k == DatasetKind::synthetic_classification ? nn::Task::classification
                                                                                : nn::Task::regression;
}

enum class PartitionKind { noniid, iid };

struct DatasetSpec {
  DatasetKind kind = DatasetKind::mnist;
  std::string path;                        // MNIST directory or power CSV file
  std::string target = "Global_active_power";
  std::size_t limit = 0;                   // cap on training rows, 0 = all
  std::size_t samples = 2000;              // synthetic only
  std::size_t dim = 20;
  std::size_t classes = 10;
  double margin = 4.0;
  double noise_std = 0.1;
  double test_fraction = 0.2;              // everything except MNIST
  std::uint64_t seed = 7;                  // data generation and split
  PartitionKind partition = PartitionKind::noniid;
  std::size_t shards_per_client = 2;

  friend bool operator==(const DatasetSpec&, const DatasetSpec&) = default;
};

struct DetectSpec {
  double margin = 0.2;
  std::size_t episodes = 5;
  std::string policy;  // empty: <out>/policy.txt

  friend bool operator==(const DetectSpec&, const DetectSpec&) = default;
};

struct SweepSpec {
  std::vector<double> epsilons;
  std::vector<double> gammas;
  std::vector<std::uint64_t> seeds;  // empty: the master seed only

  friend bool operator==(const SweepSpec&, const SweepSpec&) = default;
};

struct ExperimentConfig {
  DatasetSpec dataset{};
  std::vector<std::size_t> hidden;
  fl::FLConfig fl{};
  fl::PrivacySetting privacy{};
  attack::AttackProfile attack{};
  std::optional<rl::RLConfig> rl;
  SweepSpec sweep{};
  DetectSpec detect{};
  std::string output_dir;

  friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

namespace detail {

/// Reads members of one JSON object, remembering which keys were used so
/// leftovers can be reported.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_.empty() ? "<root>" : path_, "expected an object");
  }

  std::string key(const std::string& name) const { return path_.empty() ? name : path_ + "." + name; }

  const json* find(const std::string& name) {
    used_.insert(name);
    auto it = j_.find(name);
    return it == j_.end() || it->is_null() ? nullptr : &*it;
  }

  template <class T>
  void get(const std::string& name, T& out) {
    if (const json* v = find(name)) out = convert<T>(*v, key(name));
  }

  template <class T>
  std::optional<T> get_optional(const std::string& name) {
    if (const json* v = find(name)) return convert<T>(*v, key(name));
    return std::nullopt;
  }

  Section sub(const std::string& name) {
    static const json empty = json::object();
    const json* v = find(name);
    return Section(v ? *v : empty, key(name));
  }

  bool has(const std::string& name) const {
    auto it = j_.find(name);
    return it != j_.end() && !it->is_null();
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!used_.count(it.key())) throw ConfigError(key(it.key()), "unknown key");
    }
  }

  template <class T>
  static T convert(const json& v, const std::string& key) {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ConfigError(key, "expected a boolean");
      return v.get<bool>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw ConfigError(key, "expected a string");
      return v.get<std::string>();
    } else if constexpr (std::is_floating_point_v<T>) {
      return real(v, key);
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) throw ConfigError(key, "expected an integer");
      if (v.is_number_unsigned()) return static_cast<T>(v.get<std::uint64_t>());
      const auto i = v.get<std::int64_t>();
      if (i < 0) throw ConfigError(key, "must be non-negative");
      return static_cast<T>(i);
    } else {
      if (!v.is_array()) throw ConfigError(key, "expected a list");
      T out;
      for (std::size_t i = 0; i < v.size(); ++i) {
        out.push_back(convert<typename T::value_type>(v[i], key + "[" + std::to_string(i) + "]"));
      }
      return out;
    }
  }

  /// Numbers, or the strings "inf" / "-inf".
  static double real(const json& v, const std::string& key) {
    if (v.is_number()) return v.get<double>();
    if (v.is_string()) {
      const auto s = v.get<std::string>();
      if (s == "inf") return std::numeric_limits<double>::infinity();
      if (s == "-inf") return -std::numeric_limits<double>::infinity();
    }
    throw ConfigError(key, "expected a number");
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> used_;
};

inline json real_json(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return v;
}

inline json reals_json(const std::vector<double>& vs) {
  json a = json::array();
  for (double v : vs) a.push_back(real_json(v));
  return a;
}

}  // namespace detail

inline std::vector<std::size_t> default_hidden(DatasetKind k) {
  return task_of(k) == nn::Task::classification ? std::vector<std::size_t>{64, 64} : std::vector<std::size_t>{32, 32};
}

/// Checks every nested invariant; errors carry the key path.
inline void validate(const ExperimentConfig& c) {
  const auto& d = c.dataset;
  if ((d.kind == DatasetKind::mnist || d.kind == DatasetKind::power) && d.path.empty()) {
    throw ConfigError("dataset.path", "required for " + std::string(to_string(d.kind)));
  }
  if (d.kind == DatasetKind::synthetic_classification || d.kind == DatasetKind::synthetic_regression) {
    if (d.samples < 2) throw ConfigError("dataset.samples", "needs at least two samples");
    if (d.dim == 0) throw ConfigError("dataset.dim", "must be positive");
  }
  if (d.kind == DatasetKind::synthetic_classification && d.classes < 2) {
    throw ConfigError("dataset.classes", "needs at least two classes");
  }
  if (!(d.test_fraction > 0.0 && d.test_fraction < 1.0)) throw ConfigError("dataset.test_fraction", "must lie in (0, 1)");
  if (!(d.noise_std >= 0.0)) throw ConfigError("dataset.noise_std", "must be non-negative");
  if (!(d.margin > 0.0)) throw ConfigError("dataset.margin", "must be positive");
  if (d.shards_per_client == 0) throw ConfigError("dataset.shards_per_client", "must be positive");
  for (auto h : c.hidden) {
    if (h == 0) throw ConfigError("model.hidden", "widths must be positive");
  }
  c.fl.validate();
  if (c.fl.threshold && !std::isfinite(*c.fl.threshold)) throw ConfigError("fl.tau", "must be finite");
  const auto& p = c.privacy.params;
  if (!(p.epsilon > 0.0)) throw ConfigError("privacy.epsilon", "must be positive or \"inf\"");
  if (!(p.delta_round > 0.0 && p.delta_round < 1.0)) throw ConfigError("privacy.delta_round", "must lie in (0, 1)");
  if (!(c.privacy.budget >= 0.0) || !std::isfinite(c.privacy.budget)) throw ConfigError("privacy.budget", "must be non-negative");
  if (!(c.attack.gamma >= 0.0) || !std::isfinite(c.attack.gamma)) throw ConfigError("attack.gamma", "must be non-negative");
  if (c.rl) c.rl->validate();
  for (double e : c.sweep.epsilons) {
    if (!(e > 0.0)) throw ConfigError("sweep.epsilons", "values must be positive or \"inf\"");
  }
  for (double g : c.sweep.gammas) {
    if (!(g >= 0.0) || !std::isfinite(g)) throw ConfigError("sweep.gammas", "values must be non-negative");
  }
  if (!(c.detect.margin >= 0.0)) throw ConfigError("detect.margin", "must be non-negative or \"inf\"");
  if (c.detect.episodes == 0) throw ConfigError("detect.episodes", "must be positive");
}

inline ExperimentConfig parse_config(const json& root) {
  detail::Section top(root, "");
  ExperimentConfig c;
  int version = kSchemaVersion;
  top.get("schema_version", version);
  if (version != kSchemaVersion) throw ConfigError("schema_version", "unsupported version " + std::to_string(version));

  {
    auto s = top.sub("dataset");
    std::string kind = "mnist";
    s.get("kind", kind);
    if (kind == "mnist") c.dataset.kind = DatasetKind::mnist;
    else if (kind == "power") c.dataset.kind = DatasetKind::power;
    else if (kind == "synthetic_classification") c.dataset.kind = DatasetKind::synthetic_classification;
    else if (kind == "synthetic_regression") c.dataset.kind = DatasetKind::synthetic_regression;
    else throw ConfigError("dataset.kind", "unknown dataset '" + kind + "'");
    if (c.dataset.kind == DatasetKind::synthetic_regression) c.dataset.dim = 7;
    s.get("path", c.dataset.path);
    if (c.dataset.path.empty() && c.dataset.kind == DatasetKind::mnist) c.dataset.path = "data/mnist";
    if (c.dataset.path.empty() && c.dataset.kind == DatasetKind::power) {
      c.dataset.path = "data/household_power_consumption.txt";
    }
    s.get("target", c.dataset.target);
    s.get("limit", c.dataset.limit);
    s.get("samples", c.dataset.samples);
    s.get("dim", c.dataset.dim);
    s.get("classes", c.dataset.classes);
    s.get("margin", c.dataset.margin);
    s.get("noise_std", c.dataset.noise_std);
    s.get("test_fraction", c.dataset.test_fraction);
    s.get("seed", c.dataset.seed);
    std::string part = "noniid";
    s.get("partition", part);
    if (part == "noniid") c.dataset.partition = PartitionKind::noniid;
    else if (part == "iid") c.dataset.partition = PartitionKind::iid;
    else throw ConfigError("dataset.partition", "expected \"noniid\" or \"iid\"");
    s.get("shards_per_client", c.dataset.shards_per_client);
    s.finish();
  }
  const bool classification = task_of(c.dataset.kind) == nn::Task::classification;

  {
    auto s = top.sub("model");
    c.hidden = default_hidden(c.dataset.kind);
    s.get("hidden", c.hidden);
    s.finish();
  }
  {
    auto s = top.sub("fl");
    c.fl.batch_size = classification ? 32 : 7;
    c.fl.learning_rate = classification ? 0.01 : 0.1;
    s.get("K", c.fl.total_clients);
    s.get("k", c.fl.clients_per_round);
    s.get("batch_size", c.fl.batch_size);
    s.get("local_epochs", c.fl.local_epochs);
    s.get("learning_rate", c.fl.learning_rate);
    c.fl.threshold = s.get_optional<double>("tau");
    s.get("max_rounds", c.fl.max_rounds);
    s.get("stop_on_divergence", c.fl.stop_on_divergence);
    s.finish();
  }
  {
    auto s = top.sub("privacy");
    s.get("epsilon", c.privacy.params.epsilon);
    s.get("delta_round", c.privacy.params.delta_round);
    s.get("budget", c.privacy.budget);
    s.finish();
  }
  {
    auto s = top.sub("attack");
    s.get("enabled", c.attack.enabled);
    s.get("gamma", c.attack.gamma);
    s.finish();
  }
  if (top.has("rl")) {
    auto s = top.sub("rl");
    rl::RLConfig r;
    s.get("alpha", r.alpha);
    s.get("chi", r.chi);
    if (auto psi = s.get_optional<std::vector<double>>("psi")) {
      if (psi->size() != 3) throw ConfigError("rl.psi", "expected three weights");
      r.psi = {(*psi)[0], (*psi)[1], (*psi)[2]};
    }
    s.get("f_l_max", r.f_l_max);
    s.get("m_l_max", r.m_l_max);
    s.get("loss_floor", r.loss_floor);
    s.get("eps_grid", r.eps_grid);
    s.get("f_bins", r.f_bins);
    s.get("m_bins", r.m_bins);
    s.get("explore_start", r.explore_start);
    s.get("explore_min", r.explore_min);
    s.get("explore_decay", r.explore_decay);
    s.get("episodes", r.episodes);
    s.get("initial_eps_index", r.initial_eps_index);
    s.get("invert_attacker_term", r.invert_attacker_term);
    s.get("observe_attacker_loss", r.observe_attacker_loss);
    s.get("baseline_episodes", r.baseline_episodes);
    s.finish();
    c.rl = r;
  } else {
    top.find("rl");
  }
  {
    auto s = top.sub("sweep");
    s.get("epsilons", c.sweep.epsilons);
    s.get("gammas", c.sweep.gammas);
    s.get("seeds", c.sweep.seeds);
    s.finish();
  }
  {
    auto s = top.sub("detect");
    s.get("margin", c.detect.margin);
    s.get("episodes", c.detect.episodes);
    s.get("policy", c.detect.policy);
    s.finish();
  }
  top.get("seed", c.fl.master_seed);
  top.get("output_dir", c.output_dir);
  top.finish();
  validate(c);
  return c;
}

inline ExperimentConfig parse_config_text(const std::string& text) {
  json root;
  try {
    root = text.find_first_not_of(" \t\r\n") == std::string::npos ? json::object() : json::parse(text);
  } catch (const json::parse_error& e) {
    throw FormatError(std::string("config is not valid JSON: ") + e.what(), e.byte);
  }
  return parse_config(root);
}

inline ExperimentConfig parse_config_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("--config", "cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

/// Every field written explicitly, so parsing the result reproduces `c`.
inline json to_json(const ExperimentConfig& c) {
  using detail::real_json;
  json j;
  j["schema_version"] = kSchemaVersion;
  j["seed"] = c.fl.master_seed;
  j["output_dir"] = c.output_dir;
  const auto& d = c.dataset;
  j["dataset"] = {{"kind", to_string(d.kind)},
                  {"path", d.path},
                  {"target", d.target},
                  {"limit", d.limit},
                  {"samples", d.samples},
                  {"dim", d.dim},
                  {"classes", d.classes},
                  {"margin", d.margin},
                  {"noise_std", d.noise_std},
                  {"test_fraction", d.test_fraction},
                  {"seed", d.seed},
                  {"partition", d.partition == PartitionKind::noniid ? "noniid" : "iid"},
                  {"shards_per_client", d.shards_per_client}};
  j["model"] = {{"hidden", c.hidden}};
  j["fl"] = {{"K", c.fl.total_clients},
             {"k", c.fl.clients_per_round},
             {"batch_size", c.fl.batch_size},
             {"local_epochs", c.fl.local_epochs},
             {"learning_rate", c.fl.learning_rate},
             {"tau", c.fl.threshold ? json(*c.fl.threshold) : json(nullptr)},
             {"max_rounds", c.fl.max_rounds},
             {"stop_on_divergence", c.fl.stop_on_divergence}};
  j["privacy"] = {{"epsilon", real_json(c.privacy.params.epsilon)},
                  {"delta_round", c.privacy.params.delta_round},
                  {"budget", c.privacy.budget}};
  j["attack"] = {{"enabled", c.attack.enabled}, {"gamma", c.attack.gamma}};
  if (c.rl) {
    const auto& r = *c.rl;
    j["rl"] = {{"alpha", r.alpha},
               {"chi", r.chi},
               {"psi", {r.psi.federated, r.psi.attacker, r.psi.privacy}},
               {"f_l_max", r.f_l_max},
               {"m_l_max", r.m_l_max},
               {"loss_floor", r.loss_floor},
               {"eps_grid", r.eps_grid},
               {"f_bins", r.f_bins},
               {"m_bins", r.m_bins},
               {"explore_start", r.explore_start},
               {"explore_min", r.explore_min},
               {"explore_decay", r.explore_decay},
               {"episodes", r.episodes},
               {"initial_eps_index", r.initial_eps_index},
               {"invert_attacker_term", r.invert_attacker_term},
               {"observe_attacker_loss", r.observe_attacker_loss},
               {"baseline_episodes", r.baseline_episodes}};
  }
  j["sweep"] = {{"epsilons", detail::reals_json(c.sweep.epsilons)},
                {"gammas", c.sweep.gammas},
                {"seeds", c.sweep.seeds}};
  j["detect"] = {{"margin", real_json(c.detect.margin)}, {"episodes", c.detect.episodes}, {"policy", c.detect.policy}};
  return j;
}

}  // namespace desmp::harness
