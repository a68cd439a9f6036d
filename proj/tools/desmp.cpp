// SPDX-License-Identifier: Apache-2.0
// desmp: command-line front end for the federated training, attack sweep,
// agent training, detection and report commands.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "desmp/harness/commands.hpp"

namespace fs = std::filesystem;
using namespace desmp;

namespace {

struct CommonOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::size_t jobs = 1;
};

void add_common(CLI::App* sub, CommonOptions& o) {
  sub->add_option("--config", o.config, "JSON experiment config (absent: all defaults)");
  sub->add_option("--seed", o.seed, "master seed, overrides the config");
  sub->add_option("--out", o.out, "run directory");
}

harness::ExperimentConfig load(const CommonOptions& o) {
  auto c = o.config.empty() ? harness::parse_config_text("{}") : harness::parse_config_file(o.config);
  if (o.seed) c.fl.master_seed = *o.seed;
  return c;
}

/// --out, then the config's output_dir, then $DESMP_OUTPUT_ROOT/<command>,
/// then runs/<command>.
fs::path output_dir(const CommonOptions& o, const harness::ExperimentConfig& c, const std::string& command) {
  if (!o.out.empty()) return o.out;
  if (!c.output_dir.empty()) return c.output_dir;
  if (const char* root = std::getenv("DESMP_OUTPUT_ROOT"); root && *root) return fs::path(root) / command;
  return fs::path("runs") / command;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Differentially private federated learning with noise-poisoning attacks and an RL defense"};
  app.require_subcommand(1);

  CommonOptions opts;
  auto* train = app.add_subcommand("train", "run one federated training");
  add_common(train, opts);
  auto* sweep = app.add_subcommand("attack-sweep", "train over an epsilon x gamma grid");
  add_common(sweep, opts);
  sweep->add_option("--jobs", opts.jobs, "cells trained concurrently")->check(CLI::PositiveNumber);
  auto* rl_train = app.add_subcommand("rl-train", "train the privacy-loss agent");
  add_common(rl_train, opts);
  auto* detect = app.add_subcommand("detect", "replay runs with the frozen policy and flag attacked rounds");
  add_common(detect, opts);
  std::string policy;
  detect->add_option("--policy", policy, "policy file from rl-train (default <out>/policy.txt)");
  auto* report = app.add_subcommand("report", "summarize output CSV files");
  std::vector<std::string> files;
  report->add_option("files", files, "rounds.csv, sweep.csv, rewards.csv or detection.csv")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (report->parsed()) {
      for (const auto& f : files) harness::report_file(f, std::cout);
      return 0;
    }
    auto c = load(opts);
    if (train->parsed()) {
      harness::cmd_train(c, output_dir(opts, c, "train"), std::cout);
    } else if (sweep->parsed()) {
      const auto s = harness::cmd_attack_sweep(c, output_dir(opts, c, "attack-sweep"), opts.jobs, std::cout);
      for (const auto& cell : s.cells) {
        if (!cell.ok) return 3;
      }
    } else if (rl_train->parsed()) {
      harness::cmd_rl_train(c, output_dir(opts, c, "rl-train"), std::cout);
    } else if (detect->parsed()) {
      if (!policy.empty()) c.detect.policy = policy;
      harness::cmd_detect(c, output_dir(opts, c, "detect"), std::cout);
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
