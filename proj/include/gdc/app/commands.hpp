// Copyright 2026 The gdc Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "json.hpp"

#include "gdc/app/config.hpp"
#include "gdc/ebm.hpp"
#include "gdc/model.hpp"

namespace gdc::app {

enum class LogMode { console, jsonl, both };

LogMode log_mode_from_string(const std::string& name);

struct RunOptions {
  std::optional<std::uint64_t> seed;
  bool verify = false;
  std::optional<std::filesystem::path> out;
  LogMode log = LogMode::both;
  /// Explicit model / target files for qrs and oracle.
  std::optional<std::filesystem::path> model_path;
  std::optional<std::filesystem::path> target_path;
  /// Human-readable progress; null silences it.
  std::ostream* console = nullptr;
};

struct Check {
  std::string name;
  bool passed = false;
  std::string detail;
};

struct CommandResult {
  std::filesystem::path out_dir;
  std::vector<Check> checks;
  nlohmann::json report = nlohmann::json::object();

  bool passed() const;
};

/// Base, contexts and the constrained target built from a config.
struct TargetBundle {
  std::shared_ptr<const AutoregressiveModel> base;
  ContextDistribution contexts;
  std::optional<ConstraintSpec> spec;
  std::shared_ptr<const EBMTarget> target;
  std::optional<LambdaFit> fit;
};

TargetBundle build_target(const ExperimentConfig& cfg);

/// Runs constrain(); writes base_model.json, target.json, fit_report.json and
/// lambda_trajectory.csv.
CommandResult cmd_fit_lambda(ExperimentConfig cfg, const RunOptions& opts);

/// Constrain, clone the base unfrozen, tune; writes model.json and
/// metrics.jsonl besides the fit-lambda outputs.
CommandResult cmd_tune(ExperimentConfig cfg, const RunOptions& opts);

/// Quasi-rejection sampling over the configured beta grid; writes
/// qrs_estimates.csv and qrs_samples.csv.
CommandResult cmd_qrs(ExperimentConfig cfg, const RunOptions& opts);

/// Exact partition functions, moments, divergences and coefficients; writes
/// oracle.json.
CommandResult cmd_oracle(ExperimentConfig cfg, const RunOptions& opts);

/// tune, then qrs with the tuned model as proposal when the config has a qrs
/// section.
CommandResult cmd_experiment(ExperimentConfig cfg, const RunOptions& opts);

/// Oracle report for explicit files, without a config.
CommandResult cmd_oracle_files(const RunOptions& opts);

}  // namespace gdc::app
