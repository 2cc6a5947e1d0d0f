// Copyright 2026 The gdc Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "gdc/context_distribution.hpp"
#include "gdc/ebm.hpp"
#include "gdc/features.hpp"
#include "gdc/model.hpp"
#include "gdc/tuner.hpp"

namespace gdc::app {

/// How the base model is obtained: loaded from a model JSON file, or built as
/// a randomly initialized softmax model.
struct ModelSpec {
  std::optional<std::string> path;
  std::vector<std::string> tokens;
  std::string eos = "<eos>";
  std::size_t t_max = 0;
  std::size_t order = 1;
  bool context_copy = false;
  std::uint64_t init_seed = 0;
  double init_scale = 1.0;
  double eos_bias = 0.0;

  nlohmann::json to_json() const;
  static ModelSpec from_json(const nlohmann::json& j);
};

/// Contexts listed inline or read from a file with one context per line.
struct ContextSpec {
  std::vector<std::string> inline_contexts;
  std::optional<std::string> file;

  bool empty() const { return inline_contexts.empty() && !file; }
  nlohmann::json to_json() const;
  static ContextSpec from_json(const nlohmann::json& j);
};

struct RlhfSpec {
  nlohmann::json reward;
  double beta = 1.0;
};

struct QrsSpec {
  std::vector<double> betas;
  /// When set, betas are multiples of the estimated partition function.
  bool beta_normalized = false;
  std::size_t n_estimate = 10'000;
  std::size_t n_wanted = 1'000;
  std::size_t batch_size = 256;
  /// Index into the context list; QRS runs in one context.
  std::size_t context_index = 0;
  std::uint64_t seed = 0;

  nlohmann::json to_json() const;
  static QrsSpec from_json(const nlohmann::json& j);
};

/// Post-run checks evaluated exactly by enumeration.
struct VerifySpec {
  std::optional<double> max_kl_target_model;
  /// {feature, value}: the tuned model's moment of `feature` is at least value.
  std::optional<std::string> satisfaction_feature;
  double min_satisfaction = 0.0;
  /// Feature whose moment under the tuned model must exceed the base's on the
  /// evaluation contexts.
  std::optional<std::string> improves_feature;
  /// Every constrained moment moves toward its desired value.
  bool moments_move_toward_targets = false;
  /// Tolerance for the fitted target's moments.
  std::optional<double> target_moment_tolerance;

  nlohmann::json to_json() const;
  static VerifySpec from_json(const nlohmann::json& j);
};

struct ExperimentConfig {
  std::string name;
  ModelSpec model;
  std::vector<nlohmann::json> features;
  std::vector<double> moments;
  std::optional<RlhfSpec> rlhf;
  ContextSpec contexts;
  ContextSpec eval_contexts;
  LambdaFitConfig lambda_fit;
  TunerConfig tuner;
  std::optional<QrsSpec> qrs;
  VerifySpec verify;
  std::string output_dir = "out";
  /// Relative paths resolve against this directory (the config file's).
  std::filesystem::path base_dir;

  /// Throws ConfigError on any structural problem, including unknown feature
  /// builtins and unreadable context files.
  static ExperimentConfig from_json(const nlohmann::json& j, const std::filesystem::path& base_dir);
  static ExperimentConfig load(const std::filesystem::path& path);
  nlohmann::json to_json() const;

  /// Sets every stochastic component's seed (model initialization excluded).
  void override_seed(std::uint64_t seed);

  std::filesystem::path resolve(const std::string& path) const;
  AutoregressiveModel build_base() const;
  std::vector<Feature> build_features(const Vocab& vocab, std::size_t horizon) const;
  ConstraintSpec build_constraints(const Vocab& vocab, std::size_t horizon) const;
  ContextDistribution build_contexts() const;
  /// The evaluation contexts, or the training ones when none are given.
  ContextDistribution build_eval_contexts() const;
};

}  // namespace gdc::app
