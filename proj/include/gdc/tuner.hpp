// Copyright 2026 The gdc Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "gdc/context_distribution.hpp"
#include "gdc/ebm.hpp"
#include "gdc/metrics.hpp"
#include "gdc/model.hpp"
#include "gdc/rng.hpp"
#include "gdc/snis.hpp"

namespace gdc {

enum class ProposalPolicy { on_policy, kl_adaptive };

std::string_view to_string(ProposalPolicy policy);
ProposalPolicy proposal_policy_from_string(std::string_view name);

struct TunerConfig {
  std::size_t n_gradient_steps = 100;
  std::size_t n_samples_per_step = 1024;
  std::size_t sampling_size = 256;
  std::size_t scoring_size = 256;
  std::size_t context_sampling_size = 1;
  double learning_rate = 0.1;
  ProposalPolicy proposal_policy = ProposalPolicy::on_policy;
  std::size_t kl_eval_samples = 1024;
  std::uint64_t seed = 0;

  /// Throws InvalidArgument unless counts are at least 1 (steps may be 0),
  /// sampling_size divides n_samples_per_step and the learning rate is positive.
  void validate() const;
  nlohmann::json to_json() const;
  static TunerConfig from_json(const nlohmann::json& j);
};

/// Proposal samples for one context, with every score the tuner needs.
struct ContextBatch {
  Context context;
  std::vector<Sequence> sequences;
  std::vector<double> proposal_log;  ///< log q(x|c)
  std::vector<double> base_log;      ///< log a(x|c)
  std::vector<double> target_log;    ///< log P_c(x)
  std::vector<double> model_log;     ///< log pi(x|c)
};

struct DpgGradient {
  std::vector<double> gradient;
  /// SNIS weights per batch, aligned with the input batches.
  std::vector<SnisWeights> weights;
  /// Batches whose weights were all zero; they contribute nothing.
  std::size_t starved = 0;
};

/// sum_c (n_c / n) sum_i wbar_i grad log pi(x_i|c), where wbar are the
/// self-normalized weights P_c / q within each context batch. This is the
/// per-context estimate (1/Zhat_c) mean_i w_i grad log pi, averaged over the
/// drawn contexts.
DpgGradient dpg_gradient(const AutoregressiveModel& model, std::span<const ContextBatch> batches);

/// DPG / CDPG: fits a tunable model to an EBM target by stochastic ascent on
/// -CE(p, pi) using importance-weighted samples from a proposal q.
///
/// Under on_policy, q is a frozen snapshot of the model refreshed at the
/// start of every step. Under kl_adaptive, q starts as a snapshot of the
/// initial model and is replaced only when update_proposal_if_improved()
/// finds the model's KL to the target improved by more than one standard
/// error; it runs after every step.
class Tuner {
 public:
  using StepCallback = std::function<void(const Tuner&, const StepMetrics&)>;

  Tuner(AutoregressiveModel model, EBMTarget target, ContextDistribution contexts,
        TunerConfig cfg);

  const AutoregressiveModel& model() const { return model_; }
  AutoregressiveModel& mutable_model() { return model_; }
  const AutoregressiveModel& proposal() const { return proposal_; }
  const EBMTarget& target() const { return target_; }
  const TunerConfig& config() const { return cfg_; }
  std::size_t steps_taken() const { return step_; }
  double best_kl_estimate() const { return best_kl_; }
  /// Exponentially weighted (decay 0.9) partition estimates per context text.
  const std::map<std::string, double>& z_estimates() const { return z_running_; }
  std::size_t starvation_count() const { return starved_; }

  /// Samples one step's batch from the current proposal, grouped by context
  /// in order of first draw.
  std::vector<ContextBatch> draw_batch();

  /// One gradient step. Metrics describe the model before the update.
  StepMetrics step(Logger* logger = nullptr);

  /// Runs the remaining configured steps and returns their metrics.
  std::vector<StepMetrics> tune(Logger* logger = nullptr, const StepCallback& callback = {});

  bool update_proposal_if_improved();

 private:
  void score(ContextBatch& batch) const;

  AutoregressiveModel model_;
  AutoregressiveModel proposal_;
  EBMTarget target_;
  ContextDistribution contexts_;
  TunerConfig cfg_;
  Rng rng_;
  std::size_t step_ = 0;
  double best_kl_ = std::numeric_limits<double>::infinity();
  std::map<std::string, double> z_running_;
  std::size_t starved_ = 0;
};

}  // namespace gdc
