// Copyright 2026 The gdc Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "gdc/context_distribution.hpp"
#include "gdc/features.hpp"
#include "gdc/model.hpp"
#include "gdc/snis.hpp"

namespace gdc {

// ---------------------------------------------------------------------------
// Estimators

/// log P - log pi contributions are clamped to this magnitude before weighting.
inline constexpr double kLogRatioClamp = 1e6;

/// KL(p || pi) from one batch drawn from a proposal q:
///   sum_i wbar_i (log P_i - log pi_i) - log Zhat,   w_i = P_i / q_i.
/// The standard error accounts for the randomness of Zhat.
Estimate kl_target_model_from_batch(std::span<const double> target_log,
                                    std::span<const double> proposal_log,
                                    std::span<const double> model_log);

/// KL(pi || a) from one batch drawn from q, with weights pi / q.
Estimate kl_model_base_from_batch(std::span<const double> model_log,
                                  std::span<const double> proposal_log,
                                  std::span<const double> base_log);

/// SNIS estimate of KL(p || model), using `n` proposal samples per context and
/// the tau weights to combine contexts.
Estimate estimate_kl_target_model(const PositiveScorer& target, const PositiveScorer& model,
                                  const AutoregressiveModel& proposal,
                                  const ContextDistribution& contexts, std::size_t n, Rng& rng);

/// SNIS estimates of E_{c~tau} E_{x~p_c} f(x, c), `n` proposal samples per context.
std::vector<Estimate> estimate_feature_moments(const PositiveScorer& target,
                                               std::span<const Feature> features,
                                               const AutoregressiveModel& proposal,
                                               const ContextDistribution& contexts,
                                               std::size_t n, Rng& rng);

// ---------------------------------------------------------------------------
// Step metrics

struct AcceptanceDiag {
  double beta = 0.0;
  double acceptance_rate = 0.0;
};

struct StepMetrics {
  std::size_t step = 0;
  double kl_target_model = 0.0;
  double kl_model_base = 0.0;
  double z_estimate = 0.0;
  std::vector<std::pair<std::string, double>> feature_moments;
  bool proposal_refreshed = false;
  std::optional<AcceptanceDiag> acceptance_diag;
  /// Keys this version does not know; preserved on read and written back.
  nlohmann::ordered_json extra = nlohmann::ordered_json::object();

  /// Non-finite reals are written as the strings "inf", "-inf" or "nan".
  nlohmann::ordered_json to_json() const;
  static StepMetrics from_json(const nlohmann::ordered_json& j);

  bool operator==(const StepMetrics& other) const;
};

std::vector<StepMetrics> read_jsonl(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Loggers

class Logger {
 public:
  virtual ~Logger() = default;
  virtual void log(const StepMetrics& metrics) = 0;
};

/// One human-readable line per step.
class ConsoleLogger final : public Logger {
 public:
  explicit ConsoleLogger(std::ostream& out) : out_(out) {}
  void log(const StepMetrics& metrics) override;

 private:
  std::ostream& out_;
};

/// One JSON object per line, flushed after every write. The file is truncated
/// on construction.
class JsonlLogger final : public Logger {
 public:
  explicit JsonlLogger(const std::filesystem::path& path);
  void log(const StepMetrics& metrics) override;

 private:
  std::filesystem::path path_;
  std::ofstream out_;
};

/// Forwards the same payload to every attached logger, in order.
class MultiLogger final : public Logger {
 public:
  void attach(std::shared_ptr<Logger> logger) { loggers_.push_back(std::move(logger)); }
  void log(const StepMetrics& metrics) override;

 private:
  std::vector<std::shared_ptr<Logger>> loggers_;
};

}  // namespace gdc
