// Copyright 2026 The gdc Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "gdc/context_distribution.hpp"
#include "gdc/features.hpp"
#include "gdc/model.hpp"

namespace gdc {

enum class TargetForm { pointwise, exponential, hybrid };

std::string_view to_string(TargetForm form);

/// Unnormalized target over sequences:
///
///   log P_c(x) = log a(x|c) + sum_i log phi_i(x,c) + sum_j lambda_j psi_j(x,c)
///
/// where the phi_i are boolean pointwise factors and the psi_j exponential
/// features with coefficients lambda. A target with only factors is
/// "pointwise", with only features "exponential", and with both "hybrid".
/// The base must be frozen. Targets score but never sample.
class EBMTarget final : public PositiveScorer {
 public:
  EBMTarget(std::shared_ptr<const AutoregressiveModel> base, std::vector<Feature> pointwise,
            std::vector<Feature> exponential, std::vector<double> lambda);

  static EBMTarget pointwise(std::shared_ptr<const AutoregressiveModel> base,
                             std::vector<Feature> features);
  static EBMTarget exponential(std::shared_ptr<const AutoregressiveModel> base,
                               std::vector<Feature> features, std::vector<double> lambda);

  TargetForm form() const;
  const AutoregressiveModel& base() const { return *base_; }
  std::shared_ptr<const AutoregressiveModel> base_ptr() const { return base_; }
  const std::vector<Feature>& pointwise_features() const { return pointwise_; }
  const std::vector<Feature>& exponential_features() const { return exponential_; }
  const std::vector<double>& lambda() const { return lambda_; }

  const Vocab& vocab() const override { return base_->vocab(); }
  std::size_t horizon() const override { return base_->horizon(); }

  std::vector<double> log_score(std::span<const Sequence> sequences,
                                const Context& context) const override;

  /// Same as log_score, reusing already computed base log-probabilities.
  std::vector<double> log_score_from_base(std::span<const Sequence> sequences,
                                          std::span<const double> base_log_probs,
                                          const Context& context) const;

  /// Energy term only: log P - log a.
  double log_tilt(const Sequence& sequence, const Context& context) const;

  /// {version, base_model_ref, form, pointwise_features, features, lambda}.
  /// Every feature must come from the registry.
  nlohmann::json to_json(const std::string& base_model_ref) const;
  /// Resolves a relative base_model_ref against `base_dir`; the base is frozen
  /// on load.
  static EBMTarget from_json(const nlohmann::json& j, const std::filesystem::path& base_dir);

 private:
  std::shared_ptr<const AutoregressiveModel> base_;
  std::vector<Feature> pointwise_;
  std::vector<Feature> exponential_;
  std::vector<double> lambda_;
};

struct LambdaFitConfig {
  std::size_t n_iterations = 200;
  std::size_t samples_per_iteration = 1024;
  std::size_t context_sampling_size = 1;
  double learning_rate = 0.5;
  double tolerance = 0.02;
  /// Base samples per context for the closing moment check.
  std::size_t final_check_samples = 32768;
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static LambdaFitConfig from_json(const nlohmann::json& j);
};

struct LambdaFit {
  std::vector<double> lambda;
  /// Infinity-norm of the estimated moment gap at each iteration.
  std::vector<double> gap_norms;
  /// The iterate after each iteration.
  std::vector<std::vector<double>> lambda_trajectory;
  /// Fresh SNIS estimate of the moments at the returned lambda.
  std::vector<double> final_moments;
  double final_gap = 0.0;
};

/// Stochastic gradient descent on lambda using self-normalized importance
/// sampling with the base as proposal. Each iteration draws
/// `context_sampling_size` contexts from `contexts`, fresh base samples for
/// each, and steps lambda <- lambda - lr * (moments - desired). The result is
/// the average of the second half of the iterates, checked against the
/// desired moments on `final_check_samples` fresh samples per context.
///
/// `pointwise` factors, if any, multiply the target (hybrid form).
/// Throws InfeasibleConstraint when |lambda| runs past 50 while the gap is
/// still above tolerance, or when the final gap exceeds tolerance; throws
/// NumericalError when every importance weight in a batch is zero.
LambdaFit fit_lambda(std::shared_ptr<const AutoregressiveModel> base,
                     const ConstraintSpec& spec, const ContextDistribution& contexts,
                     const LambdaFitConfig& cfg, std::span<const Feature> pointwise = {});

struct ConstrainResult {
  EBMTarget target;
  std::optional<LambdaFit> fit;
};

/// Builds the target respecting `spec`. Boolean features with desired moment 1
/// become pointwise factors; every other feature gets a coefficient fitted by
/// fit_lambda.
ConstrainResult constrain(std::shared_ptr<const AutoregressiveModel> base,
                          const ConstraintSpec& spec, const ContextDistribution& contexts,
                          const LambdaFitConfig& cfg);

struct RlhfConfig {
  Feature reward;
  double beta;
};

/// p(x) proportional to a(x) exp(r(x) / beta).
EBMTarget rlhf_target(std::shared_ptr<const AutoregressiveModel> base, const RlhfConfig& cfg);

}  // namespace gdc
