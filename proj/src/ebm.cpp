// Copyright 2026 The gdc Authors
// SPDX-License-Identifier: Apache-2.0

#include "gdc/ebm.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include "gdc/error.hpp"
#include "gdc/kernels.hpp"
#include "gdc/snis.hpp"

namespace gdc {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr double kLambdaDivergence = 50.0;

double inf_norm(std::span<const double> v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

}  // namespace

std::string_view to_string(TargetForm form) {
  switch (form) {
    case TargetForm::pointwise:
      return "pointwise";
    case TargetForm::exponential:
      return "exponential";
    case TargetForm::hybrid:
      return "hybrid";
  }
  return "exponential";
}

// ---------------------------------------------------------------------------
// EBMTarget

EBMTarget::EBMTarget(std::shared_ptr<const AutoregressiveModel> base,
                     std::vector<Feature> pointwise, std::vector<Feature> exponential,
                     std::vector<double> lambda)
    : base_(std::move(base)),
      pointwise_(std::move(pointwise)),
      exponential_(std::move(exponential)),
      lambda_(std::move(lambda)) {
  if (!base_) throw InvalidArgument("target needs a base model");
  if (!base_->frozen()) throw InvalidArgument("target base model must be frozen");
  if (exponential_.size() != lambda_.size()) {
    throw InvalidArgument("one coefficient per exponential feature is required");
  }
  for (const auto& f : pointwise_) {
    if (f.kind() != FeatureKind::boolean) {
      throw InvalidArgument("pointwise factor '" + f.name() + "' is not boolean");
    }
  }
  for (double l : lambda_) {
    if (!std::isfinite(l)) throw InvalidArgument("target coefficients must be finite");
  }
}

EBMTarget EBMTarget::pointwise(std::shared_ptr<const AutoregressiveModel> base,
                               std::vector<Feature> features) {
  return EBMTarget(std::move(base), std::move(features), {}, {});
}

EBMTarget EBMTarget::exponential(std::shared_ptr<const AutoregressiveModel> base,
                                 std::vector<Feature> features, std::vector<double> lambda) {
  return EBMTarget(std::move(base), {}, std::move(features), std::move(lambda));
}

TargetForm EBMTarget::form() const {
  if (exponential_.empty()) return TargetForm::pointwise;
  if (pointwise_.empty()) return TargetForm::exponential;
  return TargetForm::hybrid;
}

double EBMTarget::log_tilt(const Sequence& sequence, const Context& context) const {
  for (const auto& f : pointwise_) {
    if (f.evaluate(sequence, context) == 0.0) return kNegInf;
  }
  double tilt = 0.0;
  for (std::size_t j = 0; j < exponential_.size(); ++j) {
    tilt += lambda_[j] * exponential_[j].evaluate(sequence, context);
  }
  return tilt;
}

std::vector<double> EBMTarget::log_score(std::span<const Sequence> sequences,
                                         const Context& context) const {
  const auto base_scores = base_->log_score(sequences, context);
  return log_score_from_base(sequences, base_scores, context);
}

std::vector<double> EBMTarget::log_score_from_base(std::span<const Sequence> sequences,
                                                   std::span<const double> base_log_probs,
                                                   const Context& context) const {
  if (sequences.size() != base_log_probs.size()) {
    throw InvalidArgument("log_score_from_base: length mismatch");
  }
  std::vector<double> out(sequences.size());
  for (std::size_t i = 0; i < sequences.size(); ++i) {
    const double base = base_log_probs[i];
    out[i] = base == kNegInf ? kNegInf : base + log_tilt(sequences[i], context);
  }
  return out;
}

nlohmann::json EBMTarget::to_json(const std::string& base_model_ref) const {
  auto specs = [](const std::vector<Feature>& features) {
    nlohmann::json out = nlohmann::json::array();
    for (const auto& f : features) {
      if (f.spec().is_null()) {
        throw InvalidArgument("feature '" + f.name() + "' is not from the registry");
      }
      out.push_back(f.spec());
    }
    return out;
  };
  return {
      {"version", 1},
      {"base_model_ref", base_model_ref},
      {"form", std::string(to_string(form()))},
      {"pointwise_features", specs(pointwise_)},
      {"features", specs(exponential_)},
      {"lambda", lambda_},
  };
}

EBMTarget EBMTarget::from_json(const nlohmann::json& j, const std::filesystem::path& base_dir) {
  try {
    std::filesystem::path ref = j.at("base_model_ref").get<std::string>();
    if (ref.is_relative()) ref = base_dir / ref;
    std::ifstream in(ref);
    if (!in) throw ConfigError("cannot open base model: " + ref.string());
    const auto base = std::make_shared<const AutoregressiveModel>(
        AutoregressiveModel::from_json(nlohmann::json::parse(in)).clone(true));
    std::vector<Feature> pointwise;
    for (const auto& spec : j.value("pointwise_features", nlohmann::json::array())) {
      pointwise.push_back(make_feature(spec, base->vocab(), base->horizon()));
    }
    std::vector<Feature> exponential;
    for (const auto& spec : j.value("features", nlohmann::json::array())) {
      exponential.push_back(make_feature(spec, base->vocab(), base->horizon()));
    }
    auto lambda = j.value("lambda", std::vector<double>{});
    return EBMTarget(base, std::move(pointwise), std::move(exponential), std::move(lambda));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed target document: ") + e.what());
  } catch (const InvalidArgument& e) {
    throw ConfigError(std::string("invalid target document: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Coefficient fitting

void LambdaFitConfig::validate() const {
  if (n_iterations < 1 || samples_per_iteration < 1 || context_sampling_size < 1) {
    throw InvalidArgument("lambda fit counts must be at least 1");
  }
  if (!(learning_rate > 0.0)) throw InvalidArgument("lambda fit learning rate must be positive");
  if (!(tolerance > 0.0)) throw InvalidArgument("lambda fit tolerance must be positive");
  if (final_check_samples < 1) throw InvalidArgument("final_check_samples must be at least 1");
}

nlohmann::json LambdaFitConfig::to_json() const {
  return {{"n_iterations", n_iterations},
          {"samples_per_iteration", samples_per_iteration},
          {"context_sampling_size", context_sampling_size},
          {"learning_rate", learning_rate},
          {"tolerance", tolerance},
          {"final_check_samples", final_check_samples},
          {"seed", seed}};
}

LambdaFitConfig LambdaFitConfig::from_json(const nlohmann::json& j) {
  LambdaFitConfig c;
  c.n_iterations = j.value("n_iterations", c.n_iterations);
  c.samples_per_iteration = j.value("samples_per_iteration", c.samples_per_iteration);
  c.context_sampling_size = j.value("context_sampling_size", c.context_sampling_size);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.tolerance = j.value("tolerance", c.tolerance);
  c.final_check_samples = j.value("final_check_samples", c.final_check_samples);
  c.seed = j.value("seed", c.seed);
  return c;
}

namespace {

class MomentEstimator {
 public:
  MomentEstimator(const AutoregressiveModel& base, const ConstraintSpec& spec,
                  std::span<const Feature> pointwise)
      : base_(base), spec_(spec), pointwise_(pointwise) {}

  /// SNIS moments of the tilted target in `context` from `n` base samples.
  std::vector<double> operator()(std::span<const double> lambda, const Context& context,
                                 std::size_t n, Rng& rng) const {
    const auto drawn = base_.sample(context, n, rng);
    std::vector<Sequence> seqs;
    seqs.reserve(drawn.size());
    for (const auto& s : drawn) seqs.push_back(s.sequence);

    const FeatureMatrix phi = batch_evaluate(spec_.features, seqs, context);
    const FeatureMatrix factors = batch_evaluate(pointwise_, seqs, context);
    std::vector<double> log_w(n);
    for (std::size_t i = 0; i < n; ++i) {
      bool rejected = false;
      for (std::size_t k = 0; k < factors.cols; ++k) rejected |= factors(i, k) == 0.0;
      log_w[i] = rejected ? kNegInf : kernels::dot(lambda, phi.row(i));
    }
    const SnisWeights w = snis_weights(log_w);
    if (w.starved()) throw NumericalError(starvation_message(factors, context));

    std::vector<double> moments(phi.cols);
    std::vector<double> column(n);
    for (std::size_t j = 0; j < phi.cols; ++j) {
      for (std::size_t i = 0; i < n; ++i) column[i] = phi(i, j);
      moments[j] = kernels::weighted_sum(w.normalized, column);
    }
    return moments;
  }

 private:
  std::string starvation_message(const FeatureMatrix& factors, const Context& context) const {
    std::size_t worst = 0;
    std::size_t worst_zeros = 0;
    for (std::size_t k = 0; k < factors.cols; ++k) {
      std::size_t zeros = 0;
      for (std::size_t i = 0; i < factors.rows; ++i) zeros += factors(i, k) == 0.0;
      if (zeros > worst_zeros) {
        worst_zeros = zeros;
        worst = k;
      }
    }
    std::string name = factors.cols > 0 ? pointwise_[worst].name() : std::string("<none>");
    return "all importance weights are zero in context '" + context.text +
           "'; starving feature: " + name;
  }

  const AutoregressiveModel& base_;
  const ConstraintSpec& spec_;
  std::span<const Feature> pointwise_;
};

}  // namespace

LambdaFit fit_lambda(std::shared_ptr<const AutoregressiveModel> base, const ConstraintSpec& spec,
                     const ContextDistribution& contexts, const LambdaFitConfig& cfg,
                     std::span<const Feature> pointwise) {
  cfg.validate();
  spec.validate();
  if (!base || !base->frozen()) throw InvalidArgument("fit_lambda needs a frozen base model");

  const std::size_t k = spec.features.size();
  const MomentEstimator estimate(*base, spec, pointwise);
  Rng rng(cfg.seed);
  LambdaFit fit;
  fit.lambda.assign(k, 0.0);
  std::vector<double> iterate(k, 0.0);
  std::vector<double> gap(k);
  // The returned coefficients average the iterates of the second half.
  const std::size_t average_from = cfg.n_iterations / 2;

  for (std::size_t it = 0; it < cfg.n_iterations; ++it) {
    std::vector<double> moments(k, 0.0);
    for (std::size_t d = 0; d < cfg.context_sampling_size; ++d) {
      const Context& c = contexts.draw(rng);
      const auto m = estimate(iterate, c, cfg.samples_per_iteration, rng);
      kernels::axpy(1.0 / static_cast<double>(cfg.context_sampling_size), m, moments);
    }
    for (std::size_t j = 0; j < k; ++j) gap[j] = moments[j] - spec.moments[j];
    const double gap_norm = inf_norm(gap);
    fit.gap_norms.push_back(gap_norm);
    kernels::axpy(-cfg.learning_rate, gap, iterate);
    fit.lambda_trajectory.push_back(iterate);
    if (it >= average_from) {
      const double count = static_cast<double>(it - average_from + 1);
      for (std::size_t j = 0; j < k; ++j) fit.lambda[j] += (iterate[j] - fit.lambda[j]) / count;
    }

    for (double l : iterate) {
      if (!std::isfinite(l)) {
        throw NumericalError("lambda became non-finite at iteration " + std::to_string(it));
      }
    }
    if (inf_norm(iterate) > kLambdaDivergence && gap_norm > cfg.tolerance) {
      throw InfeasibleConstraint("coefficients diverged (|lambda| > 50) at iteration " +
                                 std::to_string(it) + " with moment gap " +
                                 std::to_string(gap_norm) + "; desired moments are unattainable");
    }
  }

  fit.final_moments.assign(k, 0.0);
  for (const auto& entry : contexts.entries()) {
    if (entry.weight == 0.0) continue;
    const auto m = estimate(fit.lambda, entry.context, cfg.final_check_samples, rng);
    kernels::axpy(entry.weight, m, fit.final_moments);
  }
  for (std::size_t j = 0; j < k; ++j) gap[j] = fit.final_moments[j] - spec.moments[j];
  fit.final_gap = inf_norm(gap);
  if (fit.final_gap > cfg.tolerance) {
    throw InfeasibleConstraint("coefficient fit did not converge: moment gap " +
                               std::to_string(fit.final_gap) + " exceeds tolerance " +
                               std::to_string(cfg.tolerance) + " after " +
                               std::to_string(cfg.n_iterations) + " iterations");
  }
  return fit;
}

ConstrainResult constrain(std::shared_ptr<const AutoregressiveModel> base,
                          const ConstraintSpec& spec, const ContextDistribution& contexts,
                          const LambdaFitConfig& cfg) {
  spec.validate();
  if (!base || !base->frozen()) throw InvalidArgument("constrain needs a frozen base model");

  std::vector<Feature> pointwise;
  ConstraintSpec distributional;
  for (std::size_t i = 0; i < spec.features.size(); ++i) {
    if (spec.features[i].kind() == FeatureKind::boolean && spec.moments[i] == 1.0) {
      pointwise.push_back(spec.features[i]);
    } else {
      distributional.features.push_back(spec.features[i]);
      distributional.moments.push_back(spec.moments[i]);
    }
  }
  if (distributional.features.empty()) {
    return {EBMTarget::pointwise(std::move(base), std::move(pointwise)), std::nullopt};
  }
  LambdaFit fit = fit_lambda(base, distributional, contexts, cfg, pointwise);
  EBMTarget target(std::move(base), std::move(pointwise), distributional.features, fit.lambda);
  return {std::move(target), std::move(fit)};
}

EBMTarget rlhf_target(std::shared_ptr<const AutoregressiveModel> base, const RlhfConfig& cfg) {
  if (!(cfg.beta > 0.0) || !std::isfinite(cfg.beta)) {
    throw InvalidArgument("RLHF temperature must be positive and finite");
  }
  return EBMTarget::exponential(std::move(base), {cfg.reward}, {1.0 / cfg.beta});
}

}  // namespace gdc
