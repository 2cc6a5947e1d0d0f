// Copyright 2026 The gdc Authors
// SPDX-License-Identifier: Apache-2.0

#include "gdc/tuner.hpp"

#include <cmath>
#include <utility>

#include <fmt/format.h>

#include "gdc/error.hpp"

namespace gdc {
namespace {

constexpr double kZDecay = 0.9;

}  // namespace

std::string_view to_string(ProposalPolicy policy) {
  return policy == ProposalPolicy::on_policy ? "on_policy" : "kl_adaptive";
}

ProposalPolicy proposal_policy_from_string(std::string_view name) {
  if (name == "on_policy") return ProposalPolicy::on_policy;
  if (name == "kl_adaptive") return ProposalPolicy::kl_adaptive;
  throw InvalidArgument(fmt::format("unknown proposal policy '{}'", name));
}

void TunerConfig::validate() const {
  if (n_samples_per_step < 1 || sampling_size < 1 || scoring_size < 1 ||
      context_sampling_size < 1 || kl_eval_samples < 1) {
    throw InvalidArgument("tuner counts must be at least 1");
  }
  if (n_samples_per_step % sampling_size != 0) {
    throw InvalidArgument(fmt::format("n_samples_per_step ({}) is not divisible by sampling_size ({})",
                                      n_samples_per_step, sampling_size));
  }
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw InvalidArgument("tuner learning rate must be positive");
  }
}

nlohmann::json TunerConfig::to_json() const {
  return {{"n_gradient_steps", n_gradient_steps},
          {"n_samples_per_step", n_samples_per_step},
          {"sampling_size", sampling_size},
          {"scoring_size", scoring_size},
          {"context_sampling_size", context_sampling_size},
          {"learning_rate", learning_rate},
          {"proposal_policy", std::string(to_string(proposal_policy))},
          {"kl_eval_samples", kl_eval_samples},
          {"seed", seed}};
}

TunerConfig TunerConfig::from_json(const nlohmann::json& j) {
  TunerConfig c;
  c.n_gradient_steps = j.value("n_gradient_steps", c.n_gradient_steps);
  c.n_samples_per_step = j.value("n_samples_per_step", c.n_samples_per_step);
  c.sampling_size = j.value("sampling_size", c.sampling_size);
  c.scoring_size = j.value("scoring_size", c.scoring_size);
  c.context_sampling_size = j.value("context_sampling_size", c.context_sampling_size);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  if (j.contains("proposal_policy")) {
    c.proposal_policy = proposal_policy_from_string(j.at("proposal_policy").get<std::string>());
  }
  c.kl_eval_samples = j.value("kl_eval_samples", c.kl_eval_samples);
  c.seed = j.value("seed", c.seed);
  return c;
}

DpgGradient dpg_gradient(const AutoregressiveModel& model,
                         std::span<const ContextBatch> batches) {
  DpgGradient out;
  out.gradient.assign(model.parameter_count(), 0.0);
  std::size_t total = 0;
  for (const auto& b : batches) total += b.sequences.size();
  std::vector<double> log_w;
  for (const auto& b : batches) {
    const std::size_t n = b.sequences.size();
    if (b.target_log.size() != n || b.proposal_log.size() != n) {
      throw InvalidArgument("dpg_gradient: batch scores do not match its sequences");
    }
    log_w.resize(n);
    for (std::size_t i = 0; i < n; ++i) log_w[i] = b.target_log[i] - b.proposal_log[i];
    out.weights.push_back(snis_weights(log_w));
    const SnisWeights& w = out.weights.back();
    if (w.starved()) {
      ++out.starved;
      continue;
    }
    const double share = static_cast<double>(n) / static_cast<double>(total);
    for (std::size_t i = 0; i < n; ++i) {
      if (w.normalized[i] == 0.0) continue;
      model.accumulate_grad_log_score(b.sequences[i], b.context, share * w.normalized[i],
                                      out.gradient);
    }
  }
  return out;
}

Tuner::Tuner(AutoregressiveModel model, EBMTarget target, ContextDistribution contexts,
             TunerConfig cfg)
    : model_(std::move(model)),
      proposal_(model_.clone(true)),
      target_(std::move(target)),
      contexts_(std::move(contexts)),
      cfg_(cfg),
      rng_(cfg.seed) {
  cfg_.validate();
  if (model_.frozen()) throw InvalidArgument("the tuned model must not be frozen");
  if (model_.kind() != ModelKind::softmax_parametric) {
    throw InvalidArgument("only softmax models can be tuned");
  }
  if (!(model_.vocab() == target_.vocab()) || model_.horizon() != target_.horizon()) {
    throw InvalidArgument("model and target disagree on vocabulary or horizon");
  }
}

void Tuner::score(ContextBatch& b) const {
  const std::size_t n = b.sequences.size();
  b.base_log.resize(n);
  b.target_log.resize(n);
  b.model_log.resize(n);
  for (std::size_t lo = 0; lo < n; lo += cfg_.scoring_size) {
    const std::size_t len = std::min(cfg_.scoring_size, n - lo);
    const std::span<const Sequence> chunk(b.sequences.data() + lo, len);
    const auto base = target_.base().log_score(chunk, b.context);
    const auto target = target_.log_score_from_base(chunk, base, b.context);
    const auto model = model_.log_score(chunk, b.context);
    std::copy(base.begin(), base.end(), b.base_log.begin() + static_cast<std::ptrdiff_t>(lo));
    std::copy(target.begin(), target.end(), b.target_log.begin() + static_cast<std::ptrdiff_t>(lo));
    std::copy(model.begin(), model.end(), b.model_log.begin() + static_cast<std::ptrdiff_t>(lo));
  }
}

std::vector<ContextBatch> Tuner::draw_batch() {
  std::vector<Context> drawn;
  drawn.reserve(cfg_.context_sampling_size);
  for (std::size_t i = 0; i < cfg_.context_sampling_size; ++i) drawn.push_back(contexts_.draw(rng_));

  std::vector<ContextBatch> batches;
  const std::size_t micro = cfg_.n_samples_per_step / cfg_.sampling_size;
  for (std::size_t j = 0; j < micro; ++j) {
    const Context& ctx = drawn[j % drawn.size()];
    auto it = std::find_if(batches.begin(), batches.end(),
                           [&](const ContextBatch& b) { return b.context == ctx; });
    if (it == batches.end()) {
      batches.push_back(ContextBatch{ctx, {}, {}, {}, {}, {}});
      it = batches.end() - 1;
    }
    for (auto& s : proposal_.sample(ctx, cfg_.sampling_size, rng_)) {
      it->proposal_log.push_back(s.log_prob);
      it->sequences.push_back(std::move(s.sequence));
    }
  }
  for (auto& b : batches) score(b);
  return batches;
}

StepMetrics Tuner::step(Logger* logger) {
  if (cfg_.proposal_policy == ProposalPolicy::on_policy) proposal_ = model_.clone(true);

  const auto batches = draw_batch();
  DpgGradient g = dpg_gradient(model_, batches);
  starved_ += g.starved;

  StepMetrics m;
  m.step = step_;
  m.proposal_refreshed = cfg_.proposal_policy == ProposalPolicy::on_policy;

  std::vector<Feature> features = target_.pointwise_features();
  features.insert(features.end(), target_.exponential_features().begin(),
                  target_.exponential_features().end());
  std::vector<double> moments(features.size(), 0.0);

  double total = 0.0;
  for (const auto& b : batches) total += static_cast<double>(b.sequences.size());

  double kl = 0.0;
  double kl_weight = 0.0;
  double kl_base = 0.0;
  double z = 0.0;
  double z_weight = 0.0;
  std::vector<double> column;
  for (std::size_t k = 0; k < batches.size(); ++k) {
    const ContextBatch& b = batches[k];
    const double share = static_cast<double>(b.sequences.size()) / total;

    const Estimate e = kl_target_model_from_batch(b.target_log, b.proposal_log, b.model_log);
    if (e.valid) {
      kl += share * e.value;
      kl_weight += share;
    }

    const SnisWeights& w = g.weights[k];
    if (!w.starved()) {
      const double z_now = std::exp(w.log_partition());
      auto [it, inserted] = z_running_.try_emplace(b.context.text, z_now);
      if (!inserted) it->second = kZDecay * it->second + (1.0 - kZDecay) * z_now;
      z += share * it->second;
      z_weight += share;
    }

    // The model's own moments and divergence from the base, reweighted pi / q.
    std::vector<double> log_v(b.sequences.size());
    for (std::size_t i = 0; i < log_v.size(); ++i) log_v[i] = b.model_log[i] - b.proposal_log[i];
    const SnisWeights v = snis_weights(log_v);
    kl_base += share * kl_model_base_from_batch(b.model_log, b.proposal_log, b.base_log).value;
    const FeatureMatrix fm = batch_evaluate(features, b.sequences, b.context);
    column.resize(b.sequences.size());
    for (std::size_t j = 0; j < features.size(); ++j) {
      for (std::size_t i = 0; i < column.size(); ++i) column[i] = fm(i, j);
      moments[j] += share * snis_mean(v, column).value;
    }
  }
  m.kl_target_model = kl_weight > 0.0 ? kl / kl_weight : std::numeric_limits<double>::infinity();
  m.kl_model_base = kl_base;
  m.z_estimate = z_weight > 0.0 ? z / z_weight : 0.0;
  for (std::size_t j = 0; j < features.size(); ++j) {
    m.feature_moments.emplace_back(features[j].name(), moments[j]);
  }

  model_.apply_update(cfg_.learning_rate, g.gradient);
  for (double p : model_.parameters()) {
    if (!std::isfinite(p)) {
      throw NumericalError(fmt::format("step {}: non-finite parameter after update", step_));
    }
  }
  ++step_;

  if (cfg_.proposal_policy == ProposalPolicy::kl_adaptive) {
    m.proposal_refreshed = update_proposal_if_improved();
  }
  if (logger != nullptr) logger->log(m);
  return m;
}

std::vector<StepMetrics> Tuner::tune(Logger* logger, const StepCallback& callback) {
  std::vector<StepMetrics> history;
  while (step_ < cfg_.n_gradient_steps) {
    history.push_back(step(logger));
    if (callback) callback(*this, history.back());
  }
  return history;
}

bool Tuner::update_proposal_if_improved() {
  const Estimate e =
      estimate_kl_target_model(target_, model_, proposal_, contexts_, cfg_.kl_eval_samples, rng_);
  if (!e.valid) return false;
  if (std::isinf(best_kl_) || e.value < best_kl_ - e.std_error) {
    proposal_ = model_.clone(true);
    best_kl_ = e.value;
    return true;
  }
  return false;
}

}  // namespace gdc
