// Copyright 2026 The gdc Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "toys.hpp"

#include "gdc/error.hpp"
#include "gdc/oracle.hpp"
#include "gdc/tuner.hpp"

using gdc::ContextDistribution;
using gdc::EBMTarget;
using gdc::ProposalPolicy;
using gdc::Tuner;
using gdc::TunerConfig;
namespace oracle = gdc::oracle;

namespace {

std::shared_ptr<const gdc::AutoregressiveModel> frozen_base(std::uint64_t seed) {
  return std::make_shared<const gdc::AutoregressiveModel>(
      toys::random_model(3, 3, seed).clone(true));
}

gdc::Feature count_b(const gdc::AutoregressiveModel& m) {
  return gdc::make_feature({{"builtin", "count_token"}, {"args", {{"token", "b"}}}}, m.vocab(),
                           m.horizon());
}

gdc::Feature has_c(const gdc::AutoregressiveModel& m) {
  return gdc::make_feature({{"builtin", "contains_token"}, {"args", {{"token", "c"}}}}, m.vocab(),
                           m.horizon());
}

TunerConfig small_config(std::size_t steps) {
  TunerConfig cfg;
  cfg.n_gradient_steps = steps;
  cfg.n_samples_per_step = 256;
  cfg.sampling_size = 64;
  cfg.scoring_size = 100;
  cfg.seed = 5;
  return cfg;
}

void copy_parameters(const gdc::AutoregressiveModel& from, gdc::AutoregressiveModel& to) {
  const auto src = from.parameters();
  auto dst = to.mutable_parameters();
  REQUIRE(src.size() == dst.size());
  std::copy(src.begin(), src.end(), dst.begin());
}

}  // namespace

TEST_CASE("tuner config validation and JSON") {
  TunerConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.sampling_size = 300;
  CHECK_THROWS_AS(cfg.validate(), gdc::InvalidArgument);
  cfg = {};
  cfg.learning_rate = 0.0;
  CHECK_THROWS_AS(cfg.validate(), gdc::InvalidArgument);
  cfg = {};
  cfg.context_sampling_size = 0;
  CHECK_THROWS_AS(cfg.validate(), gdc::InvalidArgument);

  cfg = small_config(7);
  cfg.proposal_policy = ProposalPolicy::kl_adaptive;
  cfg.learning_rate = 0.37;
  const auto back = TunerConfig::from_json(nlohmann::json::parse(cfg.to_json().dump()));
  CHECK(back.to_json() == cfg.to_json());
  CHECK(back.proposal_policy == ProposalPolicy::kl_adaptive);
  CHECK(gdc::proposal_policy_from_string("on_policy") == ProposalPolicy::on_policy);
  CHECK_THROWS_AS(gdc::proposal_policy_from_string("sometimes"), gdc::InvalidArgument);
}

TEST_CASE("tuner construction is validated") {
  const auto base = frozen_base(1);
  const auto target = EBMTarget::pointwise(base, {has_c(*base)});
  const auto single = ContextDistribution::single();
  CHECK_THROWS_AS(Tuner(base->clone(true), target, single, small_config(1)), gdc::InvalidArgument);
  CHECK_THROWS_AS(Tuner(toys::random_model(3, 4, 2), target, single, small_config(1)),
                  gdc::InvalidArgument);
  CHECK_THROWS_AS(Tuner(toys::l1_base()->clone(false), target, single, small_config(1)),
                  gdc::InvalidArgument);
}

TEST_CASE("a zero-step run leaves the model bit-identical") {
  const auto base = frozen_base(3);
  const auto start = toys::random_model(3, 3, 4);
  Tuner t(start, EBMTarget::pointwise(base, {has_c(*base)}), ContextDistribution::single(),
          small_config(0));
  CHECK(t.tune().empty());
  CHECK(t.steps_taken() == 0);
  const auto a = t.model().parameters();
  const auto b = start.parameters();
  CHECK(std::equal(a.begin(), a.end(), b.begin(), b.end()));
}

TEST_CASE("self-normalized weights average to one in every batch") {
  const auto base = frozen_base(5);
  const auto target = EBMTarget::exponential(base, {count_b(*base)}, {1.1});
  auto cfg = small_config(1);
  cfg.context_sampling_size = 2;
  Tuner t(toys::random_model(3, 3, 6, 1.0, true), target,
          ContextDistribution::uniform({"a", "b c", "c"}), cfg);
  const auto batches = t.draw_batch();
  std::size_t total = 0;
  for (const auto& b : batches) total += b.sequences.size();
  CHECK(total == cfg.n_samples_per_step);
  const auto g = gdc::dpg_gradient(t.model(), batches);
  REQUIRE(g.weights.size() == batches.size());
  for (const auto& w : g.weights) {
    const double n = static_cast<double>(w.normalized.size());
    double mean = 0.0;
    for (double v : w.normalized) mean += v * n;
    CHECK(std::abs(mean / n - 1.0) < 1e-12);
  }
  CHECK(g.starved == 0);
}

TEST_CASE("pointwise violators get zero weight") {
  const auto base = frozen_base(7);
  const auto c = has_c(*base);
  Tuner t(toys::random_model(3, 3, 8), EBMTarget::pointwise(base, {c}),
          ContextDistribution::single(), small_config(1));
  const auto batches = t.draw_batch();
  const auto g = gdc::dpg_gradient(t.model(), batches);
  std::size_t violators = 0;
  for (std::size_t k = 0; k < batches.size(); ++k) {
    for (std::size_t i = 0; i < batches[k].sequences.size(); ++i) {
      if (c.evaluate(batches[k].sequences[i], {}) == 0.0) {
        ++violators;
        CHECK(g.weights[k].normalized[i] == 0.0);
      }
    }
  }
  CHECK(violators > 0);
}

TEST_CASE("the sampled gradient vanishes at the optimum") {
  const auto base = frozen_base(9);
  const auto target = EBMTarget::exponential(base, {count_b(*base)}, {0.0});
  auto at_target = toys::random_model(3, 3, 10);
  copy_parameters(*base, at_target);
  auto cfg = small_config(1);
  cfg.n_samples_per_step = 100'000;
  cfg.sampling_size = 1000;
  cfg.scoring_size = 4096;
  Tuner t(at_target, target, ContextDistribution::single(), cfg);
  const auto g = gdc::dpg_gradient(t.model(), t.draw_batch());
  double worst = 0.0;
  for (double v : g.gradient) worst = std::max(worst, std::abs(v));
  CHECK(worst < 0.02);

  const auto exact = oracle::exact_dpg_gradient(target, at_target, ContextDistribution::single());
  for (double v : exact) CHECK(std::abs(v) < 1e-12);
}

TEST_CASE("on-policy tuning refreshes the proposal every step") {
  const auto base = frozen_base(11);
  Tuner t(toys::random_model(3, 3, 12), EBMTarget::exponential(base, {count_b(*base)}, {0.6}),
          ContextDistribution::single(), small_config(3));
  std::size_t seen = 0;
  const auto history = t.tune(nullptr, [&](const Tuner& tuner, const gdc::StepMetrics& m) {
    CHECK(m.step == seen++);
    CHECK(m.proposal_refreshed);
    CHECK(tuner.steps_taken() == seen);
  });
  CHECK(history.size() == 3);
  for (const auto& [ctx, z] : t.z_estimates()) {
    CHECK(std::isfinite(z));
    CHECK(z > 0.0);
  }
  // the proposal is the pre-update snapshot of the last step
  const auto q = t.proposal().parameters();
  const auto pi = t.model().parameters();
  CHECK_FALSE(std::equal(q.begin(), q.end(), pi.begin(), pi.end()));
  CHECK(t.proposal().frozen());
}

TEST_CASE("KL-adaptive refresh needs a confident improvement") {
  const auto base = frozen_base(13);
  const auto target = EBMTarget::exponential(base, {count_b(*base)}, {0.0});
  auto cfg = small_config(1);
  cfg.proposal_policy = ProposalPolicy::kl_adaptive;
  cfg.kl_eval_samples = 20'000;
  Tuner t(toys::random_model(3, 3, 14, 0.5), target, ContextDistribution::single(), cfg);

  CHECK(t.update_proposal_if_improved());  // first call
  const double first = t.best_kl_estimate();
  CHECK(std::isfinite(first));
  CHECK_FALSE(t.update_proposal_if_improved());  // nothing changed
  CHECK(t.best_kl_estimate() == first);

  copy_parameters(*base, t.mutable_model());
  CHECK(t.update_proposal_if_improved());
  CHECK(std::abs(t.best_kl_estimate()) < 0.05);
  const auto q = t.proposal().parameters();
  const auto b = base->parameters();
  CHECK(std::equal(q.begin(), q.end(), b.begin(), b.end()));
}

TEST_CASE("tuning moves the model toward the target") {
  const auto base = frozen_base(15);
  const auto target = EBMTarget::exponential(base, {count_b(*base)}, {1.5});
  const auto single = ContextDistribution::single();
  const auto start = base->clone(false);
  auto cfg = small_config(60);
  cfg.learning_rate = 0.5;
  Tuner t(start, target, single, cfg);
  const double before = oracle::exact_kl(target, t.model(), single);
  t.tune();
  const double after = oracle::exact_kl(target, t.model(), single);
  CHECK(after < 0.5 * before);
}

TEST_CASE("step metrics describe the model before its update") {
  const auto base = frozen_base(17);
  const auto target = EBMTarget::exponential(base, {count_b(*base)}, {0.9});
  const auto single = ContextDistribution::single();
  auto cfg = small_config(1);
  cfg.n_samples_per_step = 50'000;
  cfg.sampling_size = 1000;
  cfg.scoring_size = 4096;
  const auto start = toys::random_model(3, 3, 18, 0.5);
  Tuner t(start, target, single, cfg);
  const auto m = t.step();
  const double exact_kl = oracle::exact_kl(target, start, single);
  const double exact_base = oracle::exact_kl(start, *base, single);
  CHECK(std::abs(m.kl_target_model - exact_kl) < 0.05);
  CHECK(std::abs(m.kl_model_base - exact_base) < 0.05);
  CHECK(m.z_estimate == doctest::Approx(oracle::exact_partition(target, {})).epsilon(0.03));
  REQUIRE(m.feature_moments.size() == 1);
  const std::vector<gdc::Feature> fs = {count_b(*base)};
  const auto mu = oracle::exact_moments(start, fs, single);
  CHECK(std::abs(m.feature_moments[0].second - mu[0]) < 0.03);
}
