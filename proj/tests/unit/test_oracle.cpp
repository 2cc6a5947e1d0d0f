// Copyright 2026 The gdc Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <limits>
#include <numeric>

#include "doctest.h"
#include "toys.hpp"

#include "gdc/error.hpp"
#include "gdc/oracle.hpp"

using gdc::ContextDistribution;
using gdc::EBMTarget;
using gdc::Feature;
namespace oracle = gdc::oracle;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

EBMTarget l1_tilted(double lambda) {
  const auto base = toys::l1_base();
  return EBMTarget::exponential(base, {toys::is_a(base->vocab(), 1)}, {lambda});
}

Feature constant_one() {
  return Feature("one", gdc::FeatureKind::general, [](const auto&, const auto&) { return 1.0; });
}

}  // namespace

TEST_CASE("enumeration covers the space in order") {
  const auto m = toys::random_model(3, 3, 1);
  const auto expected = toys::all_sequences(m.vocab(), 3);
  CHECK(oracle::space_size(m.vocab(), 3) == 1 + 3 + 9 + 27);
  CHECK(oracle::enumerate(m.vocab(), 3) == expected);
  std::size_t seen = 0;
  oracle::for_each_sequence(m.vocab(), 3, [&](std::span<const gdc::Sequence> chunk) {
    for (const auto& s : chunk) CHECK(s == expected[seen++]);
  });
  CHECK(seen == expected.size());
}

TEST_CASE("space guards") {
  const auto big = toys::random_model(9, 8, 1, 1.0, false, 1);
  CHECK_THROWS_AS(oracle::exact_partition(big, {}), gdc::SpaceTooLarge);
  const auto medium = toys::random_model(4, 10, 1, 1.0, false, 1);
  CHECK_THROWS_AS(oracle::enumerate(medium.vocab(), 10), gdc::SpaceTooLarge);
  CHECK_NOTHROW(oracle::exact_partition(medium, {}));
}

TEST_CASE("partition functions on the one-token toy") {
  CHECK(oracle::exact_partition(l1_tilted(0.0), {}) == doctest::Approx(1.0).epsilon(1e-12));
  const auto base = toys::l1_base();
  const auto pw = EBMTarget::pointwise(base, {toys::is_a(base->vocab(), 1)});
  CHECK(oracle::exact_partition(pw, {}) == doctest::Approx(0.75).epsilon(1e-15));
  CHECK(oracle::exact_partition(l1_tilted(-std::log(3.0)), {}) ==
        doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("exact moments") {
  const auto base = toys::l1_base();
  const ContextDistribution single = ContextDistribution::single();
  const std::vector<Feature> fs = {toys::is_a(base->vocab(), 1), constant_one()};
  const auto m = oracle::exact_moments(*base, fs, single);
  CHECK(m[0] == doctest::Approx(0.75).epsilon(1e-15));
  CHECK(m[1] == doctest::Approx(1.0).epsilon(1e-15));
  const auto half = oracle::exact_moments(l1_tilted(-std::log(3.0)), fs, single);
  CHECK(half[0] == doctest::Approx(0.5).epsilon(1e-14));
}

TEST_CASE("exact divergences") {
  const auto base = toys::l1_base();
  const auto single = ContextDistribution::single();
  const auto p = l1_tilted(-std::log(3.0));
  const auto d = oracle::exact_divergences(p, *base, single);
  const double expected = 0.5 * std::log(0.5 / 0.75) + 0.5 * std::log(0.5 / 0.25);
  CHECK(d.kl == doctest::Approx(expected).epsilon(1e-13));
  CHECK(d.kl == doctest::Approx(0.1438).epsilon(1e-3));
  CHECK(d.tvd == doctest::Approx(0.25).epsilon(1e-14));

  const auto self = oracle::exact_divergences(*base, *base, single);
  CHECK(self.kl == 0.0);
  CHECK(self.tvd == 0.0);

  // a model with no mass on B misses half of p
  const auto only_a = toys::l1_base(1.0);
  CHECK(oracle::exact_kl(p, *only_a, single) == kInf);

  // a pointwise target differs from its base by the violating mass
  const auto pw = EBMTarget::pointwise(base, {toys::is_a(base->vocab(), 1)});
  CHECK(oracle::exact_tvd(pw, *base, single) ==
        doctest::Approx(1.0 - oracle::exact_partition(pw, {})).epsilon(1e-14));
}

TEST_CASE("divergences agree with a plain reference on random models") {
  for (std::uint64_t seed = 1; seed <= 4; ++seed) {
    const auto a = toys::random_model(3, 3, seed);
    const auto b = toys::random_model(3, 3, seed + 100);
    const auto space = toys::all_sequences(a.vocab(), 3);
    const gdc::Context ctx{};
    const auto pa = toys::normalized(a, ctx, space);
    const auto pb = toys::normalized(b, ctx, space);
    const auto d = oracle::exact_divergences(a, b, ContextDistribution::single());
    CHECK(d.kl == doctest::Approx(toys::kl(pa, pb)).epsilon(1e-12));
    CHECK(d.tvd == doctest::Approx(toys::tvd(pa, pb)).epsilon(1e-12));
  }
}

TEST_CASE("exact lambda") {
  const auto base = toys::l1_base();
  const auto single = ContextDistribution::single();
  const Feature a = toys::is_a(base->vocab(), 1);

  const auto at_base = oracle::exact_lambda(*base, {{a}, {0.75}}, single);
  CHECK(std::abs(at_base.lambda[0]) < 1e-9);

  const auto half = oracle::exact_lambda(*base, {{a}, {0.5}}, single);
  CHECK(half.lambda[0] == doctest::Approx(-std::log(3.0)).epsilon(1e-10));
  CHECK(half.gap < 1e-10);

  CHECK_THROWS_AS(oracle::exact_lambda(*base, {{a}, {1.0}}, single), gdc::InfeasibleConstraint);
  const Feature count_a = gdc::make_feature(
      {{"builtin", "count_token"}, {"args", {{"token", "A"}}}}, base->vocab(), 1);
  CHECK_THROWS_AS(oracle::exact_lambda(*base, {{count_a}, {1.5}}, single),
                  gdc::InfeasibleConstraint);
}

TEST_CASE("exact lambda reproduces desired moments on two-feature toys") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto base = std::make_shared<const gdc::AutoregressiveModel>(
        toys::random_model(3, 4, seed).clone(true));
    const auto& v = base->vocab();
    const std::vector<Feature> fs = {
        gdc::make_feature({{"builtin", "contains_token"}, {"args", {{"token", "a"}}}}, v, 4),
        gdc::make_feature({{"builtin", "length_fraction"}}, v, 4)};
    // desired moments from a known tilt, so they are attainable
    const std::vector<double> truth = {0.8, -1.2};
    const EBMTarget tilted(base, {}, fs, truth);
    const auto single = ContextDistribution::single();
    const auto mu = oracle::exact_moments(tilted, fs, single);
    const auto sol = oracle::exact_lambda(*base, {fs, mu}, single);
    CHECK(sol.iterations <= 20);
    CHECK(sol.lambda[0] == doctest::Approx(truth[0]).epsilon(1e-7));
    CHECK(sol.lambda[1] == doctest::Approx(truth[1]).epsilon(1e-7));
    const EBMTarget fitted(base, {}, fs, sol.lambda);
    const auto back = oracle::exact_moments(fitted, fs, single);
    CHECK(std::abs(back[0] - mu[0]) < 1e-9);
    CHECK(std::abs(back[1] - mu[1]) < 1e-9);
  }
}

TEST_CASE("exact lambda handles duplicated features") {
  const auto base = toys::l1_base();
  const Feature a = toys::is_a(base->vocab(), 1);
  const auto sol = oracle::exact_lambda(*base, {{a, a}, {0.5, 0.5}}, ContextDistribution::single());
  CHECK(sol.lambda[0] + sol.lambda[1] == doctest::Approx(-std::log(3.0)).epsilon(1e-8));
}

TEST_CASE("exact QRS law on the one-token toy") {
  const auto base = toys::l1_base();
  const auto p = EBMTarget::exponential(base, {toys::is_a(base->vocab(), 1)},
                                        {std::log(0.25 / 0.75)});  // P = (0.25, 0.25)
  const auto law = oracle::exact_qrs_law(p, *base, 1.0, {});
  CHECK(law.acceptance_rate == doctest::Approx(0.5).epsilon(1e-15));
  // sequences: "", "A", "B"
  CHECK(law.output[1] == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(law.output[2] == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(law.tvd < 1e-15);

  const auto ten = oracle::exact_qrs_law(p, *base, 10.0, {});
  CHECK(ten.acceptance_rate == doctest::Approx(0.05).epsilon(1e-14));
  CHECK(ten.output[1] == doctest::Approx(0.5).epsilon(1e-14));

  const auto tiny = oracle::exact_qrs_law(p, *base, 1e-9, {});
  CHECK(tiny.output[1] == doctest::Approx(0.75).epsilon(1e-12));
  CHECK(tiny.tvd == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("exact QRS fidelity is monotone in beta") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto base = std::make_shared<const gdc::AutoregressiveModel>(
        toys::random_model(3, 3, seed).clone(true));
    const auto proposal = toys::random_model(3, 3, seed + 50, 0.5);
    const EBMTarget target(
        base, {},
        {gdc::make_feature({{"builtin", "count_token"}, {"args", {{"token", "b"}}}},
                           base->vocab(), 3)},
        {1.3});
    double prev_tvd = 1.0;
    double prev_ar = 1.0;
    for (double beta = 0.01; beta < 1e3; beta *= 1.7) {
      const auto law = oracle::exact_qrs_law(target, proposal, beta, {});
      CHECK(law.tvd <= prev_tvd + 1e-15);
      CHECK(law.acceptance_rate <= prev_ar + 1e-15);
      prev_tvd = law.tvd;
      prev_ar = law.acceptance_rate;
    }
    // beyond max P/q the law is exactly p
    const auto past = oracle::exact_qrs_law(target, proposal, 1e9, {});
    CHECK(past.tvd < 1e-9);
  }
}

TEST_CASE("exact DPG gradient is minus the cross-entropy gradient") {
  auto model = toys::random_model(2, 2, 3, 1.0, false, 1);
  const auto base = std::make_shared<const gdc::AutoregressiveModel>(
      toys::random_model(2, 2, 4).clone(true));
  const EBMTarget target(
      base, {},
      {gdc::make_feature({{"builtin", "count_token"}, {"args", {{"token", "a"}}}},
                         base->vocab(), 2)},
      {0.7});
  const auto single = ContextDistribution::single();
  const auto g = oracle::exact_dpg_gradient(target, model, single);

  const auto space = toys::all_sequences(model.vocab(), 2);
  const auto p = toys::normalized(target, {}, space);
  auto ce = [&] {
    const auto logs = model.log_score(space, {});
    double out = 0.0;
    for (std::size_t i = 0; i < space.size(); ++i) out -= p[i] * logs[i];
    return out;
  };
  const double h = 1e-6;
  for (std::size_t i = 0; i < g.size(); ++i) {
    auto params = model.mutable_parameters();
    const double keep = params[i];
    params[i] = keep + h;
    const double up = ce();
    params[i] = keep - h;
    const double down = ce();
    params[i] = keep;
    CHECK(g[i] == doctest::Approx(-(up - down) / (2.0 * h)).epsilon(1e-6));
  }
}
