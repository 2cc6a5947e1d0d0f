// Copyright 2026 The gdc Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <limits>
#include <map>

#include "doctest.h"
#include "toys.hpp"

#include "gdc/error.hpp"

using gdc::AutoregressiveModel;
using gdc::Context;
using gdc::Sequence;
using gdc::Vocab;

TEST_CASE("vocab tokenizes by greedy longest match") {
  const Vocab v({"a", "ab", "b", "<eos>"}, 3);
  const auto ids = v.tokenize("ab, b a!");
  REQUIRE(ids.size() == 3);
  CHECK(v.symbol(ids[0]) == "ab");
  CHECK(v.symbol(ids[1]) == "b");
  CHECK(v.symbol(ids[2]) == "a");
  CHECK(Sequence::parse(v, "").length() == 0);
  CHECK(Sequence::parse(v, "ab b").text() == "ab b");
}

TEST_CASE("invalid sequences are rejected") {
  const auto base = toys::l1_base();
  const Vocab& v = base->vocab();
  CHECK_THROWS_AS(Sequence::from_ids(v, {0, 1}), gdc::InvalidArgument);      // no eos
  CHECK_THROWS_AS(Sequence::from_ids(v, {0, 7, 2}), gdc::InvalidArgument);   // out of vocab
  CHECK_THROWS_AS(Sequence::from_content(v, {0, 2}), gdc::InvalidArgument);  // inner eos
  const std::vector<Sequence> too_long = {Sequence::from_content(v, {0, 1})};
  CHECK_THROWS_AS(base->log_score(too_long, {}), gdc::InvalidArgument);
}

TEST_CASE("one-token toy scores") {
  const auto base = toys::l1_base();
  const Vocab& v = base->vocab();
  const std::vector<Sequence> xs = {toys::seq(v, "A"), toys::seq(v, "B"), toys::seq(v, "")};
  const auto s = base->log_score(xs, {});
  CHECK(s[0] == doctest::Approx(std::log(0.75)).epsilon(1e-15));
  CHECK(s[1] == doctest::Approx(std::log(0.25)).epsilon(1e-15));
  CHECK(s[2] == -std::numeric_limits<double>::infinity());
}

TEST_CASE("every model is normalized over the enumerated space") {
  for (std::uint64_t seed = 1; seed <= 6; ++seed) {
    const std::size_t content = 2 + seed % 3;
    const std::size_t horizon = 2 + seed % 3;
    const auto m = toys::random_model(content, horizon, seed, 1.5, seed % 2 == 0, 1 + seed % 2);
    const auto space = toys::all_sequences(m.vocab(), horizon);
    for (const std::string ctx : {"", "a b", "c"}) {
      const auto logs = m.log_score(space, Context{ctx});
      double z = 0.0;
      for (double l : logs) z += std::exp(l);
      CAPTURE(seed);
      CHECK(z == doctest::Approx(1.0).epsilon(1e-12));
    }
  }
}

TEST_CASE("sampled log-probabilities equal log_score") {
  const auto m = toys::random_model(3, 4, 11, 1.0, true, 2);
  gdc::Rng rng(3);
  const Context ctx{"a c"};
  const auto drawn = m.sample(ctx, 500, rng);
  for (const auto& s : drawn) {
    const std::vector<Sequence> one = {s.sequence};
    CHECK(m.log_score(one, ctx)[0] == s.log_prob);
  }
}

TEST_CASE("sampling frequencies match probabilities") {
  const auto m = toys::random_model(2, 3, 5, 1.0);
  const auto space = toys::all_sequences(m.vocab(), 3);
  const auto p = toys::normalized(m, {}, space);
  std::map<std::vector<gdc::TokenId>, std::size_t> counts;
  gdc::Rng rng(9);
  const std::size_t n = 100'000;
  for (const auto& s : m.sample({}, n, rng)) ++counts[s.sequence.token_ids()];
  for (std::size_t i = 0; i < space.size(); ++i) {
    const double freq = static_cast<double>(counts[space[i].token_ids()]) / n;
    const double se = std::sqrt(p[i] * (1.0 - p[i]) / n);
    CAPTURE(space[i].text());
    CHECK(std::abs(freq - p[i]) < 5.0 * se + 1e-12);
  }
}

TEST_CASE("analytic gradient matches finite differences") {
  auto m = toys::random_model(3, 3, 21, 1.0, true, 2);
  const Context ctx{"a b"};
  const auto x = toys::seq(m.vocab(), "a c b");
  const auto grad = m.grad_log_score(x, ctx);
  const double h = 1e-5;
  double worst = 0.0;
  for (std::size_t i = 0; i < grad.size(); ++i) {
    auto params = m.mutable_parameters();
    const double keep = params[i];
    params[i] = keep + h;
    const double up = m.log_prob(x, ctx);
    params[i] = keep - h;
    const double down = m.log_prob(x, ctx);
    params[i] = keep;
    worst = std::max(worst, std::abs((up - down) / (2.0 * h) - grad[i]));
  }
  CHECK(worst < 1e-6);
}

TEST_CASE("score function has zero mean under the model") {
  const auto m = toys::random_model(3, 3, 4, 1.0, true, 3);
  const auto space = toys::all_sequences(m.vocab(), 3);
  const Context ctx{"b"};
  const auto p = toys::normalized(m, ctx, space);
  std::vector<double> g(m.parameter_count(), 0.0);
  for (std::size_t i = 0; i < space.size(); ++i) {
    m.accumulate_grad_log_score(space[i], ctx, p[i], g);
  }
  double norm = 0.0;
  for (double v : g) norm = std::max(norm, std::abs(v));
  CHECK(norm < 1e-12);
}

TEST_CASE("frozen and tabular models cannot be updated") {
  auto m = toys::random_model(2, 2, 1);
  auto frozen = m.clone(true);
  CHECK(frozen.frozen());
  CHECK_THROWS_AS(frozen.mutable_parameters(), gdc::InvalidArgument);
  const std::vector<double> dir(m.parameter_count(), 1.0);
  CHECK_THROWS_AS(frozen.apply_update(0.1, dir), gdc::InvalidArgument);
  auto thawed = frozen.clone(false);
  thawed.apply_update(0.1, dir);
  CHECK(thawed.parameters()[0] == doctest::Approx(m.parameters()[0] + 0.1));
  CHECK(frozen.parameters()[0] == m.parameters()[0]);
  auto tab = toys::l1_base()->clone(false);
  CHECK_THROWS_AS(tab.mutable_parameters(), gdc::InvalidArgument);
}

TEST_CASE("model JSON round-trips exactly") {
  const auto m = toys::random_model(3, 3, 8, 2.0, true, 2);
  const auto back = AutoregressiveModel::from_json(nlohmann::json::parse(m.to_json().dump()));
  const auto space = toys::all_sequences(m.vocab(), 3);
  CHECK(m.log_score(space, Context{"a"}) == back.log_score(space, Context{"a"}));

  const auto tab = toys::l1_base();
  const auto tab_back = AutoregressiveModel::from_json(tab->to_json());
  const auto tspace = toys::all_sequences(tab->vocab(), 1);
  CHECK(tab->log_score(tspace, {}) == tab_back.log_score(tspace, {}));
}

TEST_CASE("tabular models resolve contexts") {
  const Vocab v = toys::ab_vocab();
  const auto m = AutoregressiveModel::tabular(v, 1, 0, {"x", "y"},
                                              {{0.5, 0.5, 0.0}, {0.1, 0.9, 0.0}});
  const std::vector<Sequence> a = {toys::seq(v, "A")};
  CHECK(m.log_score(a, Context{"y"})[0] == doctest::Approx(std::log(0.1)));
  CHECK_THROWS_AS(m.log_score(a, Context{"z"}), gdc::InvalidArgument);
  CHECK_THROWS_AS(AutoregressiveModel::tabular(v, 1, 0, {""}, {{0.5, 0.6, 0.0}}),
                  gdc::InvalidArgument);
}
