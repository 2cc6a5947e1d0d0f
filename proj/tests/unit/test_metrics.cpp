// Copyright 2026 The gdc Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "doctest.h"
#include "toys.hpp"

#include "gdc/error.hpp"
#include "gdc/metrics.hpp"
#include "gdc/oracle.hpp"

using gdc::ContextDistribution;
using gdc::EBMTarget;
using gdc::StepMetrics;
namespace fs = std::filesystem;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "gdc_metrics_test";
  fs::create_directories(dir);
  return dir / name;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<StepMetrics> history(std::size_t n) {
  gdc::Rng rng(4);
  std::vector<StepMetrics> out;
  for (std::size_t i = 0; i < n; ++i) {
    StepMetrics m;
    m.step = i;
    m.kl_target_model = rng.uniform() * 3.0;
    m.kl_model_base = std::exp(rng.normal());
    m.z_estimate = rng.uniform() / 7.0;
    m.feature_moments = {{"is_A", rng.uniform()}, {"length", 1.0 / 3.0}};
    m.proposal_refreshed = i % 2 == 0;
    if (i % 3 == 1) m.acceptance_diag = gdc::AcceptanceDiag{0.1 * double(i), rng.uniform()};
    out.push_back(m);
  }
  out[0].kl_target_model = kInf;
  out[1].z_estimate = std::numeric_limits<double>::quiet_NaN();
  return out;
}

EBMTarget half_target() {
  const auto base = toys::l1_base();
  return EBMTarget::exponential(base, {toys::is_a(base->vocab(), 1)}, {-std::log(3.0)});
}

}  // namespace

TEST_CASE("JSONL replay reconstructs the history bit-exactly") {
  const auto path = scratch("replay.jsonl");
  const auto runs = history(25);
  {
    gdc::JsonlLogger log(path);
    for (const auto& m : runs) log.log(m);
  }
  const auto back = gdc::read_jsonl(path);
  REQUIRE(back.size() == runs.size());
  for (std::size_t i = 0; i < runs.size(); ++i) {
    CAPTURE(i);
    CHECK(back[i] == runs[i]);
    CHECK(back[i].kl_model_base == runs[i].kl_model_base);
  }
  CHECK(back[0].kl_target_model == kInf);
  CHECK(std::isnan(back[1].z_estimate));
}

TEST_CASE("records keep a fixed key order and unknown keys survive") {
  StepMetrics m;
  m.step = 3;
  const auto keys = m.to_json();
  std::vector<std::string> order;
  for (const auto& [k, _] : keys.items()) order.push_back(k);
  CHECK(order == std::vector<std::string>{"step", "kl_target_model", "kl_model_base",
                                          "z_estimate", "feature_moments",
                                          "proposal_refreshed"});

  auto j = m.to_json();
  j["wall_time"] = 1.25;
  j["notes"] = {{"run", "a"}};
  const auto read = StepMetrics::from_json(j);
  CHECK(read.step == 3);
  CHECK(read.to_json().dump() == j.dump());
}

TEST_CASE("an empty run writes an empty file") {
  const auto path = scratch("empty.jsonl");
  {
    std::ofstream stale(path);
    stale << "old\n";
  }
  { gdc::JsonlLogger log(path); }
  CHECK(fs::file_size(path) == 0);
  CHECK(gdc::read_jsonl(path).empty());
}

TEST_CASE("attached loggers receive identical payloads") {
  const auto a = scratch("a.jsonl");
  const auto b = scratch("b.jsonl");
  std::ostringstream console;
  gdc::MultiLogger multi;
  multi.attach(std::make_shared<gdc::JsonlLogger>(a));
  multi.attach(std::make_shared<gdc::ConsoleLogger>(console));
  multi.attach(std::make_shared<gdc::JsonlLogger>(b));
  const auto runs = history(6);
  for (const auto& m : runs) multi.log(m);
  CHECK(slurp(a) == slurp(b));
  CHECK(gdc::read_jsonl(a).size() == 6);
  std::size_t lines = 0;
  for (char ch : console.str()) lines += ch == '\n';
  CHECK(lines == 6);
}

TEST_CASE("unwritable log paths fail with an I/O error") {
  const auto dir = scratch("a_directory");
  fs::create_directories(dir);
  CHECK_THROWS_AS(gdc::JsonlLogger{dir}, gdc::IoError);
}

TEST_CASE("KL estimate on the one-token toy") {
  const auto p = half_target();
  gdc::Rng rng(8);
  const auto est = gdc::estimate_kl_target_model(p, p.base(), p.base(),
                                                 ContextDistribution::single(), 100'000, rng);
  REQUIRE(est.valid);
  const double exact = gdc::oracle::exact_kl(p, p.base(), ContextDistribution::single());
  CHECK(std::abs(est.value - 0.1438) < 0.01);
  CHECK(std::abs(est.value - exact) < 5.0 * est.std_error);
}

TEST_CASE("KL of a model to itself is near zero") {
  const auto base = std::make_shared<const gdc::AutoregressiveModel>(
      toys::random_model(3, 3, 31).clone(true));
  const auto same = EBMTarget::exponential(
      base, {gdc::make_feature({{"builtin", "length_fraction"}}, base->vocab(), 3)}, {0.0});
  const auto proposal = toys::random_model(3, 3, 32, 0.5);
  gdc::Rng rng(2);
  const auto est = gdc::estimate_kl_target_model(same, *base, proposal,
                                                 ContextDistribution::single(), 20'000, rng);
  CHECK(std::abs(est.value) < 2.0 * est.std_error);
}

TEST_CASE("on-policy and base-proposal estimates agree") {
  const auto base = std::make_shared<const gdc::AutoregressiveModel>(
      toys::random_model(3, 3, 40).clone(true));
  const EBMTarget p = EBMTarget::exponential(
      base, {gdc::make_feature({{"builtin", "count_token"}, {"args", {{"token", "b"}}}},
                               base->vocab(), 3)},
      {0.8});
  const auto model = toys::random_model(3, 3, 41, 0.7);
  const auto single = ContextDistribution::single();
  gdc::Rng rng(6);
  const auto on = gdc::estimate_kl_target_model(p, model, model, single, 50'000, rng);
  const auto off = gdc::estimate_kl_target_model(p, model, *base, single, 50'000, rng);
  const double joint = std::hypot(on.std_error, off.std_error);
  CHECK(std::abs(on.value - off.value) < 3.0 * joint);
  CHECK(std::abs(on.value - gdc::oracle::exact_kl(p, model, single)) < 5.0 * on.std_error);
}

TEST_CASE("standard errors shrink like one over root n") {
  const auto base = std::make_shared<const gdc::AutoregressiveModel>(
      toys::random_model(3, 3, 40).clone(true));
  const EBMTarget p = EBMTarget::exponential(
      base, {gdc::make_feature({{"builtin", "count_token"}, {"args", {{"token", "b"}}}},
                               base->vocab(), 3)},
      {0.8});
  const auto model = toys::random_model(3, 3, 41, 0.7);
  const auto single = ContextDistribution::single();
  gdc::Rng rng(12);
  double prev = 0.0;
  for (std::size_t n : {1'000, 10'000, 100'000}) {
    const auto est = gdc::estimate_kl_target_model(p, model, *base, single, n, rng);
    if (prev > 0.0) {
      const double ratio = prev / est.std_error;
      CAPTURE(n);
      CHECK(ratio >= 2.5);
      CHECK(ratio <= 4.0);
    }
    prev = est.std_error;
  }
  CHECK_THROWS_AS(gdc::estimate_kl_target_model(p, model, *base, single, 1, rng),
                  gdc::InvalidArgument);
}

TEST_CASE("pointwise zeros do not poison the KL estimate") {
  const auto base = toys::l1_base();
  const auto pw = EBMTarget::pointwise(base, {toys::is_a(base->vocab(), 1)});
  gdc::Rng rng(3);
  const auto est = gdc::estimate_kl_target_model(pw, *base, *base, ContextDistribution::single(),
                                                 10'000, rng);
  REQUIRE(est.valid);
  CHECK(std::isfinite(est.std_error));
  // p puts all mass on A: KL = log(1 / 0.75)
  CHECK(std::abs(est.value - std::log(1.0 / 0.75)) < 5.0 * est.std_error);
}

TEST_CASE("feature moment estimates") {
  const auto base = toys::l1_base();
  const auto single = ContextDistribution::single();
  const auto as_target = EBMTarget::exponential(base, {toys::is_a(base->vocab(), 1)}, {0.0});
  const gdc::Feature one("one", gdc::FeatureKind::general,
                         [](const auto&, const auto&) { return 1.0; });
  const std::vector<gdc::Feature> fs = {toys::is_a(base->vocab(), 1), one};
  gdc::Rng rng(21);
  const auto m = gdc::estimate_feature_moments(as_target, fs, *base, single, 20'000, rng);
  CHECK(std::abs(m[0].value - 0.75) < 0.01);
  CHECK(m[1].value == doctest::Approx(1.0).epsilon(1e-12));

  const auto half = half_target();
  const auto h = gdc::estimate_feature_moments(half, fs, *base, single, 20'000, rng);
  CHECK(std::abs(h[0].value - 0.5) < 0.02);
}
