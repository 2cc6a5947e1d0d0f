// Copyright 2026 The gdc Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <limits>
#include <vector>

#include "doctest.h"

#include "gdc/error.hpp"
#include "gdc/rng.hpp"
#include "gdc/snis.hpp"

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
}

TEST_CASE("normalized weights sum to one and Zhat is their mean") {
  gdc::Rng rng(2);
  std::vector<double> lw(1000);
  for (auto& x : lw) x = 600.0 + 5.0 * rng.normal();  // would overflow outside log space
  lw[10] = -kInf;
  const auto w = gdc::snis_weights(lw);
  double total = 0.0;
  for (double v : w.normalized) total += v;
  CHECK(total == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(w.normalized[10] == 0.0);
  // mean_i w_i / Zhat == 1
  double mean_ratio = 0.0;
  for (double v : w.normalized) mean_ratio += v * static_cast<double>(lw.size());
  CHECK(mean_ratio / static_cast<double>(lw.size()) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(std::isfinite(w.log_partition()));
}

TEST_CASE("starved batches are flagged, not fatal") {
  const std::vector<double> lw(8, -kInf);
  const auto w = gdc::snis_weights(lw);
  CHECK(w.starved());
  const auto e = gdc::snis_mean(w, std::vector<double>(8, 1.0));
  CHECK_FALSE(e.valid);
}

TEST_CASE("non-finite weights throw") {
  CHECK_THROWS_AS(gdc::snis_weights(std::vector<double>{0.0, std::nan("")}), gdc::NumericalError);
  CHECK_THROWS_AS(gdc::snis_weights(std::vector<double>{0.0, kInf}), gdc::NumericalError);
}

TEST_CASE("snis mean of a known tilt") {
  // q = N(0,1), p proportional to exp(x) q = N(1,1): E_p[x] = 1.
  gdc::Rng rng(5);
  const std::size_t n = 200'000;
  std::vector<double> x(n), lw(n);
  for (std::size_t i = 0; i < n; ++i) {
    x[i] = rng.normal();
    lw[i] = x[i];
  }
  const auto e = gdc::snis_mean(gdc::snis_weights(lw), x);
  CHECK(e.valid);
  CHECK(std::abs(e.value - 1.0) < 5.0 * e.std_error);
  CHECK(e.std_error < 0.02);
}

TEST_CASE("zero-weight samples with infinite values contribute nothing") {
  const std::vector<double> lw = {0.0, -kInf, 0.0};
  const std::vector<double> f = {1.0, -kInf, 3.0};
  const auto e = gdc::snis_mean(gdc::snis_weights(lw), f);
  CHECK(e.value == 2.0);
}
