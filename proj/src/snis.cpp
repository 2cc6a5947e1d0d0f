// Copyright 2026 The gdc Authors
// SPDX-License-Identifier: Apache-2.0

#include "gdc/snis.hpp"

#include <cmath>

#include "gdc/error.hpp"
#include "gdc/kernels.hpp"

namespace gdc {

double SnisWeights::log_partition() const {
  return log_total - std::log(static_cast<double>(count));
}

SnisWeights snis_weights(std::span<const double> log_weights) {
  SnisWeights w;
  w.count = log_weights.size();
  w.normalized.assign(log_weights.size(), 0.0);
  if (log_weights.empty()) return w;
  w.log_total = kernels::logsumexp(log_weights);
  if (std::isnan(w.log_total) || w.log_total == std::numeric_limits<double>::infinity()) {
    throw NumericalError("importance weights are not finite");
  }
  if (!w.starved()) kernels::exp_shift(log_weights, w.log_total, w.normalized);
  return w;
}

Estimate snis_mean(const SnisWeights& weights, std::span<const double> f) {
  if (f.size() != weights.normalized.size()) throw InvalidArgument("snis_mean: length mismatch");
  Estimate e;
  if (weights.starved()) return e;
  e.value = kernels::weighted_sum(weights.normalized, f);
  double var = 0.0;
  for (std::size_t i = 0; i < f.size(); ++i) {
    const double w = weights.normalized[i];
    if (w == 0.0) continue;
    const double d = w * (f[i] - e.value);
    var += d * d;
  }
  e.std_error = std::sqrt(var);
  e.valid = std::isfinite(e.value);
  return e;
}

}  // namespace gdc
