// Copyright 2026 The gdc Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <limits>
#include <span>
#include <vector>

namespace gdc {

/// Self-normalized importance weights of one batch, computed in log space with
/// a single log-sum-exp.
struct SnisWeights {
  /// w_i / sum_j w_j; all zero when the batch is starved.
  std::vector<double> normalized;
  /// log sum_i w_i (-inf when every weight is zero).
  double log_total = -std::numeric_limits<double>::infinity();
  std::size_t count = 0;

  bool starved() const { return !(log_total > -std::numeric_limits<double>::infinity()); }
  /// log of the partition estimate Z = mean_i w_i.
  double log_partition() const;
};

SnisWeights snis_weights(std::span<const double> log_weights);

/// A consistent estimate with its delta-method standard error. `valid` is false
/// when no sample carried weight.
struct Estimate {
  double value = std::numeric_limits<double>::quiet_NaN();
  double std_error = std::numeric_limits<double>::quiet_NaN();
  bool valid = false;
};

/// sum_i wbar_i f_i. Zero-weight samples contribute nothing even if f_i is
/// infinite.
Estimate snis_mean(const SnisWeights& weights, std::span<const double> f);

}  // namespace gdc
