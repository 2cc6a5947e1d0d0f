// Copyright 2026 The gdc Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "gdc/model.hpp"
#include "gdc/rng.hpp"

namespace gdc {

struct QrsConfig {
  /// On the scale of the unnormalized target P.
  double beta = 1.0;
  std::size_t batch_size = 256;
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static QrsConfig from_json(const nlohmann::json& j);
};

struct AcceptedSample {
  Sequence sequence;
  double log_score;  ///< log P(x)
};

struct QrsSample {
  std::vector<AcceptedSample> accepted;
  /// Proposal draws examined, up to and including the last accepted one.
  std::size_t attempts = 0;
};

/// Quasi-rejection sampling: draws x ~ q and keeps it with probability
/// min(1, P(x) / (beta q(x))). The kept samples follow
/// r(x) proportional to min(P(x), beta q(x)).
///
/// Stops after n_wanted acceptances or 10^4 n_wanted attempts. Throws
/// StarvationError when the budget runs out with nothing accepted.
QrsSample qrs_sample(const PositiveScorer& target, const AutoregressiveModel& proposal,
                     const QrsConfig& cfg, const Context& context, std::size_t n_wanted);

struct QrsEstimate {
  double beta = 0.0;
  double acceptance_rate = 0.0;  ///< E_q min(1, P / (beta q))
  double kl_to_target = 0.0;     ///< KL(p || r_beta)
  double tvd_to_target = 0.0;    ///< TVD(r_beta, p)
};

/// Importance-sampling estimates for every beta from one shared pool of
/// n_samples proposal draws.
std::vector<QrsEstimate> qrs_estimate(const PositiveScorer& target,
                                      const AutoregressiveModel& proposal,
                                      std::span<const double> betas, const Context& context,
                                      std::size_t n_samples, Rng& rng);

/// log Zhat = log mean_i P(x_i) / q(x_i) over n proposal draws; converts a
/// normalized beta (beta / Z) to the scale qrs_sample expects.
double estimate_log_partition(const PositiveScorer& target, const AutoregressiveModel& proposal,
                              const Context& context, std::size_t n, Rng& rng);

/// Header "beta,acceptance_rate,kl_to_target,tvd_to_target".
void write_qrs_estimates_csv(const std::filesystem::path& path,
                             std::span<const QrsEstimate> estimates);

/// Quotes a CSV field when it holds a comma, quote or newline.
std::string csv_field(const std::string& s);

}  // namespace gdc
