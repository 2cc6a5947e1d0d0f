// Copyright 2026 The gdc Authors
// SPDX-License-Identifier: Apache-2.0

#include "gdc/qrs.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <string>

#include <fmt/format.h>

#include "gdc/error.hpp"
#include "gdc/kernels.hpp"

namespace gdc {
namespace {

constexpr std::size_t kAttemptsPerWanted = 10'000;

struct Pool {
  std::vector<Sequence> sequences;
  std::vector<double> log_w;  ///< log P - log q
  std::vector<double> target_log;
};

Pool draw_pool(const PositiveScorer& target, const AutoregressiveModel& proposal,
               const Context& context, std::size_t n, Rng& rng) {
  Pool pool;
  auto drawn = proposal.sample(context, n, rng);
  pool.sequences.reserve(n);
  std::vector<double> q_log;
  q_log.reserve(n);
  for (auto& s : drawn) {
    q_log.push_back(s.log_prob);
    pool.sequences.push_back(std::move(s.sequence));
  }
  pool.target_log = target.log_score(pool.sequences, context);
  pool.log_w.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double lw = pool.target_log[i] - q_log[i];
    if (std::isnan(lw) || lw == std::numeric_limits<double>::infinity()) {
      throw NumericalError("target scores a sequence the proposal cannot produce");
    }
    pool.log_w[i] = lw;
  }
  return pool;
}

}  // namespace

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

void QrsConfig::validate() const {
  if (!(beta > 0.0) || std::isnan(beta)) throw InvalidArgument("qrs beta must be positive");
  if (batch_size < 1) throw InvalidArgument("qrs batch_size must be at least 1");
}

nlohmann::json QrsConfig::to_json() const {
  return {{"beta", beta}, {"batch_size", batch_size}, {"seed", seed}};
}

QrsConfig QrsConfig::from_json(const nlohmann::json& j) {
  QrsConfig c;
  c.beta = j.value("beta", c.beta);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.seed = j.value("seed", c.seed);
  return c;
}

QrsSample qrs_sample(const PositiveScorer& target, const AutoregressiveModel& proposal,
                     const QrsConfig& cfg, const Context& context, std::size_t n_wanted) {
  cfg.validate();
  QrsSample out;
  if (n_wanted == 0) return out;
  Rng rng(cfg.seed);
  const double log_beta = std::log(cfg.beta);
  const std::size_t budget = kAttemptsPerWanted * n_wanted;
  std::size_t drawn = 0;
  while (out.accepted.size() < n_wanted && drawn < budget) {
    const std::size_t n = std::min(cfg.batch_size, budget - drawn);
    Pool pool = draw_pool(target, proposal, context, n, rng);
    for (std::size_t i = 0; i < n; ++i) {
      ++drawn;
      const double log_accept = std::min(0.0, pool.log_w[i] - log_beta);
      if (rng.uniform() < std::exp(log_accept)) {
        out.accepted.push_back({std::move(pool.sequences[i]), pool.target_log[i]});
        out.attempts = drawn;
        if (out.accepted.size() == n_wanted) break;
      }
    }
  }
  if (out.accepted.empty()) {
    throw StarvationError(fmt::format(
        "no sample accepted in {} attempts: beta too large or proposal mismatched", drawn));
  }
  if (out.accepted.size() < n_wanted) out.attempts = drawn;
  return out;
}

std::vector<QrsEstimate> qrs_estimate(const PositiveScorer& target,
                                      const AutoregressiveModel& proposal,
                                      std::span<const double> betas, const Context& context,
                                      std::size_t n_samples, Rng& rng) {
  if (n_samples < 1) throw InvalidArgument("qrs_estimate: n_samples must be at least 1");
  for (double b : betas) {
    if (!(b > 0.0)) throw InvalidArgument("qrs_estimate: every beta must be positive");
  }
  const Pool pool = draw_pool(target, proposal, context, n_samples, rng);
  const std::size_t n = n_samples;
  const double dn = static_cast<double>(n);

  // Everything below is invariant to rescaling P and beta together, so work
  // with w' = w / max w to stay in range.
  const double shift = kernels::max(pool.log_w);
  std::vector<QrsEstimate> out;
  if (!(shift > -std::numeric_limits<double>::infinity())) {
    throw StarvationError("qrs_estimate: no proposal sample has positive target score");
  }
  std::vector<double> w(n);
  kernels::exp_shift(pool.log_w, shift, w);
  const double w_sum = kernels::sum(w);

  for (double beta : betas) {
    const double log_b = std::log(beta) - shift;
    const double b = std::exp(log_b);
    double ar = 0.0;
    double clipped_sum = 0.0;
    double excess = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (w[i] == 0.0) continue;
      clipped_sum += std::min(w[i], b);
      ar += std::min(1.0, std::exp(pool.log_w[i] - std::log(beta)));
      const double log_ratio = pool.log_w[i] - std::log(beta);
      if (log_ratio > 0.0) excess += w[i] * log_ratio;
    }
    double tvd = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      tvd += std::abs(w[i] / w_sum - std::min(w[i], b) / clipped_sum);
    }
    QrsEstimate e;
    e.beta = beta;
    e.acceptance_rate = ar / dn;
    e.kl_to_target = std::max(0.0, excess / w_sum + std::log(clipped_sum / w_sum));
    e.tvd_to_target = 0.5 * tvd;
    out.push_back(e);
  }
  return out;
}

double estimate_log_partition(const PositiveScorer& target, const AutoregressiveModel& proposal,
                              const Context& context, std::size_t n, Rng& rng) {
  if (n < 1) throw InvalidArgument("estimate_log_partition: n must be at least 1");
  const Pool pool = draw_pool(target, proposal, context, n, rng);
  return kernels::logsumexp(pool.log_w) - std::log(static_cast<double>(n));
}

void write_qrs_estimates_csv(const std::filesystem::path& path,
                             std::span<const QrsEstimate> estimates) {
  std::ofstream out(path);
  if (!out) throw IoError(fmt::format("cannot open {} for writing", path.string()));
  out << "beta,acceptance_rate,kl_to_target,tvd_to_target\n";
  for (const auto& e : estimates) {
    out << fmt::format("{},{},{},{}\n", e.beta, e.acceptance_rate, e.kl_to_target,
                       e.tvd_to_target);
  }
  if (!out) throw IoError(fmt::format("failed writing {}", path.string()));
}

}  // namespace gdc
