// Copyright 2026 The gdc Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "gdc/context_distribution.hpp"
#include "gdc/features.hpp"
#include "gdc/model.hpp"

/// Ground truth by brute-force enumeration of the finite sequence space.
///
/// The space holds every eos-terminated sequence with at most `horizon`
/// content tokens: sum_{k=0..horizon} |content vocab|^k sequences.
/// Enumeration streams in chunks, so only exact_qrs_law and enumerate()
/// materialize per-sequence tables. Nothing here samples.
namespace gdc::oracle {

inline constexpr std::size_t kMaxSpace = 10'000'000;
inline constexpr std::size_t kMaxMaterialized = 1'000'000;

/// Number of sequences in the space; saturates at SIZE_MAX.
std::size_t space_size(const Vocab& vocab, std::size_t horizon);

/// Streams the space in chunks, ordered by length then lexicographically.
/// Throws SpaceTooLarge above kMaxSpace.
void for_each_sequence(const Vocab& vocab, std::size_t horizon,
                       const std::function<void(std::span<const Sequence>)>& visit);

/// The full space as a list; throws SpaceTooLarge above kMaxMaterialized.
std::vector<Sequence> enumerate(const Vocab& vocab, std::size_t horizon);

/// Z_c = sum_x P_c(x).
double exact_partition(const PositiveScorer& target, const Context& context);

/// E_{c~tau} E_{x~p_c} f(x, c) for each feature.
std::vector<double> exact_moments(const PositiveScorer& target, std::span<const Feature> features,
                                  const ContextDistribution& contexts);

struct Divergences {
  double kl;   ///< KL(p || model), +inf when the model misses target mass
  double tvd;  ///< total variation distance
};

/// Both arguments are normalized by their own exact partition functions, then
/// compared per context and averaged over tau.
Divergences exact_divergences(const PositiveScorer& p, const PositiveScorer& model,
                              const ContextDistribution& contexts);
double exact_kl(const PositiveScorer& p, const PositiveScorer& model,
                const ContextDistribution& contexts);
double exact_tvd(const PositiveScorer& p, const PositiveScorer& model,
                 const ContextDistribution& contexts);

struct LambdaSolution {
  std::vector<double> lambda;
  std::size_t iterations = 0;
  double gap = 0.0;  ///< infinity-norm of the final moment gap
};

/// Coefficients whose exact moments equal the desired ones, by damped Newton
/// on the convex dual sum_c tau(c) log Z_c(lambda) - lambda . mu (Jacobian =
/// feature covariance + 1e-9 I, backtracking line search), to a gap below
/// 1e-10. `pointwise` factors multiply the base as in a hybrid target.
/// Throws InfeasibleConstraint unless every desired moment lies strictly
/// inside the feature's attainable range.
LambdaSolution exact_lambda(const AutoregressiveModel& base, const ConstraintSpec& spec,
                            const ContextDistribution& contexts,
                            std::span<const Feature> pointwise = {});

/// Output law of quasi-rejection sampling: r(x) proportional to
/// min(P(x), beta q(x)).
struct QrsLaw {
  std::vector<Sequence> sequences;
  std::vector<double> target;    ///< p = P / Z
  std::vector<double> proposal;  ///< q
  std::vector<double> output;    ///< r_beta
  double acceptance_rate = 0.0;  ///< E_q min(1, P / (beta q))
  double tvd = 0.0;              ///< TVD(r_beta, p)
  double kl = 0.0;               ///< KL(p || r_beta)
};

QrsLaw exact_qrs_law(const PositiveScorer& target, const AutoregressiveModel& proposal,
                     double beta, const Context& context);

/// sum_c tau(c) sum_x p_c(x) grad log pi(x|c): the negative gradient of the
/// cross-entropy CE(p, pi), i.e. the exact DPG ascent direction.
std::vector<double> exact_dpg_gradient(const PositiveScorer& target,
                                       const AutoregressiveModel& model,
                                       const ContextDistribution& contexts);

}  // namespace gdc::oracle
