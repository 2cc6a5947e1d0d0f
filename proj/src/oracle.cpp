// Copyright 2026 The gdc Authors
// SPDX-License-Identifier: Apache-2.0

#include "gdc/oracle.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "gdc/error.hpp"

namespace gdc::oracle {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr std::size_t kChunk = 4096;

// Neumaier compensated summation; enumeration sums run over up to 1e7 terms.
class Accumulator {
 public:
  void add(double x) {
    const double t = sum_ + x;
    if (std::abs(sum_) >= std::abs(x)) {
      comp_ += (sum_ - t) + x;
    } else {
      comp_ += (x - t) + sum_;
    }
    sum_ = t;
  }
  double value() const { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

void check_compatible(const PositiveScorer& a, const PositiveScorer& b) {
  if (!(a.vocab() == b.vocab()) || a.horizon() != b.horizon()) {
    throw InvalidArgument("oracle: scorers disagree on vocabulary or horizon");
  }
}

/// Visits (sequence, log-score) pairs of `scorer` in `context`.
template <class Visit>
void for_each_scored(const PositiveScorer& scorer, const Context& context, Visit&& visit) {
  for_each_sequence(scorer.vocab(), scorer.horizon(), [&](std::span<const Sequence> chunk) {
    const auto scores = scorer.log_score(chunk, context);
    for (std::size_t i = 0; i < chunk.size(); ++i) visit(chunk[i], scores[i]);
  });
}

}  // namespace

std::size_t space_size(const Vocab& vocab, std::size_t horizon) {
  const std::size_t n = vocab.content_size();
  std::size_t total = 0;
  std::size_t power = 1;
  constexpr std::size_t kMax = std::numeric_limits<std::size_t>::max();
  for (std::size_t k = 0; k <= horizon; ++k) {
    if (total > kMax - power) return kMax;
    total += power;
    if (n != 0 && power > kMax / n) {
      return k == horizon ? total : kMax;
    }
    power *= n;
  }
  return total;
}

void for_each_sequence(const Vocab& vocab, std::size_t horizon,
                       const std::function<void(std::span<const Sequence>)>& visit) {
  if (space_size(vocab, horizon) > kMaxSpace) {
    throw SpaceTooLarge("sequence space exceeds " + std::to_string(kMaxSpace) + " sequences");
  }
  const std::size_t n = vocab.content_size();
  std::vector<Sequence> chunk;
  chunk.reserve(kChunk);
  auto flush = [&] {
    if (!chunk.empty()) visit(chunk);
    chunk.clear();
  };
  const std::size_t max_len = n == 0 ? 0 : horizon;
  std::vector<std::size_t> digits;
  std::vector<TokenId> content;
  for (std::size_t len = 0; len <= max_len; ++len) {
    digits.assign(len, 0);
    while (true) {
      content.resize(len);
      for (std::size_t i = 0; i < len; ++i) content[i] = vocab.content_token(digits[i]);
      chunk.push_back(Sequence::from_content(vocab, content));
      if (chunk.size() == kChunk) flush();
      std::size_t pos = len;
      bool carried_out = true;
      while (pos > 0) {
        --pos;
        if (++digits[pos] < n) {
          carried_out = false;
          break;
        }
        digits[pos] = 0;
      }
      if (carried_out) break;
    }
  }
  flush();
}

std::vector<Sequence> enumerate(const Vocab& vocab, std::size_t horizon) {
  if (space_size(vocab, horizon) > kMaxMaterialized) {
    throw SpaceTooLarge("sequence space too large to materialize");
  }
  std::vector<Sequence> out;
  for_each_sequence(vocab, horizon, [&](std::span<const Sequence> chunk) {
    out.insert(out.end(), chunk.begin(), chunk.end());
  });
  return out;
}

double exact_partition(const PositiveScorer& target, const Context& context) {
  Accumulator z;
  for_each_scored(target, context, [&](const Sequence&, double s) { z.add(std::exp(s)); });
  return z.value();
}

std::vector<double> exact_moments(const PositiveScorer& target, std::span<const Feature> features,
                                  const ContextDistribution& contexts) {
  std::vector<double> out(features.size(), 0.0);
  for (const auto& entry : contexts.entries()) {
    if (entry.weight == 0.0) continue;
    Accumulator z;
    std::vector<Accumulator> acc(features.size());
    for_each_scored(target, entry.context, [&](const Sequence& x, double s) {
      const double p = std::exp(s);
      if (p == 0.0) return;
      z.add(p);
      for (std::size_t j = 0; j < features.size(); ++j) {
        acc[j].add(p * features[j].evaluate(x, entry.context));
      }
    });
    if (!(z.value() > 0.0)) throw NumericalError("target has zero mass in a context");
    for (std::size_t j = 0; j < features.size(); ++j) {
      out[j] += entry.weight * acc[j].value() / z.value();
    }
  }
  return out;
}

Divergences exact_divergences(const PositiveScorer& p, const PositiveScorer& model,
                              const ContextDistribution& contexts) {
  check_compatible(p, model);
  Divergences total{0.0, 0.0};
  for (const auto& entry : contexts.entries()) {
    if (entry.weight == 0.0) continue;
    const double zp = exact_partition(p, entry.context);
    const double zm = exact_partition(model, entry.context);
    if (!(zp > 0.0) || !(zm > 0.0)) throw NumericalError("zero partition function in oracle");
    const double log_zp = std::log(zp);
    const double log_zm = std::log(zm);
    Accumulator kl;
    Accumulator tvd;
    bool infinite = false;
    for_each_sequence(p.vocab(), p.horizon(), [&](std::span<const Sequence> chunk) {
      const auto sp = p.log_score(chunk, entry.context);
      const auto sm = model.log_score(chunk, entry.context);
      for (std::size_t i = 0; i < chunk.size(); ++i) {
        const double lp = sp[i] - log_zp;
        const double lm = sm[i] - log_zm;
        const double pp = std::exp(lp);
        const double pm = std::exp(lm);
        tvd.add(std::abs(pp - pm));
        if (pp > 0.0) {
          if (pm > 0.0) {
            kl.add(pp * (lp - lm));
          } else {
            infinite = true;
          }
        }
      }
    });
    total.kl += entry.weight * (infinite ? kInf : std::max(0.0, kl.value()));
    total.tvd += entry.weight * 0.5 * tvd.value();
  }
  return total;
}

double exact_kl(const PositiveScorer& p, const PositiveScorer& model,
                const ContextDistribution& contexts) {
  return exact_divergences(p, model, contexts).kl;
}

double exact_tvd(const PositiveScorer& p, const PositiveScorer& model,
                 const ContextDistribution& contexts) {
  return exact_divergences(p, model, contexts).tvd;
}

// ---------------------------------------------------------------------------
// Exact coefficients

namespace {

struct DualState {
  double objective = 0.0;  // sum_c tau_c log Z_c - lambda . mu
  Eigen::VectorXd moments;
  Eigen::MatrixXd covariance;
};

class DualEvaluator {
 public:
  DualEvaluator(const AutoregressiveModel& base, const ConstraintSpec& spec,
                const ContextDistribution& contexts, std::span<const Feature> pointwise)
      : base_(base), spec_(spec), contexts_(contexts), pointwise_(pointwise) {}

  bool supported(const Sequence& x, const Context& c) const {
    for (const auto& f : pointwise_) {
      if (f.evaluate(x, c) == 0.0) return false;
    }
    return true;
  }

  DualState operator()(const Eigen::VectorXd& lambda) const {
    const auto k = static_cast<Eigen::Index>(spec_.features.size());
    DualState st;
    st.moments = Eigen::VectorXd::Zero(k);
    st.covariance = Eigen::MatrixXd::Zero(k, k);
    Eigen::VectorXd phi(k);
    for (const auto& entry : contexts_.entries()) {
      if (entry.weight == 0.0) continue;
      // Shift by the first finite log-weight to keep exp() in range.
      double shift = std::numeric_limits<double>::quiet_NaN();
      double z = 0.0;
      Eigen::VectorXd m = Eigen::VectorXd::Zero(k);
      Eigen::MatrixXd s = Eigen::MatrixXd::Zero(k, k);
      for_each_scored(base_, entry.context, [&](const Sequence& x, double la) {
        if (la == -kInf || !supported(x, entry.context)) return;
        for (Eigen::Index j = 0; j < k; ++j) {
          phi[j] = spec_.features[static_cast<std::size_t>(j)].evaluate(x, entry.context);
        }
        const double lw = la + lambda.dot(phi);
        if (std::isnan(shift)) shift = lw;
        const double w = std::exp(lw - shift);
        z += w;
        m += w * phi;
        s += w * phi * phi.transpose();
      });
      if (!(z > 0.0)) throw InfeasibleConstraint("target has no support in a context");
      m /= z;
      s = s / z - m * m.transpose();
      st.objective += entry.weight * (shift + std::log(z));
      st.moments += entry.weight * m;
      st.covariance += entry.weight * s;
    }
    for (Eigen::Index j = 0; j < k; ++j) {
      st.objective -= lambda[j] * spec_.moments[static_cast<std::size_t>(j)];
    }
    return st;
  }

  /// Per-feature attainable range of tau-averaged moments.
  void check_feasible() const {
    const std::size_t k = spec_.features.size();
    std::vector<double> lo(k, 0.0);
    std::vector<double> hi(k, 0.0);
    for (const auto& entry : contexts_.entries()) {
      if (entry.weight == 0.0) continue;
      std::vector<double> cmin(k, kInf);
      std::vector<double> cmax(k, -kInf);
      for_each_scored(base_, entry.context, [&](const Sequence& x, double la) {
        if (la == -kInf || !supported(x, entry.context)) return;
        for (std::size_t j = 0; j < k; ++j) {
          const double v = spec_.features[j].evaluate(x, entry.context);
          cmin[j] = std::min(cmin[j], v);
          cmax[j] = std::max(cmax[j], v);
        }
      });
      if (cmin.empty() || cmin[0] == kInf) {
        throw InfeasibleConstraint("target has no support in context '" + entry.context.text + "'");
      }
      for (std::size_t j = 0; j < k; ++j) {
        lo[j] += entry.weight * cmin[j];
        hi[j] += entry.weight * cmax[j];
      }
    }
    for (std::size_t j = 0; j < k; ++j) {
      const double mu = spec_.moments[j];
      const bool degenerate = lo[j] == hi[j] && std::abs(mu - lo[j]) < 1e-12;
      if (!degenerate && !(lo[j] < mu && mu < hi[j])) {
        throw InfeasibleConstraint("desired moment " + std::to_string(mu) + " of feature '" +
                                   spec_.features[j].name() + "' is outside the attainable range (" +
                                   std::to_string(lo[j]) + ", " + std::to_string(hi[j]) + ")");
      }
    }
  }

 private:
  const AutoregressiveModel& base_;
  const ConstraintSpec& spec_;
  const ContextDistribution& contexts_;
  std::span<const Feature> pointwise_;
};

}  // namespace

LambdaSolution exact_lambda(const AutoregressiveModel& base, const ConstraintSpec& spec,
                            const ContextDistribution& contexts,
                            std::span<const Feature> pointwise) {
  spec.validate();
  const DualEvaluator dual(base, spec, contexts, pointwise);
  dual.check_feasible();

  const auto k = static_cast<Eigen::Index>(spec.features.size());
  Eigen::VectorXd target(k);
  for (Eigen::Index j = 0; j < k; ++j) target[j] = spec.moments[static_cast<std::size_t>(j)];

  constexpr std::size_t kMaxIterations = 200;
  constexpr double kGapTolerance = 1e-10;
  constexpr double kDamping = 1e-9;

  LambdaSolution sol;
  Eigen::VectorXd lambda = Eigen::VectorXd::Zero(k);
  DualState st = dual(lambda);
  for (; sol.iterations < kMaxIterations; ++sol.iterations) {
    const Eigen::VectorXd grad = st.moments - target;
    if (grad.lpNorm<Eigen::Infinity>() < kGapTolerance) break;
    const Eigen::MatrixXd h = st.covariance + kDamping * Eigen::MatrixXd::Identity(k, k);
    const Eigen::VectorXd step = -h.ldlt().solve(grad);
    const double slope = grad.dot(step);
    double t = 1.0;
    DualState next = dual(lambda + t * step);
    for (int halvings = 0; halvings < 60 && next.objective > st.objective + 1e-4 * t * slope;
         ++halvings) {
      t *= 0.5;
      next = dual(lambda + t * step);
    }
    lambda += t * step;
    st = std::move(next);
    if (!lambda.allFinite()) throw NumericalError("exact_lambda diverged");
  }
  sol.gap = (st.moments - target).lpNorm<Eigen::Infinity>();
  if (!(sol.gap < kGapTolerance)) {
    throw InfeasibleConstraint("exact_lambda did not reach the moment tolerance (gap " +
                               std::to_string(sol.gap) + ")");
  }
  sol.lambda.assign(lambda.data(), lambda.data() + k);
  return sol;
}

// ---------------------------------------------------------------------------
// QRS and DPG ground truth

QrsLaw exact_qrs_law(const PositiveScorer& target, const AutoregressiveModel& proposal,
                     double beta, const Context& context) {
  check_compatible(target, proposal);
  if (!(beta > 0.0)) throw InvalidArgument("beta must be positive");
  QrsLaw law;
  law.sequences = enumerate(target.vocab(), target.horizon());
  const auto sp = target.log_score(law.sequences, context);
  const auto sq = proposal.log_score(law.sequences, context);
  const std::size_t n = law.sequences.size();
  std::vector<double> big_p(n);
  std::vector<double> clipped(n);
  Accumulator z;
  Accumulator zr;
  for (std::size_t i = 0; i < n; ++i) {
    big_p[i] = std::exp(sp[i]);
    law.proposal.push_back(std::exp(sq[i]));
    clipped[i] = std::min(big_p[i], beta * law.proposal[i]);
    z.add(big_p[i]);
    zr.add(clipped[i]);
  }
  if (!(z.value() > 0.0)) throw NumericalError("target has zero mass");
  if (!(zr.value() > 0.0)) throw NumericalError("proposal misses the target support");
  law.acceptance_rate = zr.value() / beta;
  Accumulator tvd;
  Accumulator kl;
  bool infinite = false;
  for (std::size_t i = 0; i < n; ++i) {
    const double p = big_p[i] / z.value();
    const double r = clipped[i] / zr.value();
    law.target.push_back(p);
    law.output.push_back(r);
    tvd.add(std::abs(r - p));
    if (p > 0.0) {
      if (r > 0.0) {
        kl.add(p * std::log(p / r));
      } else {
        infinite = true;
      }
    }
  }
  law.tvd = 0.5 * tvd.value();
  law.kl = infinite ? kInf : std::max(0.0, kl.value());
  return law;
}

std::vector<double> exact_dpg_gradient(const PositiveScorer& target,
                                       const AutoregressiveModel& model,
                                       const ContextDistribution& contexts) {
  check_compatible(target, model);
  std::vector<double> grad(model.parameter_count(), 0.0);
  for (const auto& entry : contexts.entries()) {
    if (entry.weight == 0.0) continue;
    const double z = exact_partition(target, entry.context);
    if (!(z > 0.0)) throw NumericalError("target has zero mass in a context");
    for_each_scored(target, entry.context, [&](const Sequence& x, double s) {
      const double p = std::exp(s) / z;
      if (p > 0.0) model.accumulate_grad_log_score(x, entry.context, entry.weight * p, grad);
    });
  }
  return grad;
}

}  // namespace gdc::oracle
