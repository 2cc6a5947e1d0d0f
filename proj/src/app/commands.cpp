// Copyright 2026 The gdc Authors
// SPDX-License-Identifier: Apache-2.0

#include "gdc/app/commands.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "gdc/error.hpp"
#include "gdc/metrics.hpp"
#include "gdc/oracle.hpp"
#include "gdc/qrs.hpp"
#include "gdc/tuner.hpp"

namespace gdc::app {
namespace {

using json = nlohmann::json;
namespace fs = std::filesystem;

constexpr const char* kBaseFile = "base_model.json";
constexpr const char* kTargetFile = "target.json";
constexpr const char* kModelFile = "model.json";
constexpr double kDefaultMomentTolerance = 0.02;

void say(const RunOptions& opts, const std::string& line) {
  if (opts.console != nullptr) *opts.console << line << '\n';
}

fs::path prepare_out(const ExperimentConfig& cfg, const RunOptions& opts) {
  const fs::path dir = opts.out ? *opts.out : fs::path(cfg.output_dir);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError(fmt::format("cannot create {}: {}", dir.string(), ec.message()));
  return dir;
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw IoError(fmt::format("cannot open {} for writing", path.string()));
  out << j.dump(2) << '\n';
  if (!out) throw IoError(fmt::format("failed writing {}", path.string()));
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(fmt::format("cannot open {}", path.string()));
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(fmt::format("{}: {}", path.string(), e.what()));
  }
}

AutoregressiveModel load_model(const fs::path& path) {
  try {
    return AutoregressiveModel::from_json(read_json(path));
  } catch (const json::exception& e) {
    throw ConfigError(fmt::format("{}: {}", path.string(), e.what()));
  } catch (const InvalidArgument& e) {
    throw ConfigError(fmt::format("{}: {}", path.string(), e.what()));
  }
}

EBMTarget load_target(const fs::path& path) {
  try {
    return EBMTarget::from_json(read_json(path), path.parent_path());
  } catch (const json::exception& e) {
    throw ConfigError(fmt::format("{}: {}", path.string(), e.what()));
  } catch (const InvalidArgument& e) {
    throw ConfigError(fmt::format("{}: {}", path.string(), e.what()));
  }
}

void apply_seed(ExperimentConfig& cfg, const RunOptions& opts) {
  if (opts.seed) cfg.override_seed(*opts.seed);
}

std::string fmt_real(double v) { return fmt::format("{:.6g}", v); }

void add_check(CommandResult& r, const RunOptions& opts, std::string name, bool passed,
               std::string detail) {
  say(opts, fmt::format("check {}: {} ({})", name, passed ? "PASS" : "FAIL", detail));
  r.checks.push_back({std::move(name), passed, std::move(detail)});
}

json checks_json(const std::vector<Check>& checks) {
  json out = json::array();
  for (const auto& c : checks) {
    out.push_back({{"name", c.name}, {"passed", c.passed}, {"detail", c.detail}});
  }
  return out;
}

/// Features named by verification checks: the configured features, or the
/// reward of an RLHF target.
std::vector<Feature> named_features(const ExperimentConfig& cfg, const AutoregressiveModel& base) {
  if (cfg.rlhf) return {make_feature(cfg.rlhf->reward, base.vocab(), base.horizon())};
  return cfg.build_features(base.vocab(), base.horizon());
}

const Feature& find_feature(const std::vector<Feature>& features, const std::string& name) {
  for (const auto& f : features) {
    if (f.name() == name) return f;
  }
  throw ConfigError(fmt::format("verify: no feature named '{}'", name));
}

void write_fit_outputs(const fs::path& dir, const TargetBundle& b) {
  write_json(dir / kBaseFile, b.base->to_json());
  write_json(dir / kTargetFile, b.target->to_json(kBaseFile));

  json report = {{"form", std::string(to_string(b.target->form()))},
                 {"pointwise_features", json::array()},
                 {"features", json::array()},
                 {"lambda", b.target->lambda()}};
  for (const auto& f : b.target->pointwise_features()) report["pointwise_features"].push_back(f.name());
  for (const auto& f : b.target->exponential_features()) report["features"].push_back(f.name());
  if (b.fit) {
    report["final_moments"] = b.fit->final_moments;
    report["final_gap"] = b.fit->final_gap;
    report["gap_norms"] = b.fit->gap_norms;
    std::ofstream csv(dir / "lambda_trajectory.csv");
    if (!csv) throw IoError("cannot write lambda_trajectory.csv");
    csv << "iteration";
    for (std::size_t k = 0; k < b.fit->lambda.size(); ++k) csv << ",lambda_" << k;
    csv << ",gap\n";
    for (std::size_t t = 0; t < b.fit->lambda_trajectory.size(); ++t) {
      csv << t;
      for (double l : b.fit->lambda_trajectory[t]) csv << ',' << fmt::format("{}", l);
      csv << ',' << fmt::format("{}", b.fit->gap_norms[t]) << '\n';
    }
  }
  write_json(dir / "fit_report.json", report);
}

void verify_target_moments(const ExperimentConfig& cfg, const TargetBundle& b, CommandResult& r,
                           const RunOptions& opts) {
  if (!b.spec) return;
  const double tol = cfg.verify.target_moment_tolerance.value_or(kDefaultMomentTolerance);
  const auto exact = oracle::exact_moments(*b.target, b.spec->features, b.contexts);
  for (std::size_t k = 0; k < exact.size(); ++k) {
    const double gap = std::abs(exact[k] - b.spec->moments[k]);
    add_check(r, opts, "target_moment:" + b.spec->features[k].name(), gap <= tol,
              fmt::format("exact {} desired {} tolerance {}", fmt_real(exact[k]),
                          fmt_real(b.spec->moments[k]), tol));
  }
}

void verify_tuned(const ExperimentConfig& cfg, const TargetBundle& b,
                  const AutoregressiveModel& model, CommandResult& r, const RunOptions& opts) {
  const VerifySpec& v = cfg.verify;
  verify_target_moments(cfg, b, r, opts);
  json exact = json::object();
  const double kl = oracle::exact_kl(*b.target, model, b.contexts);
  const double kl_base = oracle::exact_kl(*b.target, *b.base, b.contexts);
  exact["kl_target_model"] = kl;
  exact["kl_target_base"] = kl_base;
  exact["kl_model_base"] = oracle::exact_kl(model, *b.base, b.contexts);
  if (v.max_kl_target_model) {
    add_check(r, opts, "kl_target_model", kl < *v.max_kl_target_model,
              fmt::format("exact {} (base {}) limit {}", fmt_real(kl), fmt_real(kl_base),
                          *v.max_kl_target_model));
  }

  const auto features = named_features(cfg, *b.base);
  const ContextDistribution eval = cfg.build_eval_contexts();
  if (v.satisfaction_feature) {
    const Feature& f = find_feature(features, *v.satisfaction_feature);
    const double m = oracle::exact_moments(model, std::span(&f, 1), eval)[0];
    exact["satisfaction"] = m;
    add_check(r, opts, "satisfaction:" + f.name(), m >= v.min_satisfaction,
              fmt::format("exact {} minimum {}", fmt_real(m), v.min_satisfaction));
  }
  if (v.improves_feature) {
    const Feature& f = find_feature(features, *v.improves_feature);
    const double before = oracle::exact_moments(*b.base, std::span(&f, 1), eval)[0];
    const double after = oracle::exact_moments(model, std::span(&f, 1), eval)[0];
    exact["improves_feature"] = {{"base", before}, {"model", after}};
    add_check(r, opts, "improves:" + f.name(), after > before,
              fmt::format("base {} tuned {} on evaluation contexts", fmt_real(before),
                          fmt_real(after)));
  }
  if (v.moments_move_toward_targets && b.spec) {
    const auto before = oracle::exact_moments(*b.base, b.spec->features, b.contexts);
    const auto after = oracle::exact_moments(model, b.spec->features, b.contexts);
    for (std::size_t k = 0; k < before.size(); ++k) {
      const double mu = b.spec->moments[k];
      add_check(r, opts, "moment_moves:" + b.spec->features[k].name(),
                std::abs(after[k] - mu) < std::abs(before[k] - mu),
                fmt::format("base {} tuned {} desired {}", fmt_real(before[k]),
                            fmt_real(after[k]), fmt_real(mu)));
    }
    exact["base_moments"] = before;
    exact["model_moments"] = after;
  }
  r.report["exact"] = exact;
}

struct TuneRun {
  TargetBundle bundle;
  AutoregressiveModel model;
};

TuneRun run_tune(const ExperimentConfig& cfg, const RunOptions& opts, const fs::path& dir,
                 CommandResult& r) {
  TargetBundle b = build_target(cfg);
  write_fit_outputs(dir, b);
  say(opts, fmt::format("target form {}, lambda [{}]", to_string(b.target->form()),
                        fmt::join(b.target->lambda(), ", ")));

  MultiLogger logger;
  if (opts.console != nullptr && opts.log != LogMode::jsonl) {
    logger.attach(std::make_shared<ConsoleLogger>(*opts.console));
  }
  if (opts.log != LogMode::console) {
    logger.attach(std::make_shared<JsonlLogger>(dir / "metrics.jsonl"));
  }

  Tuner tuner(b.base->clone(false), *b.target, b.contexts, cfg.tuner);
  tuner.tune(&logger);
  AutoregressiveModel model = tuner.model();
  write_json(dir / kModelFile, model.to_json());
  r.report["steps"] = tuner.steps_taken();
  r.report["starved_batches"] = tuner.starvation_count();
  return {std::move(b), std::move(model)};
}

void run_qrs(const ExperimentConfig& cfg, const RunOptions& opts, const fs::path& dir,
             const EBMTarget& target, const AutoregressiveModel& proposal,
             const ContextDistribution& contexts, CommandResult& r) {
  if (!cfg.qrs) throw ConfigError("config has no 'qrs' section");
  const QrsSpec& q = *cfg.qrs;
  if (q.context_index >= contexts.size()) {
    throw ConfigError(fmt::format("qrs: context_index {} out of range", q.context_index));
  }
  const Context& ctx = contexts.entries()[q.context_index].context;

  Rng rng(q.seed);
  std::vector<double> betas = q.betas;
  double log_z = 0.0;
  if (q.beta_normalized) {
    log_z = estimate_log_partition(target, proposal, ctx, q.n_estimate, rng);
    for (double& b : betas) b *= std::exp(log_z);
  }
  const auto estimates = qrs_estimate(target, proposal, betas, ctx, q.n_estimate, rng);
  write_qrs_estimates_csv(dir / "qrs_estimates.csv", estimates);

  std::ofstream samples(dir / "qrs_samples.csv");
  if (!samples) throw IoError("cannot write qrs_samples.csv");
  samples << "beta,sequence,log_score\n";
  json runs = json::array();
  bool all_satisfy = true;
  for (std::size_t k = 0; k < betas.size(); ++k) {
    QrsConfig qc{betas[k], q.batch_size, q.seed + k};
    const QrsSample s = qrs_sample(target, proposal, qc, ctx, q.n_wanted);
    for (const auto& a : s.accepted) {
      samples << fmt::format("{}", betas[k]) << ',' << csv_field(a.sequence.text()) << ','
              << fmt::format("{}", a.log_score) << '\n';
      for (const auto& f : target.pointwise_features()) {
        if (f.evaluate(a.sequence, ctx) != 1.0) all_satisfy = false;
      }
    }
    const double empirical = static_cast<double>(s.accepted.size()) / static_cast<double>(s.attempts);
    runs.push_back({{"beta", betas[k]},
                    {"accepted", s.accepted.size()},
                    {"attempts", s.attempts},
                    {"empirical_acceptance_rate", empirical},
                    {"estimated_acceptance_rate", estimates[k].acceptance_rate},
                    {"estimated_tvd_to_target", estimates[k].tvd_to_target}});
    say(opts, fmt::format("qrs beta {}: accepted {} of {} (estimated AR {}, TVD {})",
                          fmt_real(betas[k]), s.accepted.size(), s.attempts,
                          fmt_real(estimates[k].acceptance_rate),
                          fmt_real(estimates[k].tvd_to_target)));
  }
  if (!samples) throw IoError("failed writing qrs_samples.csv");
  r.report["qrs"] = {{"log_partition_estimate", log_z}, {"runs", runs}};

  if (!opts.verify) return;
  std::vector<std::size_t> order(betas.size());
  for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return betas[a] < betas[b]; });
  bool ar_monotone = true;
  bool tvd_monotone = true;
  double prev_tvd = 1.0;
  for (std::size_t i = 0; i < order.size(); ++i) {
    if (i > 0 && estimates[order[i]].acceptance_rate >
                     estimates[order[i - 1]].acceptance_rate) {
      ar_monotone = false;
    }
    const double tvd = oracle::exact_qrs_law(target, proposal, betas[order[i]], ctx).tvd;
    if (tvd > prev_tvd + 1e-12) tvd_monotone = false;
    prev_tvd = tvd;
  }
  add_check(r, opts, "qrs_acceptance_monotone", ar_monotone, "acceptance rate non-increasing in beta");
  add_check(r, opts, "qrs_tvd_monotone", tvd_monotone, "exact TVD non-increasing in beta");
  if (!target.pointwise_features().empty()) {
    add_check(r, opts, "qrs_pointwise_satisfied", all_satisfy,
              "every accepted sample satisfies the pointwise features");
  }
}

void finish(CommandResult& r, const RunOptions& opts) {
  r.report["checks"] = checks_json(r.checks);
  if (opts.verify) write_json(r.out_dir / "verify.json", r.report);
}

/// Boolean features with desired moment 1 become factors, as constrain() does.
void split_pointwise(const ConstraintSpec& spec, std::vector<Feature>& pointwise,
                     ConstraintSpec& rest) {
  for (std::size_t k = 0; k < spec.features.size(); ++k) {
    if (spec.features[k].kind() == FeatureKind::boolean && spec.moments[k] == 1.0) {
      pointwise.push_back(spec.features[k]);
    } else {
      rest.features.push_back(spec.features[k]);
      rest.moments.push_back(spec.moments[k]);
    }
  }
}

json oracle_report(const EBMTarget& target, const PositiveScorer& model,
                   const ContextDistribution& contexts) {
  json report = {{"space_size", oracle::space_size(target.vocab(), target.horizon())}};
  json z = json::array();
  for (const auto& e : contexts.entries()) {
    z.push_back({{"context", e.context.text}, {"weight", e.weight},
                 {"partition", oracle::exact_partition(target, e.context)}});
  }
  report["partition"] = z;
  std::vector<Feature> features = target.pointwise_features();
  features.insert(features.end(), target.exponential_features().begin(),
                  target.exponential_features().end());
  const auto moments = oracle::exact_moments(target, features, contexts);
  json m = json::object();
  for (std::size_t k = 0; k < features.size(); ++k) m[features[k].name()] = moments[k];
  report["target_moments"] = m;
  report["lambda"] = target.lambda();
  const auto d = oracle::exact_divergences(target, model, contexts);
  report["kl_target_model"] = std::isinf(d.kl) ? json("inf") : json(d.kl);
  report["tvd_target_model"] = d.tvd;
  const double kl_mb = oracle::exact_kl(model, target.base(), contexts);
  report["kl_model_base"] = std::isinf(kl_mb) ? json("inf") : json(kl_mb);
  return report;
}

}  // namespace

LogMode log_mode_from_string(const std::string& name) {
  if (name == "console") return LogMode::console;
  if (name == "jsonl") return LogMode::jsonl;
  if (name == "both") return LogMode::both;
  throw ConfigError(fmt::format("unknown log mode '{}'", name));
}

bool CommandResult::passed() const {
  return std::all_of(checks.begin(), checks.end(), [](const Check& c) { return c.passed; });
}

TargetBundle build_target(const ExperimentConfig& cfg) {
  auto base = std::make_shared<const AutoregressiveModel>(cfg.build_base());
  ContextDistribution contexts = cfg.build_contexts();
  if (cfg.rlhf) {
    const Feature reward = make_feature(cfg.rlhf->reward, base->vocab(), base->horizon());
    auto target = std::make_shared<const EBMTarget>(rlhf_target(base, {reward, cfg.rlhf->beta}));
    return {base, std::move(contexts), std::nullopt, std::move(target), std::nullopt};
  }
  ConstraintSpec spec = cfg.build_constraints(base->vocab(), base->horizon());
  ConstrainResult c = constrain(base, spec, contexts, cfg.lambda_fit);
  auto target = std::make_shared<const EBMTarget>(std::move(c.target));
  return {base, std::move(contexts), std::move(spec), std::move(target), std::move(c.fit)};
}

CommandResult cmd_fit_lambda(ExperimentConfig cfg, const RunOptions& opts) {
  apply_seed(cfg, opts);
  CommandResult r;
  r.out_dir = prepare_out(cfg, opts);
  const TargetBundle b = build_target(cfg);
  write_fit_outputs(r.out_dir, b);
  say(opts, fmt::format("target form {}, lambda [{}]", to_string(b.target->form()),
                        fmt::join(b.target->lambda(), ", ")));
  if (opts.verify) verify_target_moments(cfg, b, r, opts);
  finish(r, opts);
  return r;
}

CommandResult cmd_tune(ExperimentConfig cfg, const RunOptions& opts) {
  apply_seed(cfg, opts);
  CommandResult r;
  r.out_dir = prepare_out(cfg, opts);
  TuneRun run = run_tune(cfg, opts, r.out_dir, r);
  if (opts.verify) verify_tuned(cfg, run.bundle, run.model, r, opts);
  finish(r, opts);
  return r;
}

CommandResult cmd_qrs(ExperimentConfig cfg, const RunOptions& opts) {
  apply_seed(cfg, opts);
  CommandResult r;
  r.out_dir = prepare_out(cfg, opts);
  std::shared_ptr<const EBMTarget> target;
  ContextDistribution contexts = cfg.build_contexts();
  if (opts.target_path) {
    target = std::make_shared<const EBMTarget>(load_target(*opts.target_path));
  } else {
    target = build_target(cfg).target;
  }
  const AutoregressiveModel proposal =
      opts.model_path ? load_model(*opts.model_path) : target->base().clone(true);
  run_qrs(cfg, opts, r.out_dir, *target, proposal, contexts, r);
  finish(r, opts);
  return r;
}

CommandResult cmd_oracle(ExperimentConfig cfg, const RunOptions& opts) {
  apply_seed(cfg, opts);
  CommandResult r;
  r.out_dir = prepare_out(cfg, opts);
  auto base = std::make_shared<const AutoregressiveModel>(cfg.build_base());
  const ContextDistribution contexts = cfg.build_contexts();

  std::shared_ptr<const EBMTarget> target;
  json extra = json::object();
  if (opts.target_path) {
    target = std::make_shared<const EBMTarget>(load_target(*opts.target_path));
  } else if (cfg.rlhf) {
    const Feature reward = make_feature(cfg.rlhf->reward, base->vocab(), base->horizon());
    target = std::make_shared<const EBMTarget>(rlhf_target(base, {reward, cfg.rlhf->beta}));
  } else {
    const ConstraintSpec spec = cfg.build_constraints(base->vocab(), base->horizon());
    std::vector<Feature> pointwise;
    ConstraintSpec rest;
    split_pointwise(spec, pointwise, rest);
    std::vector<double> lambda;
    if (!rest.features.empty()) {
      const auto sol = oracle::exact_lambda(*base, rest, contexts, pointwise);
      lambda = sol.lambda;
      extra["newton_iterations"] = sol.iterations;
      extra["newton_gap"] = sol.gap;
    }
    target = std::make_shared<const EBMTarget>(base, pointwise, rest.features, lambda);
    extra["desired_moments"] = spec.moments;
  }
  const AutoregressiveModel model = opts.model_path ? load_model(*opts.model_path) : *base;
  r.report = oracle_report(*target, model, contexts);
  for (auto& [k, v] : extra.items()) r.report[k] = v;
  write_json(r.out_dir / "oracle.json", r.report);
  if (opts.console != nullptr) *opts.console << r.report.dump(2) << '\n';
  return r;
}

CommandResult cmd_oracle_files(const RunOptions& opts) {
  if (!opts.target_path) throw ConfigError("oracle needs a config or --target");
  CommandResult r;
  r.out_dir = opts.out ? *opts.out : fs::path(".");
  const EBMTarget target = load_target(*opts.target_path);
  const AutoregressiveModel model =
      opts.model_path ? load_model(*opts.model_path) : target.base().clone(true);
  r.report = oracle_report(target, model, ContextDistribution::single());
  if (opts.out) {
    fs::create_directories(*opts.out);
    write_json(*opts.out / "oracle.json", r.report);
  }
  if (opts.console != nullptr) *opts.console << r.report.dump(2) << '\n';
  return r;
}

CommandResult cmd_experiment(ExperimentConfig cfg, const RunOptions& opts) {
  apply_seed(cfg, opts);
  CommandResult r;
  r.out_dir = prepare_out(cfg, opts);
  TuneRun run = run_tune(cfg, opts, r.out_dir, r);
  if (opts.verify) verify_tuned(cfg, run.bundle, run.model, r, opts);
  if (cfg.qrs) {
    run_qrs(cfg, opts, r.out_dir, *run.bundle.target, run.model.clone(true), run.bundle.contexts,
            r);
  }
  finish(r, opts);
  return r;
}

}  // namespace gdc::app
