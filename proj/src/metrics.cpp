// Copyright 2026 The gdc Authors
// SPDX-License-Identifier: Apache-2.0

#include "gdc/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string_view>

#include <fmt/format.h>

#include "gdc/error.hpp"
#include "gdc/kernels.hpp"

namespace gdc {
namespace {

using ojson = nlohmann::ordered_json;

double clamp_log_ratio(double d) {
  if (std::isnan(d)) return d;
  return std::clamp(d, -kLogRatioClamp, kLogRatioClamp);
}

void require_same_size(std::size_t a, std::size_t b, std::size_t c, const char* op) {
  if (a != b || a != c) throw InvalidArgument(fmt::format("{}: batch length mismatch", op));
}

std::vector<Sequence> sequences_of(std::vector<SampledSequence>& samples,
                                   std::vector<double>& log_probs) {
  std::vector<Sequence> seqs;
  seqs.reserve(samples.size());
  log_probs.clear();
  log_probs.reserve(samples.size());
  for (auto& s : samples) {
    log_probs.push_back(s.log_prob);
    seqs.push_back(std::move(s.sequence));
  }
  return seqs;
}

ojson real_to_json(double v) {
  if (std::isnan(v)) return "nan";
  if (v == std::numeric_limits<double>::infinity()) return "inf";
  if (v == -std::numeric_limits<double>::infinity()) return "-inf";
  return v;
}

double real_from_json(const ojson& j, std::string_view key) {
  if (j.is_number()) return j.get<double>();
  if (j.is_string()) {
    const auto& s = j.get_ref<const std::string&>();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  }
  throw InvalidArgument(fmt::format("metrics record: '{}' is not a real", key));
}

bool same_real(double a, double b) {
  return (std::isnan(a) && std::isnan(b)) || a == b;
}

std::string format_real(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return fmt::format("{:.6g}", v);
}

}  // namespace

Estimate kl_target_model_from_batch(std::span<const double> target_log,
                                    std::span<const double> proposal_log,
                                    std::span<const double> model_log) {
  require_same_size(target_log.size(), proposal_log.size(), model_log.size(),
                    "kl_target_model_from_batch");
  const std::size_t n = target_log.size();
  std::vector<double> log_w(n);
  std::vector<double> g(n);
  for (std::size_t i = 0; i < n; ++i) {
    log_w[i] = target_log[i] - proposal_log[i];
    g[i] = clamp_log_ratio(target_log[i] - model_log[i]);
  }
  const SnisWeights w = snis_weights(log_w);
  Estimate e;
  if (w.starved()) return e;

  const double a = kernels::weighted_sum(w.normalized, g);
  e.value = a - w.log_partition();

  // Influence function of (A - log Zhat) at sample i:
  //   (w_i / Z)(g_i - A - 1) + 1,  with w_i / Z = n wbar_i.
  const double dn = static_cast<double>(n);
  double ss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double r = dn * w.normalized[i];
    const double inf = r == 0.0 ? 1.0 : r * (g[i] - a - 1.0) + 1.0;
    ss += inf * inf;
  }
  e.std_error = std::sqrt(ss) / dn;
  e.valid = std::isfinite(e.value);
  return e;
}

Estimate kl_model_base_from_batch(std::span<const double> model_log,
                                  std::span<const double> proposal_log,
                                  std::span<const double> base_log) {
  require_same_size(model_log.size(), proposal_log.size(), base_log.size(),
                    "kl_model_base_from_batch");
  const std::size_t n = model_log.size();
  std::vector<double> log_v(n);
  std::vector<double> f(n);
  for (std::size_t i = 0; i < n; ++i) {
    log_v[i] = model_log[i] - proposal_log[i];
    f[i] = clamp_log_ratio(model_log[i] - base_log[i]);
  }
  return snis_mean(snis_weights(log_v), f);
}

Estimate estimate_kl_target_model(const PositiveScorer& target, const PositiveScorer& model,
                                  const AutoregressiveModel& proposal,
                                  const ContextDistribution& contexts, std::size_t n, Rng& rng) {
  if (n < 2) throw InvalidArgument("estimate_kl_target_model: n must be at least 2");
  Estimate total{0.0, 0.0, true};
  double var = 0.0;
  std::vector<double> q_log;
  for (const auto& entry : contexts.entries()) {
    if (entry.weight == 0.0) continue;
    auto samples = proposal.sample(entry.context, n, rng);
    const auto seqs = sequences_of(samples, q_log);
    const auto p_log = target.log_score(seqs, entry.context);
    const auto m_log = model.log_score(seqs, entry.context);
    const Estimate e = kl_target_model_from_batch(p_log, q_log, m_log);
    if (!e.valid) return Estimate{};
    total.value += entry.weight * e.value;
    var += entry.weight * entry.weight * e.std_error * e.std_error;
  }
  total.std_error = std::sqrt(var);
  return total;
}

std::vector<Estimate> estimate_feature_moments(const PositiveScorer& target,
                                               std::span<const Feature> features,
                                               const AutoregressiveModel& proposal,
                                               const ContextDistribution& contexts,
                                               std::size_t n, Rng& rng) {
  if (n < 2) throw InvalidArgument("estimate_feature_moments: n must be at least 2");
  const std::size_t k = features.size();
  std::vector<Estimate> out(k, Estimate{0.0, 0.0, true});
  std::vector<double> var(k, 0.0);
  std::vector<double> q_log;
  std::vector<double> column(n);
  for (const auto& entry : contexts.entries()) {
    if (entry.weight == 0.0) continue;
    auto samples = proposal.sample(entry.context, n, rng);
    const auto seqs = sequences_of(samples, q_log);
    auto log_w = target.log_score(seqs, entry.context);
    for (std::size_t i = 0; i < n; ++i) log_w[i] -= q_log[i];
    const SnisWeights w = snis_weights(log_w);
    if (w.starved()) return std::vector<Estimate>(k);
    const FeatureMatrix fm = batch_evaluate(features, seqs, entry.context);
    for (std::size_t j = 0; j < k; ++j) {
      for (std::size_t i = 0; i < n; ++i) column[i] = fm(i, j);
      const Estimate e = snis_mean(w, column);
      out[j].value += entry.weight * e.value;
      var[j] += entry.weight * entry.weight * e.std_error * e.std_error;
    }
  }
  for (std::size_t j = 0; j < k; ++j) out[j].std_error = std::sqrt(var[j]);
  return out;
}

// ---------------------------------------------------------------------------

nlohmann::ordered_json StepMetrics::to_json() const {
  ojson j = ojson::object();
  j["step"] = step;
  j["kl_target_model"] = real_to_json(kl_target_model);
  j["kl_model_base"] = real_to_json(kl_model_base);
  j["z_estimate"] = real_to_json(z_estimate);
  ojson moments = ojson::object();
  for (const auto& [name, value] : feature_moments) moments[name] = real_to_json(value);
  j["feature_moments"] = std::move(moments);
  j["proposal_refreshed"] = proposal_refreshed;
  if (acceptance_diag) {
    j["acceptance_diag"] = {{"beta", real_to_json(acceptance_diag->beta)},
                            {"acceptance_rate", real_to_json(acceptance_diag->acceptance_rate)}};
  }
  for (const auto& [key, value] : extra.items()) j[key] = value;
  return j;
}

StepMetrics StepMetrics::from_json(const nlohmann::ordered_json& j) {
  if (!j.is_object()) throw InvalidArgument("metrics record must be a JSON object");
  StepMetrics m;
  try {
    m.step = j.at("step").get<std::size_t>();
    m.kl_target_model = real_from_json(j.at("kl_target_model"), "kl_target_model");
    m.kl_model_base = real_from_json(j.at("kl_model_base"), "kl_model_base");
    m.z_estimate = real_from_json(j.at("z_estimate"), "z_estimate");
    for (const auto& [name, value] : j.at("feature_moments").items()) {
      m.feature_moments.emplace_back(name, real_from_json(value, name));
    }
    m.proposal_refreshed = j.at("proposal_refreshed").get<bool>();
    if (auto it = j.find("acceptance_diag"); it != j.end()) {
      m.acceptance_diag = AcceptanceDiag{real_from_json(it->at("beta"), "beta"),
                                         real_from_json(it->at("acceptance_rate"),
                                                        "acceptance_rate")};
    }
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(fmt::format("metrics record: {}", e.what()));
  }
  static constexpr std::string_view kKnown[] = {"step",           "kl_target_model",
                                                "kl_model_base",  "z_estimate",
                                                "feature_moments", "proposal_refreshed",
                                                "acceptance_diag"};
  for (const auto& [key, value] : j.items()) {
    if (std::find(std::begin(kKnown), std::end(kKnown), key) == std::end(kKnown)) {
      m.extra[key] = value;
    }
  }
  return m;
}

bool StepMetrics::operator==(const StepMetrics& o) const {
  if (step != o.step || proposal_refreshed != o.proposal_refreshed) return false;
  if (!same_real(kl_target_model, o.kl_target_model) ||
      !same_real(kl_model_base, o.kl_model_base) || !same_real(z_estimate, o.z_estimate)) {
    return false;
  }
  if (feature_moments.size() != o.feature_moments.size()) return false;
  for (std::size_t i = 0; i < feature_moments.size(); ++i) {
    if (feature_moments[i].first != o.feature_moments[i].first ||
        !same_real(feature_moments[i].second, o.feature_moments[i].second)) {
      return false;
    }
  }
  if (acceptance_diag.has_value() != o.acceptance_diag.has_value()) return false;
  if (acceptance_diag && (!same_real(acceptance_diag->beta, o.acceptance_diag->beta) ||
                          !same_real(acceptance_diag->acceptance_rate,
                                     o.acceptance_diag->acceptance_rate))) {
    return false;
  }
  return extra == o.extra;
}

std::vector<StepMetrics> read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(fmt::format("cannot open {}", path.string()));
  std::vector<StepMetrics> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    ojson j;
    try {
      j = ojson::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw InvalidArgument(fmt::format("{}:{}: {}", path.string(), line_no, e.what()));
    }
    out.push_back(StepMetrics::from_json(j));
  }
  return out;
}

// ---------------------------------------------------------------------------

void ConsoleLogger::log(const StepMetrics& m) {
  std::string line = fmt::format("step {:>5}  kl_target_model {}  kl_model_base {}  z {}", m.step,
                                 format_real(m.kl_target_model), format_real(m.kl_model_base),
                                 format_real(m.z_estimate));
  for (const auto& [name, value] : m.feature_moments) {
    line += fmt::format("  {}={}", name, format_real(value));
  }
  if (m.acceptance_diag) {
    line += fmt::format("  qrs(beta={}, ar={})", format_real(m.acceptance_diag->beta),
                        format_real(m.acceptance_diag->acceptance_rate));
  }
  if (m.proposal_refreshed) line += "  [proposal refreshed]";
  out_ << line << '\n';
  out_.flush();
}

JsonlLogger::JsonlLogger(const std::filesystem::path& path)
    : path_(path), out_(path, std::ios::out | std::ios::trunc) {
  if (!out_) throw IoError(fmt::format("cannot open {} for writing", path.string()));
}

void JsonlLogger::log(const StepMetrics& m) {
  out_ << m.to_json().dump() << '\n';
  out_.flush();
  if (!out_) {
    throw IoError(fmt::format("step {}: failed writing metrics to {}", m.step, path_.string()));
  }
}

void MultiLogger::log(const StepMetrics& m) {
  for (const auto& logger : loggers_) logger->log(m);
}

}  // namespace gdc
