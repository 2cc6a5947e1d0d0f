// Copyright 2026 The gdc Authors
// SPDX-License-Identifier: Apache-2.0

#include "gdc/app/config.hpp"

#include <algorithm>
#include <fstream>

#include <fmt/format.h>

#include "gdc/error.hpp"
#include "gdc/rng.hpp"

namespace gdc::app {
namespace {

using json = nlohmann::json;

template <typename T>
void read_optional(const json& j, const char* key, std::optional<T>& out) {
  if (auto it = j.find(key); it != j.end() && !it->is_null()) out = it->get<T>();
}

const json& require(const json& j, const char* key, const char* where) {
  auto it = j.find(key);
  if (it == j.end()) throw ConfigError(fmt::format("{}: missing '{}'", where, key));
  return *it;
}

}  // namespace

json ModelSpec::to_json() const {
  if (path) return {{"path", *path}};
  return {{"tokens", tokens},
          {"eos", eos},
          {"t_max", t_max},
          {"order", order},
          {"context_copy", context_copy},
          {"init", {{"seed", init_seed}, {"scale", init_scale}, {"eos_bias", eos_bias}}}};
}

ModelSpec ModelSpec::from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("model: expected an object");
  ModelSpec m;
  read_optional(j, "path", m.path);
  if (m.path) return m;
  m.tokens = require(j, "tokens", "model").get<std::vector<std::string>>();
  m.eos = j.value("eos", m.eos);
  m.t_max = require(j, "t_max", "model").get<std::size_t>();
  m.order = j.value("order", m.order);
  m.context_copy = j.value("context_copy", m.context_copy);
  if (auto it = j.find("init"); it != j.end()) {
    m.init_seed = it->value("seed", m.init_seed);
    m.init_scale = it->value("scale", m.init_scale);
    m.eos_bias = it->value("eos_bias", m.eos_bias);
  }
  if (m.tokens.empty()) throw ConfigError("model: at least one token is required");
  if (m.t_max < 1) throw ConfigError("model: t_max must be at least 1");
  if (std::find(m.tokens.begin(), m.tokens.end(), m.eos) != m.tokens.end()) {
    throw ConfigError("model: the eos symbol must not be listed among tokens");
  }
  return m;
}

json ContextSpec::to_json() const {
  if (file) return {{"file", *file}};
  return {{"inline", inline_contexts}};
}

ContextSpec ContextSpec::from_json(const json& j) {
  ContextSpec c;
  if (j.is_array()) {
    c.inline_contexts = j.get<std::vector<std::string>>();
    return c;
  }
  if (!j.is_object()) throw ConfigError("contexts: expected a list or an object");
  read_optional(j, "file", c.file);
  if (auto it = j.find("inline"); it != j.end()) {
    c.inline_contexts = it->get<std::vector<std::string>>();
  }
  if (c.file && !c.inline_contexts.empty()) {
    throw ConfigError("contexts: give either 'inline' or 'file', not both");
  }
  return c;
}

json QrsSpec::to_json() const {
  return {{"betas", betas},
          {"beta_normalized", beta_normalized},
          {"n_estimate", n_estimate},
          {"n_wanted", n_wanted},
          {"batch_size", batch_size},
          {"context_index", context_index},
          {"seed", seed}};
}

QrsSpec QrsSpec::from_json(const json& j) {
  QrsSpec q;
  q.betas = require(j, "betas", "qrs").get<std::vector<double>>();
  q.beta_normalized = j.value("beta_normalized", q.beta_normalized);
  q.n_estimate = j.value("n_estimate", q.n_estimate);
  q.n_wanted = j.value("n_wanted", q.n_wanted);
  q.batch_size = j.value("batch_size", q.batch_size);
  q.context_index = j.value("context_index", q.context_index);
  q.seed = j.value("seed", q.seed);
  if (q.betas.empty()) throw ConfigError("qrs: the beta grid is empty");
  for (double b : q.betas) {
    if (!(b > 0.0)) throw ConfigError("qrs: every beta must be positive");
  }
  if (q.n_estimate < 1 || q.batch_size < 1) throw ConfigError("qrs: counts must be at least 1");
  return q;
}

json VerifySpec::to_json() const {
  json j = json::object();
  if (max_kl_target_model) j["max_kl_target_model"] = *max_kl_target_model;
  if (satisfaction_feature) {
    j["satisfaction"] = {{"feature", *satisfaction_feature}, {"min", min_satisfaction}};
  }
  if (improves_feature) j["improves_feature"] = *improves_feature;
  if (moments_move_toward_targets) j["moments_move_toward_targets"] = true;
  if (target_moment_tolerance) j["target_moment_tolerance"] = *target_moment_tolerance;
  return j;
}

VerifySpec VerifySpec::from_json(const json& j) {
  VerifySpec v;
  read_optional(j, "max_kl_target_model", v.max_kl_target_model);
  if (auto it = j.find("satisfaction"); it != j.end()) {
    v.satisfaction_feature = require(*it, "feature", "verify.satisfaction").get<std::string>();
    v.min_satisfaction = require(*it, "min", "verify.satisfaction").get<double>();
  }
  read_optional(j, "improves_feature", v.improves_feature);
  v.moments_move_toward_targets = j.value("moments_move_toward_targets", false);
  read_optional(j, "target_moment_tolerance", v.target_moment_tolerance);
  return v;
}

ExperimentConfig ExperimentConfig::from_json(const json& j,
                                             const std::filesystem::path& base_dir) {
  if (!j.is_object()) throw ConfigError("config: expected a JSON object");
  ExperimentConfig c;
  c.base_dir = base_dir;
  try {
    c.name = j.value("name", std::string("experiment"));
    c.model = ModelSpec::from_json(require(j, "model", "config"));
    if (auto it = j.find("features"); it != j.end()) c.features = it->get<std::vector<json>>();
    if (auto it = j.find("moments"); it != j.end()) c.moments = it->get<std::vector<double>>();
    if (auto it = j.find("rlhf"); it != j.end()) {
      c.rlhf = RlhfSpec{require(*it, "reward", "rlhf"), require(*it, "beta", "rlhf").get<double>()};
    }
    if (auto it = j.find("contexts"); it != j.end()) c.contexts = ContextSpec::from_json(*it);
    if (auto it = j.find("eval_contexts"); it != j.end()) {
      c.eval_contexts = ContextSpec::from_json(*it);
    }
    if (auto it = j.find("lambda_fit"); it != j.end()) {
      c.lambda_fit = LambdaFitConfig::from_json(*it);
    }
    if (auto it = j.find("tuner"); it != j.end()) c.tuner = TunerConfig::from_json(*it);
    if (auto it = j.find("qrs"); it != j.end()) c.qrs = QrsSpec::from_json(*it);
    if (auto it = j.find("verify"); it != j.end()) c.verify = VerifySpec::from_json(*it);
    c.output_dir = j.value("output_dir", c.output_dir);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(fmt::format("config: {}", e.what()));
  } catch (const InvalidArgument& e) {
    throw ConfigError(fmt::format("config: {}", e.what()));
  }

  const auto known = builtin_feature_names();
  auto check_builtin = [&](const json& spec) {
    if (!spec.is_object() || !spec.contains("builtin") || !spec.at("builtin").is_string()) {
      throw ConfigError("feature spec needs a 'builtin' name: " + spec.dump());
    }
    const auto name = spec.at("builtin").get<std::string>();
    if (std::find(known.begin(), known.end(), name) == known.end()) {
      throw ConfigError("unknown feature builtin: " + name);
    }
  };
  for (const auto& f : c.features) check_builtin(f);
  if (c.rlhf) {
    check_builtin(c.rlhf->reward);
    if (!(c.rlhf->beta > 0.0)) throw ConfigError("rlhf: beta must be positive");
    if (!c.features.empty()) throw ConfigError("config: 'rlhf' and 'features' are exclusive");
  } else {
    if (c.features.empty()) throw ConfigError("config: no features and no rlhf reward");
    if (c.moments.size() != c.features.size()) {
      throw ConfigError(fmt::format("config: {} features but {} moments", c.features.size(),
                                    c.moments.size()));
    }
  }
  for (const ContextSpec* spec : {&c.contexts, &c.eval_contexts}) {
    if (spec->file && !std::filesystem::exists(c.resolve(*spec->file))) {
      throw ConfigError("context file not found: " + c.resolve(*spec->file).string());
    }
  }
  if (c.model.path && !std::filesystem::exists(c.resolve(*c.model.path))) {
    throw ConfigError("model file not found: " + c.resolve(*c.model.path).string());
  }
  try {
    c.lambda_fit.validate();
    c.tuner.validate();
  } catch (const InvalidArgument& e) {
    throw ConfigError(fmt::format("config: {}", e.what()));
  }
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(fmt::format("{}: {}", path.string(), e.what()));
  }
  return from_json(j, path.parent_path());
}

json ExperimentConfig::to_json() const {
  json j = {{"name", name}, {"model", model.to_json()}};
  if (rlhf) {
    j["rlhf"] = {{"reward", rlhf->reward}, {"beta", rlhf->beta}};
  } else {
    j["features"] = features;
    j["moments"] = moments;
  }
  if (!contexts.empty()) j["contexts"] = contexts.to_json();
  if (!eval_contexts.empty()) j["eval_contexts"] = eval_contexts.to_json();
  j["lambda_fit"] = lambda_fit.to_json();
  j["tuner"] = tuner.to_json();
  if (qrs) j["qrs"] = qrs->to_json();
  j["verify"] = verify.to_json();
  j["output_dir"] = output_dir;
  return j;
}

void ExperimentConfig::override_seed(std::uint64_t seed) {
  lambda_fit.seed = seed;
  tuner.seed = seed;
  if (qrs) qrs->seed = seed;
}

std::filesystem::path ExperimentConfig::resolve(const std::string& path) const {
  const std::filesystem::path p(path);
  return p.is_absolute() ? p : base_dir / p;
}

AutoregressiveModel ExperimentConfig::build_base() const {
  if (model.path) {
    std::ifstream in(resolve(*model.path));
    if (!in) throw ConfigError("cannot open model " + resolve(*model.path).string());
    try {
      return AutoregressiveModel::from_json(nlohmann::json::parse(in)).clone(true);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(fmt::format("{}: {}", *model.path, e.what()));
    }
  }
  std::vector<std::string> symbols = model.tokens;
  symbols.push_back(model.eos);
  Rng rng(model.init_seed);
  return AutoregressiveModel::random_softmax(Vocab(symbols, symbols.size() - 1), model.t_max,
                                             model.order, model.context_copy, model.init_scale,
                                             model.eos_bias, rng)
      .clone(true);
}

std::vector<Feature> ExperimentConfig::build_features(const Vocab& vocab,
                                                      std::size_t horizon) const {
  std::vector<Feature> out;
  for (const auto& spec : features) out.push_back(make_feature(spec, vocab, horizon));
  return out;
}

ConstraintSpec ExperimentConfig::build_constraints(const Vocab& vocab, std::size_t horizon) const {
  ConstraintSpec spec{build_features(vocab, horizon), moments};
  try {
    spec.validate();
  } catch (const InvalidArgument& e) {
    throw ConfigError(e.what());
  }
  return spec;
}

namespace {

ContextDistribution build(const ExperimentConfig& c, const ContextSpec& spec) {
  if (spec.file) return ContextDistribution::from_file(c.resolve(*spec.file));
  if (spec.inline_contexts.empty()) return ContextDistribution::single();
  return ContextDistribution::uniform(spec.inline_contexts);
}

}  // namespace

ContextDistribution ExperimentConfig::build_contexts() const { return build(*this, contexts); }

ContextDistribution ExperimentConfig::build_eval_contexts() const {
  return eval_contexts.empty() ? build_contexts() : build(*this, eval_contexts);
}

}  // namespace gdc::app
