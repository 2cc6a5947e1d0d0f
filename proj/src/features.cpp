// Copyright 2026 The gdc Authors
// SPDX-License-Identifier: Apache-2.0

#include "gdc/features.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "gdc/error.hpp"

namespace gdc {

std::string_view to_string(FeatureKind kind) {
  switch (kind) {
    case FeatureKind::general:
      return "general";
    case FeatureKind::positive:
      return "positive";
    case FeatureKind::boolean:
      return "boolean";
  }
  return "general";
}

Feature::Feature(std::string name, FeatureKind kind, Fn fn, nlohmann::json spec)
    : name_(std::move(name)), kind_(kind), fn_(std::move(fn)), spec_(std::move(spec)) {
  if (!fn_) throw InvalidArgument("feature '" + name_ + "' has no function");
}

double Feature::evaluate(const Sequence& sequence, const Context& context) const {
  const double value = fn_(sequence, context);
  if (!std::isfinite(value)) {
    throw InvalidArgument("feature '" + name_ + "' returned a non-finite value");
  }
  if (kind_ == FeatureKind::boolean && value != 0.0 && value != 1.0) {
    throw InvalidArgument("boolean feature '" + name_ + "' returned a value other than 0 or 1");
  }
  if (kind_ == FeatureKind::positive && !(value > 0.0)) {
    throw InvalidArgument("positive feature '" + name_ + "' returned a non-positive value");
  }
  return value;
}

Feature product(std::string name, std::vector<Feature> factors) {
  if (factors.empty()) throw InvalidArgument("product of no features");
  const bool all_boolean = std::all_of(factors.begin(), factors.end(), [](const Feature& f) {
    return f.kind() == FeatureKind::boolean;
  });
  const bool all_positive = std::all_of(factors.begin(), factors.end(), [](const Feature& f) {
    return f.kind() == FeatureKind::positive;
  });
  const FeatureKind kind = all_boolean    ? FeatureKind::boolean
                           : all_positive ? FeatureKind::positive
                                          : FeatureKind::general;
  return Feature(std::move(name), kind,
                 [factors = std::move(factors)](const Sequence& s, const Context& c) {
                   double v = 1.0;
                   for (const auto& f : factors) v *= f.evaluate(s, c);
                   return v;
                 });
}

FeatureMatrix batch_evaluate(std::span<const Feature> features, std::span<const Sequence> samples,
                             const Context& context) {
  FeatureMatrix m;
  m.rows = samples.size();
  m.cols = features.size();
  m.values.resize(m.rows * m.cols);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    for (std::size_t j = 0; j < features.size(); ++j) {
      try {
        m.values[i * m.cols + j] = features[j].evaluate(samples[i], context);
      } catch (const Error& e) {
        throw InvalidArgument("sample " + std::to_string(i) + ": " + e.what());
      }
    }
  }
  return m;
}

void ConstraintSpec::validate() const {
  if (features.size() != moments.size()) {
    throw InvalidArgument("constraint spec: features and moments differ in length");
  }
  if (features.empty()) throw InvalidArgument("constraint spec has no features");
  for (std::size_t i = 0; i < features.size(); ++i) {
    if (!std::isfinite(moments[i])) throw InvalidArgument("constraint moment must be finite");
    if (features[i].kind() == FeatureKind::boolean && (moments[i] < 0.0 || moments[i] > 1.0)) {
      throw InvalidArgument("boolean feature '" + features[i].name() +
                            "' needs a desired moment in [0, 1]");
    }
  }
}

bool ConstraintSpec::pointwise() const {
  for (std::size_t i = 0; i < features.size(); ++i) {
    if (features[i].kind() != FeatureKind::boolean || moments[i] != 1.0) return false;
  }
  return !features.empty();
}

// ---------------------------------------------------------------------------
// Registry

namespace {

TokenId token_arg(const nlohmann::json& args, const Vocab& vocab) {
  if (!args.contains("token")) throw ConfigError("feature needs a 'token' argument");
  const auto& t = args.at("token");
  if (t.is_number_integer()) {
    const auto id = t.get<long long>();
    if (id < 0 || static_cast<std::size_t>(id) >= vocab.size() || id == vocab.eos()) {
      throw ConfigError("feature token id out of range");
    }
    return static_cast<TokenId>(id);
  }
  if (t.is_string()) {
    const auto id = vocab.find(t.get<std::string>());
    if (!id || *id == vocab.eos()) throw ConfigError("unknown feature token: " + t.dump());
    return *id;
  }
  throw ConfigError("feature 'token' must be a symbol or id");
}

using Builder = Feature (*)(const std::string& name, const nlohmann::json& args,
                            const Vocab& vocab, std::size_t horizon, const nlohmann::json& spec);

Feature build_contains_token(const std::string& name, const nlohmann::json& args,
                             const Vocab& vocab, std::size_t, const nlohmann::json& spec) {
  const TokenId token = token_arg(args, vocab);
  return Feature(
      name, FeatureKind::boolean,
      [token](const Sequence& s, const Context&) {
        const auto c = s.content();
        return std::find(c.begin(), c.end(), token) != c.end() ? 1.0 : 0.0;
      },
      spec);
}

Feature build_count_token(const std::string& name, const nlohmann::json& args,
                          const Vocab& vocab, std::size_t, const nlohmann::json& spec) {
  const TokenId token = token_arg(args, vocab);
  return Feature(
      name, FeatureKind::general,
      [token](const Sequence& s, const Context&) {
        const auto c = s.content();
        return static_cast<double>(std::count(c.begin(), c.end(), token));
      },
      spec);
}

Feature build_length_fraction(const std::string& name, const nlohmann::json&, const Vocab&,
                              std::size_t horizon, const nlohmann::json& spec) {
  const auto h = static_cast<double>(horizon);
  return Feature(
      name, FeatureKind::general,
      [h](const Sequence& s, const Context&) { return static_cast<double>(s.length()) / h; },
      spec);
}

Feature build_subset_of_context(const std::string& name, const nlohmann::json&,
                                const Vocab& vocab, std::size_t, const nlohmann::json& spec) {
  return Feature(
      name, FeatureKind::boolean,
      [vocab](const Sequence& s, const Context& c) {
        const auto ctx = vocab.tokenize(c.text);
        const std::set<TokenId> allowed(ctx.begin(), ctx.end());
        for (TokenId t : s.content()) {
          if (!allowed.contains(t)) return 0.0;
        }
        return 1.0;
      },
      spec);
}

Feature build_min_distinct_tokens(const std::string& name, const nlohmann::json& args,
                                  const Vocab&, std::size_t, const nlohmann::json& spec) {
  if (!args.contains("k") || !args.at("k").is_number_integer() || args.at("k").get<int>() < 0) {
    throw ConfigError("min_distinct_tokens needs a non-negative integer 'k'");
  }
  const auto k = args.at("k").get<std::size_t>();
  return Feature(
      name, FeatureKind::boolean,
      [k](const Sequence& s, const Context&) {
        const auto c = s.content();
        return std::set<TokenId>(c.begin(), c.end()).size() >= k ? 1.0 : 0.0;
      },
      spec);
}

Feature build_table_reward(const std::string& name, const nlohmann::json& args, const Vocab&,
                           std::size_t, const nlohmann::json& spec) {
  std::map<std::string, double> table;
  if (args.contains("table")) {
    try {
      table = args.at("table").get<std::map<std::string, double>>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError("table_reward 'table' must map sequence text to numbers");
    }
  }
  const double fallback = args.value("default", 0.0);
  return Feature(
      name, FeatureKind::general,
      [table = std::move(table), fallback](const Sequence& s, const Context&) {
        const auto it = table.find(s.text());
        return it == table.end() ? fallback : it->second;
      },
      spec);
}

const std::map<std::string, Builder>& registry() {
  static const std::map<std::string, Builder> builders = {
      {"contains_token", build_contains_token},
      {"count_token", build_count_token},
      {"length_fraction", build_length_fraction},
      {"subset_of_context", build_subset_of_context},
      {"min_distinct_tokens", build_min_distinct_tokens},
      {"table_reward", build_table_reward},
  };
  return builders;
}

}  // namespace

Feature make_feature(const nlohmann::json& spec, const Vocab& vocab, std::size_t horizon) {
  if (!spec.is_object() || !spec.contains("builtin") || !spec.at("builtin").is_string()) {
    throw ConfigError("feature spec needs a 'builtin' name: " + spec.dump());
  }
  const auto builtin = spec.at("builtin").get<std::string>();
  const auto it = registry().find(builtin);
  if (it == registry().end()) throw ConfigError("unknown feature builtin: " + builtin);
  const auto name = spec.value("name", builtin);
  const nlohmann::json args = spec.value("args", nlohmann::json::object());
  Feature f = it->second(name, args, vocab, horizon, spec);
  if (spec.contains("kind")) {
    const auto kind = spec.at("kind").get<std::string>();
    if (kind == "positive" && f.kind() == FeatureKind::general) {
      return Feature(name, FeatureKind::positive,
                     [f](const Sequence& s, const Context& c) { return f.evaluate(s, c); }, spec);
    }
    if (kind != std::string(to_string(f.kind()))) {
      throw ConfigError("feature '" + name + "' cannot have kind " + kind);
    }
  }
  return f;
}

std::vector<std::string> builtin_feature_names() {
  std::vector<std::string> names;
  for (const auto& [name, _] : registry()) names.push_back(name);
  return names;
}

}  // namespace gdc
