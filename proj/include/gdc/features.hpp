// Copyright 2026 The gdc Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "gdc/model.hpp"

namespace gdc {

enum class FeatureKind { general, positive, boolean };

std::string_view to_string(FeatureKind kind);

/// A named real-valued function of (sequence, context).
///
/// Evaluation checks the kind's range: booleans must return exactly 0 or 1,
/// positive features strictly positive values, and every feature a finite
/// value. Features must be pure; copies share the underlying callable.
class Feature {
 public:
  using Fn = std::function<double(const Sequence&, const Context&)>;

  Feature(std::string name, FeatureKind kind, Fn fn, nlohmann::json spec = nullptr);

  const std::string& name() const { return name_; }
  FeatureKind kind() const { return kind_; }
  /// Registry description ({name, builtin, args}); null for ad hoc features.
  const nlohmann::json& spec() const { return spec_; }

  double evaluate(const Sequence& sequence, const Context& context) const;

 private:
  std::string name_;
  FeatureKind kind_;
  Fn fn_;
  nlohmann::json spec_;
};

/// Pointwise product. Boolean when every factor is boolean.
Feature product(std::string name, std::vector<Feature> factors);

/// Row-major |samples| x |features| matrix.
struct FeatureMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;

  double operator()(std::size_t i, std::size_t j) const { return values[i * cols + j]; }
  std::span<const double> row(std::size_t i) const { return {values.data() + i * cols, cols}; }
};

/// Evaluates every feature on every sample. Errors name the failing sample.
FeatureMatrix batch_evaluate(std::span<const Feature> features,
                             std::span<const Sequence> samples, const Context& context);

/// Features paired with their desired moments.
struct ConstraintSpec {
  std::vector<Feature> features;
  std::vector<double> moments;

  /// Throws InvalidArgument on length mismatch or a boolean moment outside [0, 1].
  void validate() const;
  /// True when every feature is boolean with desired moment 1.
  bool pointwise() const;
};

/// Builds features from config objects {"name", "builtin", "args"}.
///
/// Built-ins:
///   contains_token      {token}        boolean, token occurs in the sequence
///   count_token         {token}        occurrences of token
///   length_fraction     {}             length / horizon
///   subset_of_context   {}             every token also occurs in the context
///   min_distinct_tokens {k}            boolean, at least k distinct tokens
///   table_reward        {table, default}  lookup by sequence text
///
/// `token` may be a symbol string or an integer id. An optional "kind" of
/// "positive" asks for strictly positive values to be enforced.
Feature make_feature(const nlohmann::json& spec, const Vocab& vocab, std::size_t horizon);

std::vector<std::string> builtin_feature_names();

}  // namespace gdc
