// Copyright 2026 The gdc Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "gdc/model.hpp"
#include "gdc/rng.hpp"

namespace gdc {

struct WeightedContext {
  Context context;
  double weight;
};

/// Finite distribution over conditioning contexts. The unconditional case is
/// the single empty context.
class ContextDistribution {
 public:
  /// Weights must be non-negative and sum to 1 within 1e-9.
  explicit ContextDistribution(std::vector<WeightedContext> entries);

  static ContextDistribution single(Context context = {});
  static ContextDistribution uniform(const std::vector<std::string>& texts);
  /// One context per non-blank line, uniformly weighted.
  static ContextDistribution from_file(const std::filesystem::path& path);

  const std::vector<WeightedContext>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  const Context& draw(Rng& rng) const;

 private:
  std::vector<WeightedContext> entries_;
  std::vector<double> weights_;
};

}  // namespace gdc
