// Copyright 2026 The gdc Authors
// SPDX-License-Identifier: Apache-2.0

#include "gdc/context_distribution.hpp"

#include <cmath>
#include <fstream>

#include "gdc/error.hpp"

namespace gdc {

ContextDistribution::ContextDistribution(std::vector<WeightedContext> entries)
    : entries_(std::move(entries)) {
  if (entries_.empty()) throw InvalidArgument("context distribution needs at least one entry");
  double total = 0.0;
  for (const auto& e : entries_) {
    if (!(e.weight >= 0.0) || !std::isfinite(e.weight)) {
      throw InvalidArgument("context weights must be finite and non-negative");
    }
    total += e.weight;
    weights_.push_back(e.weight);
  }
  if (std::abs(total - 1.0) > 1e-9) throw InvalidArgument("context weights must sum to 1");
}

ContextDistribution ContextDistribution::single(Context context) {
  return ContextDistribution({{std::move(context), 1.0}});
}

ContextDistribution ContextDistribution::uniform(const std::vector<std::string>& texts) {
  if (texts.empty()) throw InvalidArgument("context list is empty");
  std::vector<WeightedContext> entries;
  for (const auto& t : texts) {
    entries.push_back({Context{t}, 1.0 / static_cast<double>(texts.size())});
  }
  return ContextDistribution(std::move(entries));
}

ContextDistribution ContextDistribution::from_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open context file: " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    lines.push_back(line);
  }
  if (lines.empty()) throw ConfigError("context file has no contexts: " + path.string());
  return uniform(lines);
}

const Context& ContextDistribution::draw(Rng& rng) const {
  if (entries_.size() == 1) return entries_.front().context;
  return entries_[rng.categorical(weights_)].context;
}

}  // namespace gdc
