// Copyright 2026 The gdc Authors
// SPDX-License-Identifier: Apache-2.0

#include <filesystem>
#include <fstream>

#include "doctest.h"

#include "gdc/app/commands.hpp"
#include "gdc/app/config.hpp"
#include "gdc/error.hpp"

using gdc::app::ExperimentConfig;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

const fs::path kConfigs = fs::path(GDC_SOURCE_DIR) / "configs";

json minimal() {
  return json::parse(R"({
    "model": {"tokens": ["a", "b"], "t_max": 2},
    "features": [{"name": "has_a", "builtin": "contains_token", "args": {"token": "a"}}],
    "moments": [1.0]
  })");
}

void expect_config_error(const json& j) {
  CAPTURE(j.dump());
  CHECK_THROWS_AS(ExperimentConfig::from_json(j, kConfigs), gdc::ConfigError);
}

}  // namespace

TEST_CASE("shipped configs round-trip") {
  for (const char* name : {"amazing_toy", "entity_toy", "moments_toy", "rlhf_toy"}) {
    CAPTURE(name);
    const auto cfg = ExperimentConfig::load(kConfigs / (std::string(name) + ".json"));
    CHECK(cfg.name == name);
    const json once = cfg.to_json();
    const auto again = ExperimentConfig::from_json(json::parse(once.dump()), kConfigs);
    CHECK(again.to_json() == once);
    CHECK_NOTHROW(cfg.build_contexts());
    const auto base = cfg.build_base();
    CHECK(base.frozen());
    if (!cfg.rlhf) CHECK(cfg.build_constraints(base.vocab(), base.horizon()).features.size() ==
                         cfg.moments.size());
  }
}

TEST_CASE("context files resolve against the config directory") {
  const auto cfg = ExperimentConfig::load(kConfigs / "entity_toy.json");
  CHECK(cfg.build_contexts().size() == 8);
  CHECK(cfg.build_eval_contexts().size() == 4);
  const auto single = ExperimentConfig::from_json(minimal(), kConfigs);
  CHECK(single.build_contexts().size() == 1);
  CHECK(single.build_eval_contexts().size() == 1);
}

TEST_CASE("seed overrides reach every stochastic component") {
  auto cfg = ExperimentConfig::load(kConfigs / "amazing_toy.json");
  const auto init = cfg.model.init_seed;
  cfg.override_seed(77);
  CHECK(cfg.tuner.seed == 77);
  CHECK(cfg.lambda_fit.seed == 77);
  REQUIRE(cfg.qrs.has_value());
  CHECK(cfg.qrs->seed == 77);
  CHECK(cfg.model.init_seed == init);
}

TEST_CASE("malformed configs are config errors") {
  expect_config_error(json::array());
  {
    auto j = minimal();
    j.erase("model");
    expect_config_error(j);
  }
  {
    auto j = minimal();
    j["features"][0]["builtin"] = "no_such_feature";
    expect_config_error(j);
  }
  {
    auto j = minimal();
    j["moments"] = {1.0, 0.5};
    expect_config_error(j);
  }
  {
    auto j = minimal();
    j["rlhf"] = {{"reward", {{"builtin", "length_fraction"}}}, {"beta", 1.0}};
    expect_config_error(j);
  }
  {
    auto j = minimal();
    j["contexts"] = {{"file", "data/missing.txt"}};
    expect_config_error(j);
  }
  {
    auto j = minimal();
    j["tuner"] = {{"n_samples_per_step", 100}, {"sampling_size", 30}};
    expect_config_error(j);
  }
  {
    auto j = minimal();
    j["model"]["t_max"] = "two";
    expect_config_error(j);
  }

  const auto bad = fs::temp_directory_path() / "gdc_bad_config.json";
  {
    std::ofstream out(bad);
    out << "{ not json";
  }
  CHECK_THROWS_AS(ExperimentConfig::load(bad), gdc::ConfigError);
  fs::remove(bad);
  CHECK_THROWS_AS(ExperimentConfig::load(kConfigs / "nope.json"), gdc::ConfigError);
}

TEST_CASE("fit-lambda writes its artifacts") {
  const auto out = fs::temp_directory_path() / "gdc_fit_cmd";
  fs::remove_all(out);
  gdc::app::RunOptions opts;
  opts.out = out;
  opts.verify = true;
  const auto r = gdc::app::cmd_fit_lambda(ExperimentConfig::load(kConfigs / "moments_toy.json"),
                                          opts);
  CHECK(r.passed());
  for (const char* f : {"base_model.json", "target.json", "fit_report.json",
                        "lambda_trajectory.csv", "verify.json"}) {
    CAPTURE(f);
    CHECK(fs::exists(out / f));
  }
  fs::remove_all(out);
}
