// Copyright 2026 The gdc Authors
// SPDX-License-Identifier: Apache-2.0

// gdc: command-line front end for constraining, tuning, sampling and
// verifying toy sequence models.
//
// Exit codes: 0 success, 1 failed verification or unexpected error,
// 2 configuration error, 3 infeasible constraint, 4 numerical abort.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"

#include "gdc/app/commands.hpp"
#include "gdc/app/config.hpp"
#include "gdc/error.hpp"

namespace {

enum Exit : int {
  kOk = 0,
  kFailed = 1,
  kConfig = 2,
  kInfeasible = 3,
  kNumerical = 4,
};

struct Args {
  std::string config_positional;
  std::string config_flag;
  std::optional<std::uint64_t> seed;
  bool verify = false;
  std::string out;
  std::string log = "both";
  std::string model;
  std::string target;
};

using Command = std::function<gdc::app::CommandResult(gdc::app::ExperimentConfig,
                                                      const gdc::app::RunOptions&)>;

void add_common(CLI::App* sub, Args& a, bool with_files) {
  sub->add_option("config_file", a.config_positional, "experiment config JSON");
  sub->add_option("--config", a.config_flag, "experiment config JSON");
  sub->add_option("--seed", a.seed, "seed for every stochastic component");
  sub->add_flag("--verify", a.verify, "check results against exact enumeration");
  sub->add_option("--out", a.out, "output directory");
  sub->add_option("--log", a.log, "metric sinks")
      ->check(CLI::IsMember({"console", "jsonl", "both"}));
  if (with_files) {
    sub->add_option("--model", a.model, "model JSON (proposal or model under test)");
    sub->add_option("--target", a.target, "target JSON");
  }
}

int run(const Args& a, const Command& cmd, bool allow_files_only) {
  gdc::app::RunOptions opts;
  opts.seed = a.seed;
  opts.verify = a.verify;
  if (!a.out.empty()) opts.out = a.out;
  opts.log = gdc::app::log_mode_from_string(a.log);
  if (!a.model.empty()) opts.model_path = a.model;
  if (!a.target.empty()) opts.target_path = a.target;
  opts.console = &std::cout;

  if (!a.config_positional.empty() && !a.config_flag.empty()) {
    throw gdc::ConfigError("give the config either positionally or with --config");
  }
  const std::string path = a.config_flag.empty() ? a.config_positional : a.config_flag;
  gdc::app::CommandResult result;
  if (path.empty()) {
    if (!allow_files_only) throw gdc::ConfigError("a config file is required");
    result = gdc::app::cmd_oracle_files(opts);
  } else {
    result = cmd(gdc::app::ExperimentConfig::load(path), opts);
  }
  if (opts.verify && !result.passed()) {
    std::cerr << "verification failed\n";
    return kFailed;
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Generation under distributional control on enumerable toy models"};
  app.require_subcommand(1);

  Args args;
  struct Entry {
    const char* name;
    const char* help;
    Command cmd;
    bool files;
  };
  const Entry entries[] = {
      {"fit-lambda", "fit the target's coefficients", gdc::app::cmd_fit_lambda, false},
      {"tune", "constrain, then tune a model toward the target", gdc::app::cmd_tune, false},
      {"qrs", "quasi-rejection sampling over a beta grid", gdc::app::cmd_qrs, true},
      {"oracle", "exact quantities by enumeration", gdc::app::cmd_oracle, true},
      {"experiment", "tune, then sample with QRS", gdc::app::cmd_experiment, false},
  };
  std::function<int()> chosen;
  for (const auto& e : entries) {
    CLI::App* sub = app.add_subcommand(e.name, e.help);
    add_common(sub, args, e.files);
    const bool files_only = std::string(e.name) == "oracle";
    sub->callback([&chosen, &args, cmd = e.cmd, files_only] {
      chosen = [&args, cmd, files_only] { return run(args, cmd, files_only); };
    });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    return chosen();
  } catch (const gdc::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const gdc::SpaceTooLarge& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const gdc::InvalidArgument& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const gdc::InfeasibleConstraint& e) {
    std::cerr << "infeasible constraint: " << e.what() << '\n';
    return kInfeasible;
  } catch (const gdc::NumericalError& e) {
    std::cerr << "numerical abort: " << e.what() << '\n';
    return kNumerical;
  } catch (const gdc::StarvationError& e) {
    std::cerr << "numerical abort: " << e.what() << '\n';
    return kNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFailed;
  }
}
