#include <CLI11.hpp>

#include <cstdint>
#include <optional>
#include <string>

#include "w2w/runner.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Hierarchical optimal transport on discretized manifolds"};
  app.require_subcommand(1);

  struct Common {
    std::string config;
    std::string out;
    std::optional<std::uint64_t> seed;
    std::optional<int> jobs;
  };

  auto add_common = [](CLI::App* sub, Common& c, bool config_is_report) {
    sub->add_option("--config", c.config,
                    config_is_report ? "Path to a previously written report"
                                     : "Path to the experiment config JSON")
        ->required();
    sub->add_option("--out", c.out, "Output directory");
    sub->add_option_function<std::uint64_t>(
        "--seed", [&c](std::uint64_t s) { c.seed = s; },
        "Override the config seed");
    sub->add_option_function<int>(
        "--jobs", [&c](int j) { c.jobs = j; },
        "Worker threads for cost-matrix entries");
  };

  Common inner_args, calculus_args, outer_args, plot_args;
  CLI::App* inner = app.add_subcommand(
      "inner", "Solve one inner transport problem and grade its certificates");
  add_common(inner, inner_args, false);
  CLI::App* calculus = app.add_subcommand(
      "calculus", "Derivative, continuity, cylinder and Lipschitz checks");
  add_common(calculus, calculus_args, false);
  CLI::App* outer = app.add_subcommand(
      "outer", "Ensemble pipeline: solve, certify, stationarity, map formula");
  add_common(outer, outer_args, false);
  CLI::App* plotdata = app.add_subcommand(
      "plotdata", "Extract series from a report into long-format CSV");
  add_common(plotdata, plot_args, true);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    // CLI11's exit code for usage errors is remapped to the documented
    // config-error code; --help stays 0.
    return code == 0 ? 0 : w2w::kExitConfigError;
  }

  if (inner->parsed()) {
    return w2w::run_command("inner", inner_args.config, inner_args.out,
                            inner_args.seed, inner_args.jobs);
  }
  if (calculus->parsed()) {
    return w2w::run_command("calculus", calculus_args.config, calculus_args.out,
                            calculus_args.seed, calculus_args.jobs);
  }
  if (outer->parsed()) {
    return w2w::run_command("outer", outer_args.config, outer_args.out,
                            outer_args.seed, outer_args.jobs);
  }
  return w2w::run_command("plotdata", plot_args.config, plot_args.out,
                          plot_args.seed, plot_args.jobs);
}
