#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "w2w/json_io.hpp"

namespace w2w {

// Exit codes shared by the command-line driver and the test suite.
inline constexpr int kExitPass = 0;
inline constexpr int kExitToleranceFailure = 1;
inline constexpr int kExitConfigError = 2;
inline constexpr int kExitSolverError = 3;

struct RunResult {
  int exit_code = 0;
  Json report;
};

/// Solve an inner problem described by a config document, write report.json
/// and plan.csv under out_dir, and grade the configured tolerances. Errors
/// are folded into the exit code (2 config, 3 solver) with the message in
/// report["error"].
RunResult run_inner(const Json& config, const std::string& out_dir);

/// Derivative, continuity, cylinder and Lipschitz checks, plus the optional
/// grid-refinement study that feeds the residual-vs-refinement series.
RunResult run_calculus(const Json& config, const std::string& out_dir);

/// Full ensemble pipeline: cost matrix, outer solve, deterministic-coupling
/// certificate, stationarity, map reconstruction, modulus identities.
RunResult run_outer(const Json& config, const std::string& out_dir);

/// Extract the "series" section of an existing report into long-format CSV
/// files (one per series group, header "series,x,y").
int run_plotdata(const std::string& report_path, const std::string& out_dir);

/// Driver used by the executable: load the config (or report, for plotdata),
/// apply command-line overrides, dispatch on task name.
int run_command(const std::string& task, const std::string& config_path,
                const std::string& out_dir_flag,
                std::optional<std::uint64_t> seed_override,
                std::optional<int> jobs_override);

}  // namespace w2w
