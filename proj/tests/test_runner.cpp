#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "w2w/runner.hpp"

using w2w::Json;
using w2w::RunResult;

namespace fs = std::filesystem;

namespace {

std::string fixture_path(const std::string& name) {
  return std::string(W2W_FIXTURE_DIR) + "/" + name;
}

Json load_json(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE_MESSAGE(in.good(), "cannot open " << path);
  Json j;
  in >> j;
  return j;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE_MESSAGE(in.good(), "cannot open " << path.string());
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  REQUIRE(out.good());
  out << content;
}

/// Scratch directory under the system temp root, wiped on entry so reruns
/// start clean.
fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("w2w_runner_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

/// Field-for-field comparison: numbers within 1e-9, everything else exact.
void compare_json(const Json& a, const Json& b, const std::string& where) {
  INFO("at " << where);
  if (a.is_object()) {
    REQUIRE(b.is_object());
    REQUIRE(a.size() == b.size());
    for (const auto& [key, value] : a.items()) {
      REQUIRE_MESSAGE(b.contains(key), "missing key " << key);
      compare_json(value, b.at(key), where + "." + key);
    }
    return;
  }
  if (a.is_array()) {
    REQUIRE(b.is_array());
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      compare_json(a.at(i), b.at(i), where + "[" + std::to_string(i) + "]");
    }
    return;
  }
  if (a.is_number()) {
    REQUIRE(b.is_number());
    const double x = a.get<double>();
    const double y = b.get<double>();
    CHECK(std::abs(x - y) <= 1e-9 * (1.0 + std::max(std::abs(x), std::abs(y))));
    return;
  }
  CHECK(a == b);
}

int run_cli(const std::string& args) {
  const std::string cmd =
      std::string(W2W_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  REQUIRE(status != -1);
  REQUIRE(WIFEXITED(status));
  return WEXITSTATUS(status);
}

}  // namespace

TEST_CASE("a delta pair produces the exact report and plan artifacts") {
  const fs::path dir = scratch("delta");
  const Json config = load_json(fixture_path("inner_delta_circle16.json"));
  const RunResult r = w2w::run_inner(config, dir.string());
  CHECK(r.exit_code == w2w::kExitPass);
  CHECK(r.report.at("pass").get<bool>());
  CHECK(r.report.at("cost").get<double>() == 0.0625);
  CHECK(r.report.at("w2").get<double>() == 0.25);
  for (const auto& [name, ok] : r.report.at("verdicts").items()) {
    INFO("verdict " << name);
    CHECK(ok.get<bool>());
  }
  // The written report parses back to exactly the returned document, and the
  // plan holds the single unit entry moving node 0 to node 4.
  CHECK(load_json((dir / "report.json").string()) == r.report);
  CHECK(read_file(dir / "plan.csv") == "i,j,gamma\n0,4,1\n");
}

TEST_CASE("a missed expected cost downgrades the exit code to one") {
  const fs::path dir = scratch("misscost");
  Json config = load_json(fixture_path("inner_delta_circle16.json"));
  config["expected_cost"] = 0.07;
  const RunResult r = w2w::run_inner(config, dir.string());
  CHECK(r.exit_code == w2w::kExitToleranceFailure);
  CHECK_FALSE(r.report.at("pass").get<bool>());
  CHECK_FALSE(r.report.at("verdicts").at("expected_cost").get<bool>());
  CHECK(r.report.at("verdicts").at("duality_gap").get<bool>());
  // The graded report is still persisted for inspection.
  CHECK(fs::exists(dir / "report.json"));
}

TEST_CASE("malformed configs exit with the config code and an error report") {
  SUBCASE("missing manifold section") {
    const fs::path dir = scratch("noman");
    const RunResult r = w2w::run_inner(Json{{"source", Json::object()}},
                                       dir.string());
    CHECK(r.exit_code == w2w::kExitConfigError);
    CHECK(r.report.contains("error"));
    CHECK(fs::exists(dir / "report.json"));
    // Partial artifacts are discarded on failure.
    CHECK_FALSE(fs::exists(dir / "plan.csv"));
  }
  SUBCASE("unknown solver method") {
    const fs::path dir = scratch("nomethod");
    Json config = load_json(fixture_path("inner_delta_circle16.json"));
    config["solver"]["method"] = "simulated annealing";
    const RunResult r = w2w::run_inner(config, dir.string());
    CHECK(r.exit_code == w2w::kExitConfigError);
    CHECK(r.report.at("error").get<std::string>().find("method") !=
          std::string::npos);
  }
  SUBCASE("unknown measure type") {
    const fs::path dir = scratch("nomeasure");
    Json config = load_json(fixture_path("inner_delta_circle16.json"));
    config["source"] = Json{{"type", "gaussian"}};
    const RunResult r = w2w::run_inner(config, dir.string());
    CHECK(r.exit_code == w2w::kExitConfigError);
  }
}

TEST_CASE("a solver that cannot converge exits with the solver code") {
  const fs::path dir = scratch("noconv");
  Json config = load_json(fixture_path("inner_circle32_bumps.json"));
  config.erase("epsilon_sweep");
  config["solver"] = Json{{"method", "entropic"},
                          {"epsilon", 1e-4},
                          {"max_iterations", 3},
                          {"epsilon_scaling", false},
                          {"marginal_tolerance", 1e-12}};
  const RunResult r = w2w::run_inner(config, dir.string());
  CHECK(r.exit_code == w2w::kExitSolverError);
  CHECK(r.report.contains("error"));
  CHECK(fs::exists(dir / "report.json"));
  CHECK_FALSE(fs::exists(dir / "plan.csv"));
}

TEST_CASE("the entropic method passes under its own tolerance scale") {
  const fs::path dir = scratch("entropic");
  Json config = load_json(fixture_path("inner_circle32_bumps.json"));
  config.erase("epsilon_sweep");
  config["solver"] = Json{{"method", "entropic"}, {"epsilon", 0.005}};
  const RunResult r = w2w::run_inner(config, dir.string());
  CHECK(r.exit_code == w2w::kExitPass);
  CHECK(r.report.at("pass").get<bool>());
  // The regularized cost overshoots the exact one but stays within the
  // epsilon-scaled grading bands.
  const Json exact =
      w2w::run_inner(load_json(fixture_path("inner_circle32_bumps.json")),
                     scratch("entropic_ref").string())
          .report;
  CHECK(r.report.at("cost").get<double>() >=
        exact.at("cost").get<double>() - 1e-9);
  CHECK(std::abs(r.report.at("cost").get<double>() -
                 exact.at("cost").get<double>()) <= 0.01);
}

TEST_CASE("the bump-pair fixture reproduces its golden report") {
  const fs::path dir = scratch("golden");
  const Json config = load_json(fixture_path("inner_circle32_bumps.json"));
  Json produced = w2w::run_inner(config, dir.string()).report;
  Json golden = load_json(fixture_path("golden/inner_circle32_bumps.report.json"));
  produced.erase("meta");
  golden.erase("meta");
  compare_json(golden, produced, "report");
}

TEST_CASE("the calculus fixture passes every configured check") {
  const fs::path dir = scratch("calculus");
  const Json config = load_json(fixture_path("calculus_circle64.json"));
  const RunResult r = w2w::run_calculus(config, dir.string());
  CHECK(r.exit_code == w2w::kExitPass);
  const Json& v = r.report.at("verdicts");
  for (const char* name : {"derivative", "continuity",
                           "continuity_constant_exact", "directional",
                           "lipschitz", "refinement"}) {
    INFO("verdict " << name);
    CHECK(v.at(name).get<bool>());
  }
  const Json& pts =
      r.report.at("series").at("residual_vs_refinement").at(
          "mean_relative_residual");
  REQUIRE(pts.size() == 2);
  CHECK(pts.at(0).at(0).get<double>() == 32.0);
  CHECK(pts.at(1).at(0).get<double>() == 64.0);
  // Halving the spacing shrinks the mean residual by the graded factor.
  CHECK(pts.at(1).at(1).get<double>() <=
        0.75 * pts.at(0).at(1).get<double>());
  REQUIRE(r.report.at("refinement").at("ratios").size() == 1);
}

TEST_CASE("a refinement study off the circle is a config error") {
  const fs::path dir = scratch("refine_torus");
  Json config;
  config["manifold"] = Json{{"kind", "flat_torus"}, {"n_u", 8}, {"n_v", 8}};
  config["source"] = Json{{"type", "uniform"}};
  config["checks"]["refinement"] = Json{{"sizes", Json::array({8, 16})}};
  const RunResult r = w2w::run_calculus(config, dir.string());
  CHECK(r.exit_code == w2w::kExitConfigError);
}

TEST_CASE("the ensemble fixtures drive the full outer pipeline") {
  SUBCASE("three atoms, squared cost") {
    const fs::path dir = scratch("outer_n3");
    const Json config = load_json(fixture_path("outer_n3_circle32.json"));
    const RunResult r = w2w::run_outer(config, dir.string());
    CHECK(r.exit_code == w2w::kExitPass);
    for (const auto& [name, ok] : r.report.at("verdicts").items()) {
      INFO("verdict " << name);
      CHECK(ok.get<bool>());
    }
    CHECK(r.report.at("assignment") == Json::array({2, 1, 0}));
    CHECK(r.report.at("stationarity").size() == 3);
    CHECK(r.report.at("map_formula").size() == 3);
    CHECK(r.report.at("U").size() == 3);
    CHECK(r.report.at("V").size() == 3);
    for (const char* f : {"report.json", "plan.csv", "cost_matrix.csv",
                          "w2sq_matrix.csv"}) {
      INFO("artifact " << f);
      CHECK(fs::exists(dir / f));
    }
  }
  SUBCASE("single target") {
    const fs::path dir = scratch("outer_single");
    const Json config = load_json(fixture_path("outer_single_target.json"));
    const RunResult r = w2w::run_outer(config, dir.string());
    CHECK(r.exit_code == w2w::kExitPass);
    CHECK(r.report.at("verdicts").at("expected_assignment").get<bool>());
    CHECK(r.report.at("stationarity").at(0).at("max_abs_alpha_prime")
              .get<double>() <= 1e-12);
  }
  SUBCASE("quartic modulus skips the map formula") {
    const fs::path dir = scratch("outer_hq");
    const Json config = load_json(fixture_path("outer_h_quartic.json"));
    const RunResult r = w2w::run_outer(config, dir.string());
    CHECK(r.exit_code == w2w::kExitPass);
    CHECK(r.report.contains("h_identity"));
    CHECK(r.report.contains("stationarity"));
    // The reconstruction formula only applies to the plain squared cost.
    CHECK_FALSE(r.report.contains("map_formula"));
    CHECK_FALSE(r.report.at("verdicts").contains("map_formula"));
  }
  SUBCASE("a tabulated modulus parses and runs") {
    const fs::path dir = scratch("outer_table");
    Json config = load_json(fixture_path("outer_h_quartic.json"));
    config.erase("expected_assignment");
    Json s = Json::array(), v = Json::array();
    for (int i = 0; i < 9; ++i) {
      const double x = 0.6 * i / 8.0;
      s.push_back(x);
      v.push_back(x * x + x * x * x * x);
    }
    config["cost"] = Json{{"kind", "h_of_w2"},
                          {"table", Json{{"s", s}, {"values", v}}}};
    // The chain-rule check differentiates the interpolant by central
    // difference; stencils that straddle a spline knot pick up the jump in
    // its third derivative (measured 3.6e-7 here), so the analytic-modulus
    // default of 1e-8 does not apply to tables.
    config["h_identities"]["chain_rule_tolerance"] = 1e-5;
    const RunResult r = w2w::run_outer(config, dir.string());
    CHECK(r.exit_code == w2w::kExitPass);
  }
}

TEST_CASE("reports are deterministic up to the timing metadata") {
  const Json config = load_json(fixture_path("outer_n3_circle32.json"));
  const fs::path d1 = scratch("det1");
  const fs::path d2 = scratch("det2");
  Json r1 = w2w::run_outer(config, d1.string()).report;
  Json r2 = w2w::run_outer(config, d2.string()).report;
  r1.erase("meta");
  r2.erase("meta");
  CHECK(r1 == r2);
  CHECK(read_file(d1 / "plan.csv") == read_file(d2 / "plan.csv"));
  CHECK(read_file(d1 / "cost_matrix.csv") == read_file(d2 / "cost_matrix.csv"));

  // Thread count changes scheduling but not a single reported value.
  Json parallel = config;
  parallel["jobs"] = 4;
  Json r4 = w2w::run_outer(parallel, scratch("det4").string()).report;
  r4.erase("meta");
  r4.erase("config");
  Json r1bare = r1;
  r1bare.erase("config");
  CHECK(r1bare == r4);
}

TEST_CASE("plotdata extracts series into long-format csv") {
  SUBCASE("golden extraction") {
    const fs::path dir = scratch("plot");
    const int code = w2w::run_plotdata(
        fixture_path("golden/inner_circle32_bumps.report.json"),
        dir.string());
    CHECK(code == w2w::kExitPass);
    CHECK(read_file(dir / "cost_vs_epsilon.csv") ==
          read_file(fixture_path("golden/cost_vs_epsilon.csv")));
  }
  SUBCASE("a report without series produces no csv files") {
    const fs::path dir = scratch("plot_empty");
    const fs::path rep = dir / "r.json";
    write_file(rep, "{\"cost\": 1.5}\n");
    CHECK(w2w::run_plotdata(rep.string(), (dir / "out").string()) ==
          w2w::kExitPass);
    CHECK(fs::is_directory(dir / "out"));
    CHECK(fs::is_empty(dir / "out"));
  }
  SUBCASE("groups without points still get their header") {
    const fs::path dir = scratch("plot_header");
    const fs::path rep = dir / "r.json";
    write_file(rep, "{\"series\": {\"empty\": {}, \"flat\": [[1,2]]}}\n");
    CHECK(w2w::run_plotdata(rep.string(), (dir / "out").string()) ==
          w2w::kExitPass);
    CHECK(read_file(dir / "out" / "empty.csv") == "series,x,y\n");
    CHECK(read_file(dir / "out" / "flat.csv") == "series,x,y\n");
  }
  SUBCASE("missing or malformed reports are config errors") {
    const fs::path dir = scratch("plot_bad");
    CHECK(w2w::run_plotdata((dir / "nothere.json").string(),
                            (dir / "out").string()) ==
          w2w::kExitConfigError);
    const fs::path rep = dir / "broken.json";
    write_file(rep, "{not json");
    CHECK(w2w::run_plotdata(rep.string(), (dir / "out").string()) ==
          w2w::kExitConfigError);
  }
}

TEST_CASE("the driver dispatches tasks and applies overrides") {
  SUBCASE("unknown task and missing config") {
    CHECK(w2w::run_command("transmogrify",
                           fixture_path("inner_delta_circle16.json"),
                           scratch("cmd_bad").string(), std::nullopt,
                           std::nullopt) == w2w::kExitConfigError);
    CHECK(w2w::run_command("inner", "/nonexistent/config.json",
                           scratch("cmd_miss").string(), std::nullopt,
                           std::nullopt) == w2w::kExitConfigError);
  }
  SUBCASE("seed override lands in the echoed config") {
    const fs::path dir = scratch("cmd_seed");
    CHECK(w2w::run_command("inner", fixture_path("inner_circle32_bumps.json"),
                           dir.string(), 99, std::nullopt) == w2w::kExitPass);
    const Json rep = load_json((dir / "report.json").string());
    CHECK(rep.at("config").at("seed").get<std::uint64_t>() == 99);
  }
  SUBCASE("jobs override reaches the outer pipeline") {
    const fs::path dir = scratch("cmd_jobs");
    CHECK(w2w::run_command("outer", fixture_path("outer_n3_circle32.json"),
                           dir.string(), std::nullopt, 2) == w2w::kExitPass);
    const Json rep = load_json((dir / "report.json").string());
    CHECK(rep.at("config").at("jobs").get<int>() == 2);
  }
  SUBCASE("the config may choose the output directory") {
    const fs::path dir = scratch("cmd_outdir");
    Json config = load_json(fixture_path("inner_delta_circle16.json"));
    config["out_dir"] = (dir / "from_config").string();
    const fs::path cfg = dir / "cfg.json";
    write_file(cfg, config.dump(2) + "\n");
    CHECK(w2w::run_command("inner", cfg.string(), "", std::nullopt,
                           std::nullopt) == w2w::kExitPass);
    CHECK(fs::exists(dir / "from_config" / "report.json"));
    // An explicit flag wins over the config value.
    CHECK(w2w::run_command("inner", cfg.string(),
                           (dir / "from_flag").string(), std::nullopt,
                           std::nullopt) == w2w::kExitPass);
    CHECK(fs::exists(dir / "from_flag" / "report.json"));
  }
}

TEST_CASE("the command line binary honors the documented exit codes") {
  const fs::path dir = scratch("cli");
  CHECK(run_cli("inner --config " + fixture_path("inner_delta_circle16.json") +
                " --out " + (dir / "pass").string()) == 0);
  CHECK(fs::exists(dir / "pass" / "report.json"));

  Json miss = load_json(fixture_path("inner_delta_circle16.json"));
  miss["expected_cost"] = 0.07;
  write_file(dir / "miss.json", miss.dump(2) + "\n");
  CHECK(run_cli("inner --config " + (dir / "miss.json").string() + " --out " +
                (dir / "miss").string()) == 1);

  CHECK(run_cli("inner --config /nonexistent.json --out " +
                (dir / "none").string()) == 2);
  CHECK(run_cli("") == 2);           // a subcommand is required
  CHECK(run_cli("--help") == 0);
  CHECK(run_cli("plotdata --config " +
                fixture_path("golden/inner_circle32_bumps.report.json") +
                " --out " + (dir / "plot").string()) == 0);
  CHECK(read_file(dir / "plot" / "cost_vs_epsilon.csv") ==
        read_file(fixture_path("golden/cost_vs_epsilon.csv")));

  CHECK(run_cli("inner --config " +
                fixture_path("inner_circle32_bumps.json") + " --out " +
                (dir / "seeded").string() + " --seed 123") == 0);
  const Json rep = load_json((dir / "seeded" / "report.json").string());
  CHECK(rep.at("config").at("seed").get<std::uint64_t>() == 123);
}
