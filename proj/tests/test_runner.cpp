#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "jkoflow/runner.hpp"

using namespace jkoflow;
namespace fs = std::filesystem;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string write_config(const std::string& name, const nlohmann::json& j) {
  fs::create_directories("test_tmp");
  std::string path = "test_tmp/" + name;
  std::ofstream out(path);
  out << j.dump(2);
  return path;
}

nlohmann::json minimal_fp_config(const std::string& outdir) {
  return nlohmann::json{
      {"lattice",
       {{"dimension", 1}, {"spacing", 0.0625}, {"extents", {16}}, {"origin", {0.0}}}},
      {"energy",
       {{"internal", "entropy"},
        {"potential",
         {{"kind", "quadratic"}, {"center", {0.5}}, {"stiffness", 2.0}}}}},
      {"initial", {{"kind", "gaussian"}, {"center", {0.3}}, {"width", 0.15}}},
      {"jko", {{"tau", 0.05}, {"steps", 3}}},
      {"output", {{"directory", outdir}}}};
}

}  // namespace

TEST_CASE("cmd_run writes diagnostics, snapshots and a sidecar") {
  auto cfgp = write_config("fp.json", minimal_fp_config("test_tmp/out_a"));
  REQUIRE(cmd_run(cfgp) == kExitOk);
  CHECK(fs::exists("test_tmp/out_a/diagnostics.csv"));
  CHECK(fs::exists("test_tmp/out_a/snapshot_initial.csv"));
  CHECK(fs::exists("test_tmp/out_a/snapshot_3.csv"));
  CHECK(fs::exists("test_tmp/out_a/summary.json"));
  CHECK(fs::exists("test_tmp/out_a/config.json"));

  auto diag = slurp("test_tmp/out_a/diagnostics.csv");
  int rows = 0;
  for (char c : diag)
    if (c == '\n') ++rows;
  CHECK(rows == 4);  // header + 3 steps
  CHECK(diag.rfind("k,t,energy,", 0) == 0);
}

TEST_CASE("reruns are byte-identical") {
  auto cfg = minimal_fp_config("test_tmp/out_b1");
  auto p1 = write_config("det1.json", cfg);
  REQUIRE(cmd_run(p1) == kExitOk);
  cfg["output"]["directory"] = "test_tmp/out_b2";
  auto p2 = write_config("det2.json", cfg);
  REQUIRE(cmd_run(p2) == kExitOk);
  CHECK(slurp("test_tmp/out_b1/diagnostics.csv") ==
        slurp("test_tmp/out_b2/diagnostics.csv"));
  CHECK(slurp("test_tmp/out_b1/snapshot_3.csv") ==
        slurp("test_tmp/out_b2/snapshot_3.csv"));
}

TEST_CASE("config validation failures exit with code 1") {
  auto bad = minimal_fp_config("test_tmp/out_c");
  bad["jko"]["horizon"] = 0.15;  // both steps and horizon
  auto p = write_config("bad1.json", bad);
  CHECK(cmd_run(p) == kExitValidation);

  auto unknown = minimal_fp_config("test_tmp/out_c");
  unknown["jko"]["stepz"] = 3;
  CHECK(cmd_run(write_config("bad2.json", unknown)) == kExitValidation);

  // crowd configs need |Omega| > 1
  nlohmann::json crowd{
      {"lattice",
       {{"dimension", 1}, {"spacing", 0.125}, {"extents", {8}}, {"origin", {0.0}}}},
      {"energy",
       {{"crowd", true},
        {"potential", {{"kind", "linear"}, {"gradient", {1.0}}}}}},
      {"initial", {{"kind", "uniform"}}},
      {"jko", {{"tau", 0.05}, {"steps", 2}, {"solver", "crowd_lp"}}},
      {"output", {{"directory", "test_tmp/out_c"}}}};
  CHECK(cmd_run(write_config("bad3.json", crowd)) == kExitValidation);

  CHECK(cmd_run("test_tmp/missing.json") == kExitValidation);

  std::ofstream raw("test_tmp/garbage.json");
  raw << "{ not json";
  raw.close();
  CHECK(cmd_run("test_tmp/garbage.json") == kExitValidation);
}

TEST_CASE("json output format") {
  auto cfg = minimal_fp_config("test_tmp/out_d");
  cfg["output"]["formats"] = {"json"};
  REQUIRE(cmd_run(write_config("jsonfmt.json", cfg)) == kExitOk);
  CHECK(fs::exists("test_tmp/out_d/diagnostics.json"));
  CHECK_FALSE(fs::exists("test_tmp/out_d/diagnostics.csv"));
  auto rows = nlohmann::json::parse(slurp("test_tmp/out_d/diagnostics.json"));
  CHECK(rows.is_array());
  CHECK(rows.size() == 3);
}

TEST_CASE("convergence study produces a refinement table") {
  nlohmann::json cfg{
      {"lattice",
       {{"dimension", 1}, {"spacing", 0.125}, {"extents", {8}}, {"origin", {0.0}}}},
      {"energy",
       {{"internal", "entropy"},
        {"potential",
         {{"kind", "quadratic"}, {"center", {0.5}}, {"stiffness", 2.0}}}}},
      {"initial", {{"kind", "gaussian"}, {"center", {0.3}}, {"width", 0.15}}},
      {"jko", {{"tau", 0.05}, {"steps", 2}}},
      {"study",
       {{"pairs", {{0.125, 0.1}, {0.0625, 0.05}}},
        {"reference_cells", 128},
        {"horizon", 0.2}}},
      {"output", {{"directory", "test_tmp/out_e"}}}};
  REQUIRE(cmd_convergence_study(write_config("study.json", cfg), {}) == kExitOk);
  auto table = slurp("test_tmp/out_e/study.csv");
  CHECK(table.rfind("h,tau,h_over_tau,error_l1,runtime_seconds,frozen", 0) == 0);
  int rows = 0;
  for (char c : table)
    if (c == '\n') ++rows;
  CHECK(rows == 3);

  // single-row study through the worker pool
  cfg["study"]["pairs"] = {{0.125, 0.1}};
  cfg["output"]["directory"] = "test_tmp/out_e2";
  RunnerOptions par;
  par.jobs = 4;
  REQUIRE(cmd_convergence_study(write_config("study1.json", cfg), par) == kExitOk);
  auto one = slurp("test_tmp/out_e2/study.csv");
  rows = 0;
  for (char c : one)
    if (c == '\n') ++rows;
  CHECK(rows == 2);
}

TEST_CASE("frozen study rows are flagged") {
  nlohmann::json cfg{
      {"lattice",
       {{"dimension", 1}, {"spacing", 0.25}, {"extents", {8}}, {"origin", {0.0}}}},
      {"energy",
       {{"potential", {{"kind", "linear"}, {"gradient", {0.2}}}}}},
      {"initial", {{"kind", "indicator"}, {"low", {0.4}}, {"high", {1.2}}}},
      {"jko", {{"tau", 0.1}, {"steps", 2}, {"solver", "pure_potential"}}},
      {"study",
       {{"pairs", {{0.25, 0.1}}}, {"reference_cells", 128}, {"horizon", 0.2}}},
      {"output", {{"directory", "test_tmp/out_f"}}}};
  // h/tau = 2.5 > 2 Lip(V) = 0.4
  REQUIRE(cmd_convergence_study(write_config("frozen.json", cfg), {}) == kExitOk);
  auto table = slurp("test_tmp/out_f/study.csv");
  CHECK(table.find(",1\n") != std::string::npos);
}

TEST_CASE("toy potential tables") {
  nlohmann::json cfg{
      {"lattice",
       {{"dimension", 1}, {"spacing", 0.25}, {"extents", {64}}, {"origin", {0.0}}}},
      {"energy", nlohmann::json::object()},
      {"initial", {{"kind", "uniform"}}},
      {"jko", {{"tau", 0.5}, {"steps", 1}}},
      {"toy",
       {{"potential", {{"kind", "linear"}, {"gradient", {-1.03125}}}},
        {"tau", 0.5},
        {"horizon", 2.5},
        {"start", {1.125}}}},
      {"output", {{"directory", "test_tmp/out_g"}}}};
  REQUIRE(cmd_toy_potential(write_config("toy.json", cfg), {}) == kExitOk);
  auto table = slurp("test_tmp/out_g/toy.csv");
  CHECK(table.rfind("k,t,x1,xh1,error,bound", 0) == 0);

  // linear growth of the error column
  std::istringstream ss(table);
  std::string line;
  std::getline(ss, line);
  std::vector<double> errors;
  while (std::getline(ss, line)) {
    auto pos = line.find_last_of(',');
    auto prev = line.find_last_of(',', pos - 1);
    errors.push_back(std::stod(line.substr(prev + 1, pos - prev - 1)));
  }
  REQUIRE(errors.size() == 6);
  for (int k = 2; k <= 5; ++k)
    CHECK(errors[k] == Catch::Approx(k * errors[1]).margin(1e-12));

  // quadratic potential: errors dominated by the bound column
  cfg["toy"]["potential"] = {{"kind", "quadratic"}, {"center", {8.0}}, {"stiffness", 1.0}};
  cfg["toy"]["tau"] = 0.25;
  cfg["toy"]["horizon"] = 1.0;
  cfg["output"]["directory"] = "test_tmp/out_g2";
  REQUIRE(cmd_toy_potential(write_config("toy2.json", cfg), {}) == kExitOk);
  auto t2 = slurp("test_tmp/out_g2/toy.csv");
  std::istringstream s2(t2);
  std::getline(s2, line);
  while (std::getline(s2, line)) {
    auto pos = line.find_last_of(',');
    auto prev = line.find_last_of(',', pos - 1);
    double err = std::stod(line.substr(prev + 1, pos - prev - 1));
    double bound = std::stod(line.substr(pos + 1));
    CHECK(err <= bound + 1e-12);
  }

  // contraction precondition violated -> validation error
  cfg["toy"]["tau"] = 0.5;
  CHECK(cmd_toy_potential(write_config("toy3.json", cfg), {}) == kExitSolver);
}

TEST_CASE("certification runs clean and catches an injected fault") {
  CertOptions quick;
  quick.ot_instances = 24;
  quick.jko_instances = 3;
  auto report = run_certification(quick);
  CHECK(report.ok());
  for (const auto& s : report.suites) {
    CHECK(s.failed == 0);
    CHECK(s.passed > 0);
  }

  quick.fault = CertOptions::Fault::negate_ot_cost;
  auto faulty = run_certification(quick);
  CHECK_FALSE(faulty.ok());
  bool ot_failed = false;
  for (const auto& s : faulty.suites)
    if (s.name == "ot-oracle-equivalence" && s.failed > 0) ot_failed = true;
  CHECK(ot_failed);
}

TEST_CASE("solver failures keep partial artifacts and exit 2") {
  // horizon not a multiple of tau is a validation error
  auto cfg = minimal_fp_config("test_tmp/out_h");
  cfg["jko"].erase("steps");
  cfg["jko"]["horizon"] = 0.07;
  CHECK(cmd_run(write_config("badstep.json", cfg), {}) == kExitValidation);
}
