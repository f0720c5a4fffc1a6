#include <string>

#include <CLI11.hpp>

#include "jkoflow/runner.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Fully discrete JKO solver for Wasserstein gradient flows on "
               "regular grids"};
  app.require_subcommand(1);

  std::string config_path, out_dir, format;
  int jobs = 1;
  std::uint64_t seed = 1234;
  bool inject_fault = false;

  auto add_common = [&](CLI::App* cmd, bool needs_config) {
    if (needs_config)
      cmd->add_option("--config", config_path, "experiment config (JSON)")
          ->required();
    cmd->add_option("--out", out_dir, "output directory override");
    cmd->add_option("--jobs", jobs, "worker threads for study rows");
    cmd->add_option("--format", format, "output format override")
        ->check(CLI::IsMember({"csv", "json"}));
  };

  auto* run = app.add_subcommand("run", "run one trajectory");
  add_common(run, true);
  auto* study = app.add_subcommand("convergence-study",
                                   "grid refinement against the PDE reference");
  add_common(study, true);
  auto* toy = app.add_subcommand("toy-potential",
                                 "proximal error study for a smooth potential");
  add_common(toy, true);
  auto* certify = app.add_subcommand("certify", "oracle-equivalence suites");
  certify->add_option("--seed", seed, "instance generator seed");
  certify->add_flag("--inject-cost-sign-fault", inject_fault)
      ->group("");  // self-test hook, hidden from help

  CLI11_PARSE(app, argc, argv);

  jkoflow::RunnerOptions opts;
  opts.out_override = out_dir;
  opts.format_override = format;
  opts.jobs = jobs;

  if (run->parsed()) return jkoflow::cmd_run(config_path, opts);
  if (study->parsed()) return jkoflow::cmd_convergence_study(config_path, opts);
  if (toy->parsed()) return jkoflow::cmd_toy_potential(config_path, opts);
  jkoflow::CertOptions copts;
  copts.seed = seed;
  if (inject_fault) copts.fault = jkoflow::CertOptions::Fault::negate_ot_cost;
  return jkoflow::cmd_certify(copts);
}
