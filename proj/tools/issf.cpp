#include <issf/cli.hpp>

#include <CLI11.hpp>

#include <iostream>

int main(int argc, char** argv) {
  CLI::App app{"Backup-set safety filter simulator"};
  app.require_subcommand(1);
  app.set_version_flag("--version", issf::cli::kVersion);

  issf::cli::SimulateOptions sim;
  std::string sim_config;
  std::uint64_t seed = 0;
  auto* s = app.add_subcommand("simulate", "run a named scenario and write logs, report and plots");
  s->add_option("--scenario", sim.scenario, "scenario name")->required();
  s->add_option("--config", sim_config, "key=value overrides");
  s->add_option("--out", sim.out_dir, "output directory")->capture_default_str();
  auto* seed_opt = s->add_option("--seed", seed, "RNG seed (default 0)");

  issf::cli::CheckOptions chk;
  std::string chk_config;
  auto* c = app.add_subcommand("check", "re-run invariant checks on a stored trajectory.csv");
  c->add_option("--log", chk.log_path, "trajectory.csv")->required();
  c->add_option("--config", chk_config, "config used for the run");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : issf::cli::kExitUsage;
  }

  try {
    if (s->parsed()) {
      if (!sim_config.empty()) sim.config_path = sim_config;
      if (seed_opt->count() > 0) sim.seed = seed;
      return issf::cli::cmd_simulate(sim, std::cout, std::cerr);
    }
    if (!chk_config.empty()) chk.config_path = chk_config;
    return issf::cli::cmd_check(chk, std::cout, std::cerr);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return issf::cli::kExitFail;
  }
}
