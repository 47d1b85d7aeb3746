// Command-line front end: run | verify | compare | plot.

#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "tar2/experiment.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Temporal-agent reward redistribution experiments"};
  app.set_version_flag("--version", std::string(tar2::kVersion));
  app.require_subcommand(1);

  tar2::RunOptions run;
  std::uint64_t run_seed = 0;
  auto* run_cmd = app.add_subcommand("run", "Train one configuration and write its artifacts");
  run_cmd->add_option("--config", run.config, "JSON config file")->required();
  auto* seed_opt = run_cmd->add_option("--seed", run_seed, "Override the config seed");
  run_cmd->add_option("--out", run.out, "Output directory")->required();

  tar2::VerifyOptions verify;
  std::string suite = "all";
  auto* verify_cmd = app.add_subcommand("verify", "Run the property suites and print a JSON report");
  verify_cmd->add_option("--suite", suite, "algebra|shaping|gradients|variance|all")
      ->check(CLI::IsMember({"algebra", "shaping", "gradients", "variance", "all"}));
  verify_cmd->add_option("--seed", verify.seed, "Seed for the random draws");
  verify_cmd->add_option("--draws", verify.draws, "Random draws per algebraic check")->check(CLI::PositiveNumber);
  verify_cmd->add_flag("--inject-fault", verify.inject_fault, "Perturb one weight (exercises failure reporting)");

  tar2::CompareOptions compare;
  std::string arms;
  auto* compare_cmd = app.add_subcommand("compare", "Run several arms over several seeds");
  compare_cmd->add_option("--config", compare.config, "JSON config file")->required();
  compare_cmd->add_option("--arms", arms, "Comma-separated arms, e.g. episodic,oracle,tar2")->required();
  compare_cmd->add_option("--seeds", compare.seeds, "Seeds per arm");
  compare_cmd->add_option("--first-seed", compare.first_seed, "First seed");
  compare_cmd->add_option("--out", compare.out, "Output directory")->required();

  std::vector<std::filesystem::path> metrics;
  std::filesystem::path svg;
  auto* plot_cmd = app.add_subcommand("plot", "Plot smoothed return curves as SVG");
  plot_cmd->add_option("--metrics", metrics, "metrics.csv files")->required();
  plot_cmd->add_option("--out", svg, "Output SVG")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : tar2::kExitConfig;
  }

  try {
    if (*run_cmd) {
      if (*seed_opt) run.seed = run_seed;
      return tar2::cmd_run(run, std::cerr);
    }
    if (*verify_cmd) {
      verify.suite = tar2::verify_suite_from_string(suite);
      return tar2::cmd_verify(verify, std::cout);
    }
    if (*compare_cmd) {
      std::stringstream ss(arms);
      std::string arm;
      while (std::getline(ss, arm, ',')) {
        if (!arm.empty()) compare.arms.push_back(arm);
      }
      return tar2::cmd_compare(compare, std::cerr);
    }
    if (*plot_cmd) return tar2::cmd_plot(metrics, svg, std::cerr);
  } catch (const tar2::ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return tar2::kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return tar2::kExitRuntime;
  }
  return tar2::kExitConfig;
}
