#include <CLI11.hpp>

#include <iostream>
#include <thread>

#include "commands.hpp"
#include "selftest.hpp"

int main(int argc, char** argv) {
  using namespace bayesupdate::cli;

  CLI::App app{"Bayesian ensemble updating: Gaussian and binary-chain filtering experiments"};
  app.set_version_flag("--version", BAYESUPDATE_VERSION);
  app.require_subcommand(1);

  RunOptions opts;
  opts.threads = std::max(1u, std::thread::hardware_concurrency());
  std::vector<std::string> preset_names;
  for (const auto& [name, text] : presets()) preset_names.push_back(name);

  const auto add_run_options = [&](CLI::App* sub) {
    sub->add_option("--config", opts.config_path, "Configuration file");
    sub->add_option("--preset", opts.preset, "Built-in configuration")->check(CLI::IsMember(preset_names));
    sub->add_option("--manifest", opts.manifest_path, "Re-run the configuration and seed recorded in a manifest");
    sub->add_option("--seed", opts.seed, "Override the configured seed");
    sub->add_option("--threads", opts.threads, "Worker threads")->check(CLI::PositiveNumber);
    sub->add_option("--out", opts.out_dir, "Output directory")->capture_default_str();
  };

  auto* gauss = app.add_subcommand("run-gaussian", "Rank-histogram study of the six Gaussian procedures");
  add_run_options(gauss);
  auto* hmm = app.add_subcommand("run-hmm", "Binary chain study, Bayesian and non-Bayesian updates");
  add_run_options(hmm);
  auto* selftest = app.add_subcommand("selftest", "Fast oracle checks");
  double perturb = 0.0;
  selftest->add_option("--inject-fault", perturb, "Add this error to every checked quantity")->group("");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  if (*gauss) return cmd_run(Study::gaussian, opts, std::cout, std::cerr);
  if (*hmm) return cmd_run(Study::hmm, opts, std::cout, std::cerr);
  return cmd_selftest(std::cout, perturb);
}
