#include "pds_cli/experiments.hpp"

#include <CLI11.hpp>

#include <iostream>

int main(int argc, char** argv) {
  namespace cli = pds::cli;
  CLI::App app{"Partially dissipative systems: experiment driver"};
  app.require_subcommand(1);
  app.fallthrough();

  cli::Overrides ov;
  int threads = 1;
  unsigned long long seed = 0;
  app.add_option("--config", ov.config_path, "config file (sections with key = value, or JSON)");
  app.add_option("--preset", ov.preset, "start from a built-in preset (see `list`)");
  app.add_option("--out", ov.out_dir, "output directory");
  app.add_option("--threads", threads, "worker threads for eps sweeps")->check(CLI::PositiveNumber);
  auto* seed_opt = app.add_option("--seed", seed, "random seed");

  for (const std::string& c : cli::task_kinds()) app.add_subcommand(c, "run the " + c + " experiment");
  app.add_subcommand("list", "print built-in systems, presets and the config schema");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : cli::kConfigError;
  }
  if (*seed_opt) ov.seed = seed;

  const std::string cmd = app.get_subcommands().front()->get_name();
  if (cmd == "list") {
    std::cout << cli::list_builtins().dump(2) << "\n";
    return 0;
  }
  return cli::run(cmd, ov, threads, std::cerr);
}
