#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>
#include <string>

#include "enkl/runner.hpp"

namespace {

struct Cli {
  std::string config_path;
  std::string out_dir;
  bool has_seed = false;
  std::uint64_t seed = 0;
  int threads = -1;  // -1: not given, fall back to env then config
};

void add_common(CLI::App* cmd, Cli& cli) {
  cmd->add_option("--config", cli.config_path, "JSON config file")
      ->required()
      ->check(CLI::ExistingFile);
  cmd->add_option("--out", cli.out_dir, "output directory (overrides config)");
  cmd->add_option("--seed", cli.seed, "root seed (overrides config)")
      ->each([&cli](const std::string&) { cli.has_seed = true; });
  cmd->add_option("--threads", cli.threads, "worker threads, 0 = auto");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Ensemble Kalman learning and polynomial structure discovery"};
  app.require_subcommand(1);

  Cli cli;
  const char* commands[] = {"train", "baseline", "discover", "simulate", "mi"};
  const char* descriptions[] = {
      "train a network with the ensemble Kalman learner",
      "train the same network with the SGD baseline",
      "learn polynomial equations by informative selection",
      "integrate the configured system and export the trajectory",
      "export the ab-initio mutual-information table"};
  for (int i = 0; i < 5; ++i) {
    add_common(app.add_subcommand(commands[i], descriptions[i]), cli);
  }

  CLI11_PARSE(app, argc, argv);

  try {
    enkl::RunConfig config = enkl::load_config(cli.config_path);
    const std::string subcommand = app.get_subcommands().front()->get_name();
    if (!config.command.empty() && config.command != subcommand) {
      throw enkl::ConfigError("config: key 'command' is '" + config.command +
                              "' but the CLI subcommand is '" + subcommand + "'");
    }
    config.command = subcommand;
    if (!cli.out_dir.empty()) config.out_dir = cli.out_dir;
    if (cli.has_seed) {
      config.seed = cli.seed;
      config.train.seed = cli.seed;
      config.estimate.seed = cli.seed;
    }
    if (cli.threads >= 0) {
      config.threads = cli.threads;
    } else if (const char* env = std::getenv("KALMAN_LEARN_THREADS")) {
      config.threads = std::max(0, std::atoi(env));
    }

    const enkl::RunResult result = enkl::run(config);
    if (result.exit_code == 0) {
      std::cout << result.message << "\n";
      for (const std::string& artifact : result.artifacts) {
        std::cout << "  wrote " << artifact << "\n";
      }
    } else {
      std::cerr << "error: " << result.message << "\n";
    }
    return result.exit_code;
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return 1;
  }
}
