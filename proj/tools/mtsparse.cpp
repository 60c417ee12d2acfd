#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "mtsparse/envs.hpp"
#include "mtsparse/experiment.hpp"
#include "mtsparse/report.hpp"

namespace {

int cmd_run(const std::string& config, int jobs, std::uint64_t seed_offset) {
  mtsparse::ExperimentConfig cfg;
  try {
    cfg = mtsparse::load_config(config);
  } catch (const mtsparse::ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  if (jobs < 1) {
    std::cerr << "error: --jobs must be at least 1\n";
    return 2;
  }
  const auto outcomes = mtsparse::run_all(cfg, jobs, seed_offset);
  int failed = 0;
  for (const auto& o : outcomes) {
    std::cout << o.run_id << ": " << (o.completed ? "completed" : "failed") << " (" << o.epochs << " epochs) -> "
              << o.csv.string() << '\n';
    if (!o.completed) {
      std::cerr << o.run_id << ": " << o.error << '\n';
      ++failed;
    }
  }
  return failed ? 1 : 0;
}

int cmd_dump_tasks(const std::string& benchmark) {
  std::vector<mtsparse::env::TaskContext> tasks;
  try {
    tasks = mtsparse::env::make_benchmark(benchmark);
  } catch (const mtsparse::ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  nlohmann::json out = nlohmann::json::array();
  for (const auto& t : tasks) {
    out.push_back({{"id", t.id},
                   {"name", t.name},
                   {"optimal_steps", t.optimal_steps},
                   {"max_steps", t.max_episode_steps},
                   {"achievable_reward", t.achievable_reward()}});
  }
  std::cout << out.dump(2) << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sparse multi-task PPO experiments"};
  app.require_subcommand(1);

  std::string config;
  int jobs = 1;
  std::uint64_t seed_offset = 0;
  auto* run = app.add_subcommand("run", "Train every seed of an experiment config");
  run->add_option("config", config, "Experiment config (JSON)")->required();
  run->add_option("--jobs", jobs, "Concurrent runs");
  run->add_option("--seed-offset", seed_offset, "Added to every configured seed");

  std::string runs_dir;
  std::string out_dir;
  auto* agg = app.add_subcommand("aggregate", "Aggregate run logs into JSON and SVG figures");
  agg->add_option("dir", runs_dir, "Directory holding run CSVs")->required();
  agg->add_option("--out", out_dir, "Output directory (default: the input directory)");

  std::string benchmark;
  auto* dump = app.add_subcommand("dump-tasks", "Print a benchmark's task registry as JSON");
  dump->add_option("benchmark", benchmark, "MT2, MT3 or MT5")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    if (*run) return cmd_run(config, jobs, seed_offset);
    if (*agg) return mtsparse::aggregate_directory(runs_dir, out_dir.empty() ? runs_dir : out_dir, std::cerr);
    if (*dump) return cmd_dump_tasks(benchmark);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
