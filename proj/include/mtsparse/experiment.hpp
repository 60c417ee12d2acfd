#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "mtsparse/trainer.hpp"

namespace mtsparse {

inline constexpr const char* kRunLogSchema = "# mtsparse-runlog v1";

/// A config field failed validation; `field()` is its dotted path.
class ConfigFieldError : public ConfigError {
 public:
  ConfigFieldError(std::string field, const std::string& what)
      : ConfigError("config field '" + field + "': " + what), field_(std::move(field)) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

struct ExperimentConfig {
  std::string name;
  /// Benchmark name, or empty when `tasks` was given explicitly.
  std::string benchmark;
  std::vector<std::string> task_names;
  std::vector<std::uint64_t> seeds;
  std::filesystem::path output_dir;
  /// Template for every run; `seed` is filled per run.
  TrainerConfig trainer;
};

/// Parses and validates a config document. Throws ConfigFieldError.
ExperimentConfig parse_config(const std::string& json_text);
ExperimentConfig load_config(const std::filesystem::path& path);

/// Resolves a relative output directory against $MTSPARSE_OUTPUT_ROOT (or the
/// working directory when unset).
std::filesystem::path resolve_output_dir(const std::filesystem::path& dir);

std::string run_id(const ExperimentConfig& cfg, std::uint64_t seed);

/// Writes the schema comment and column header.
void write_csv_header(std::ostream& out, const std::vector<env::TaskContext>& tasks);
void write_csv_row(std::ostream& out, const std::string& run, std::uint64_t seed, Treatment treatment,
                   const EpochLog& log, std::size_t task_count);

struct RunOutcome {
  std::string run_id;
  std::uint64_t seed = 0;
  bool completed = false;
  int epochs = 0;
  std::string error;
  std::filesystem::path csv;
  std::filesystem::path checkpoint;
};

/// Trains one seed, streaming one CSV row per epoch and saving the final checkpoint.
/// A failed run keeps its partial CSV and reports the error instead of throwing.
RunOutcome run_single(const ExperimentConfig& cfg, std::uint64_t seed, const std::filesystem::path& out_dir);

/// Runs every seed (shifted by seed_offset) on up to `jobs` threads and writes manifest.json.
std::vector<RunOutcome> run_all(const ExperimentConfig& cfg, int jobs, std::uint64_t seed_offset);

}  // namespace mtsparse
