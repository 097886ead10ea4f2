#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "w2s/config.hpp"
#include "w2s/model.hpp"
#include "w2s/synthetic.hpp"

namespace w2s {

/// Generates the synthetic category or loads and preprocesses the JSONL
/// domains. Preprocessing warnings are appended to `warnings`.
CategoryData load_category(const ExperimentConfig& config, std::vector<std::string>* warnings = nullptr);

struct Bases {
  RewardModel weak;
  RewardModel strong;
};

/// Builds both base networks from their seeds and, when configured, runs
/// feature-probe pretraining on them.
Bases build_bases(const ExperimentConfig& config);

using LogFn = std::function<void(const std::string&)>;

struct RunOptions {
  /// Worker threads over (source, seed) units.
  std::size_t jobs = 1;
  LogFn log;
};

struct RunSummary {
  std::size_t trained = 0;
  std::size_t reused = 0;
};

/// Runs every (source, seed) unit into `config.output_dir`, skipping models
/// whose manifest entry already exists, then writes the reports. Throws
/// ConfigError when the directory holds runs of an incompatible config.
RunSummary run_experiment(const ExperimentConfig& config, const RunOptions& options = {});

struct ReportSummary {
  std::vector<std::filesystem::path> written;
  /// Missing (source, seed, model) entries; those sources are left out.
  std::vector<std::string> gaps;
};

/// Assembles report.csv, report.json, lambda_ablation.csv and
/// drift_profile.csv from the manifests under `run_dir`. Throws DataError
/// when there is no manifest at all.
ReportSummary write_reports(const std::filesystem::path& run_dir);

/// Recomputes every stored model's drift profile with new settings, then
/// rewrites drift_profile.csv.
void recompute_drift(const std::filesystem::path& run_dir, const DriftSettings& settings, const RunOptions& options = {});

/// Directory of one (source, seed) unit.
std::filesystem::path unit_dir(const std::filesystem::path& run_dir, const std::string& source, std::uint64_t seed);

}  // namespace w2s
