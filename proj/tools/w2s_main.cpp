#include <chrono>
#include <cstdio>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "w2s/config.hpp"
#include "w2s/error.hpp"
#include "w2s/experiment.hpp"
#include "w2s/fixture.hpp"
#include "w2s/io.hpp"
#include "w2s/synthetic.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kOk = 0;
constexpr int kConfigError = 2;
constexpr int kRuntimeError = 3;
constexpr int kFixtureFailure = 4;

void log_line(const std::string& s) { std::cerr << s << std::endl; }

w2s::ExperimentConfig load(const std::string& path, const std::vector<std::uint64_t>& seeds) {
  w2s::ExperimentConfig cfg = w2s::load_experiment_config(path);
  if (!seeds.empty()) {
    cfg.seeds = seeds;
    cfg.validate();
  }
  return cfg;
}

fs::path run_dir_of(const std::string& dir, const std::string& config) {
  if (!dir.empty()) return dir;
  if (config.empty()) throw w2s::ConfigError("give a run directory or --config");
  return w2s::load_experiment_config(config).output_dir;
}

int cmd_generate(const std::string& config, const std::vector<std::uint64_t>& seeds) {
  w2s::ExperimentConfig cfg = load(config, {});
  if (!cfg.synthetic) throw w2s::ConfigError("generate-data: the config has no synthetic category");
  if (!seeds.empty()) cfg.data_seed = seeds.front();
  const w2s::CategoryData data = w2s::load_category(cfg);
  const fs::path out = cfg.output_dir / "data";
  for (const w2s::DomainData& d : data.domains) {
    w2s::write_text_file(out / d.name / "train.jsonl", w2s::to_jsonl(d.train));
    w2s::write_text_file(out / d.name / "validation.jsonl", w2s::to_jsonl(d.validation));
    w2s::write_text_file(out / d.name / "test.jsonl", w2s::to_jsonl(d.test));
    std::cout << d.name << ": " << d.train.size() << " train, " << d.validation.size() << " validation, "
              << d.test.size() << " test -> " << (out / d.name).string() << "\n";
  }
  return kOk;
}

int cmd_run(const std::string& config, std::size_t jobs, const std::vector<std::uint64_t>& seeds) {
  const w2s::ExperimentConfig cfg = load(config, seeds);
  w2s::RunOptions opt;
  opt.jobs = jobs;
  opt.log = log_line;
  const auto t0 = std::chrono::steady_clock::now();
  const w2s::RunSummary s = w2s::run_experiment(cfg, opt);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::cout << "trained " << s.trained << " models, reused " << s.reused << " in " << w2s::format_fixed(secs, 1)
            << "s; reports in " << cfg.output_dir.string() << "\n";
  return fs::exists(cfg.output_dir / "gaps.txt") ? kRuntimeError : kOk;
}

int cmd_report(const fs::path& dir) {
  const w2s::ReportSummary s = w2s::write_reports(dir);
  for (const fs::path& p : s.written) std::cout << "wrote " << p.string() << "\n";
  if (s.gaps.empty()) return kOk;
  std::cout << "partial report, " << s.gaps.size() << " gap(s):\n";
  for (const std::string& g : s.gaps) std::cout << "  " << g << "\n";
  return kRuntimeError;
}

int cmd_drift(const fs::path& dir, const std::vector<std::size_t>& layers, const std::string& pooling,
              std::size_t jobs) {
  w2s::DriftSettings settings;
  settings.layers = layers;
  if (pooling == "masked_mean") {
    settings.pooling = w2s::ActivationPooling::masked_mean;
  } else if (pooling == "last_response_token") {
    settings.pooling = w2s::ActivationPooling::last_response_token;
  } else {
    throw w2s::ConfigError("--pooling: expected masked_mean or last_response_token");
  }
  w2s::RunOptions opt;
  opt.jobs = jobs;
  opt.log = log_line;
  w2s::recompute_drift(dir, settings, opt);
  std::cout << "wrote " << (dir / "drift_profile.csv").string() << "\n";
  return kOk;
}

int cmd_verify(double tolerance, double k_tolerance, bool failures_only) {
  w2s::VerifyOptions opt;
  if (tolerance == 0.0) {
    opt = w2s::VerifyOptions::exact();
  } else {
    opt.tolerance = tolerance;
    opt.k_tolerance = k_tolerance;
  }
  const w2s::VerifyReport r = w2s::verify_fixture(w2s::reference_fixture(), opt);
  std::cout << r.text(failures_only);
  std::cout << (r.passed() ? "PASS" : "FAIL") << "\n";
  return r.passed() ? kOk : kFixtureFailure;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Weak-to-strong reward-model transfer with hidden-state anchoring"};
  app.require_subcommand(1);
  std::string config;
  std::size_t jobs = 1;
  std::vector<std::uint64_t> seeds;

  auto* gen = app.add_subcommand("generate-data", "write the synthetic category as preference JSONL");
  gen->add_option("--config", config, "experiment config (JSON)")->required();
  gen->add_option("--seed", seeds, "override the data seed")->expected(1);

  auto* run = app.add_subcommand("run", "train weak teachers, ceilings and students; write reports");
  run->add_option("--config", config, "experiment config (JSON)")->required();
  run->add_option("--jobs", jobs, "parallel (source, seed) units")->check(CLI::PositiveNumber);
  run->add_option("--seed", seeds, "run only these seeds")->expected(1, -1);

  std::string dir;
  auto* report = app.add_subcommand("report", "assemble reports from completed runs");
  report->add_option("dir", dir, "run directory");
  report->add_option("--config", config, "experiment config; its output_dir is used");

  std::vector<std::size_t> layers;
  std::string pooling = "masked_mean";
  auto* drift = app.add_subcommand("drift", "recompute CKA/CCA drift profiles of stored models");
  drift->add_option("dir", dir, "run directory");
  drift->add_option("--config", config, "experiment config; its output_dir is used");
  drift->add_option("--layers", layers, "1-based layers (default: all)")->delimiter(',');
  drift->add_option("--pooling", pooling, "masked_mean or last_response_token");
  drift->add_option("--jobs", jobs, "parallel workers")->check(CLI::PositiveNumber);

  double tolerance = 0.02;
  double k_tolerance = 0.10;
  bool failures_only = false;
  auto* verify = app.add_subcommand("verify-fixture", "recompute the reference metric tables from the accuracy tables");
  verify->add_option("--tolerance", tolerance, "absolute tolerance on plain cells; 0 disables every slack")
      ->check(CLI::NonNegativeNumber);
  verify->add_option("--k-tolerance", k_tolerance, "relative tolerance on k-abbreviated cells")
      ->check(CLI::NonNegativeNumber);
  verify->add_flag("--failures-only", failures_only, "print only cells outside tolerance");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfigError;
  }

  try {
    if (*gen) return cmd_generate(config, seeds);
    if (*run) return cmd_run(config, jobs, seeds);
    if (*report) return cmd_report(run_dir_of(dir, config));
    if (*drift) return cmd_drift(run_dir_of(dir, config), layers, pooling, jobs);
    if (*verify) return cmd_verify(tolerance, k_tolerance, failures_only);
  } catch (const w2s::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntimeError;
  }
  return kOk;
}
