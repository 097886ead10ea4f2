#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "w2s/drift.hpp"
#include "w2s/losses.hpp"
#include "w2s/model.hpp"
#include "w2s/protocol.hpp"
#include "w2s/synthetic.hpp"
#include "w2s/train.hpp"

namespace w2s {

struct JsonlDomain {
  std::string name;
  std::filesystem::path train;
  /// Empty when the dataset ships no validation split.
  std::filesystem::path validation;
  std::filesystem::path test;
};

struct JsonlSource {
  std::string name;
  std::vector<JsonlDomain> domains;
  std::size_t max_seq_len = 64;
  /// Skip malformed lines instead of failing.
  bool lenient = false;
};

/// Feature-probe pretraining of both bases (synthetic categories only).
struct PretrainSettings {
  std::size_t corpus_size = 4000;
  std::uint64_t corpus_seed = 0;
  PretrainConfig weak;
  PretrainConfig strong;
};

struct DriftSettings {
  /// 1-based layers; empty means every layer.
  std::vector<std::size_t> layers;
  ActivationPooling pooling = ActivationPooling::masked_mean;
};

struct ExperimentConfig {
  std::string name;
  std::filesystem::path output_dir;
  /// Exactly one of the two data sources is set.
  std::optional<CategorySpec> synthetic;
  std::uint64_t data_seed = 0;
  std::optional<JsonlSource> jsonl;
  /// Source domains to run; empty means every domain.
  std::vector<std::string> sources;
  /// Method names; "anchor" and "anchor-mla" expand over `lambdas`.
  std::vector<std::string> methods{"naive", "anchor"};
  std::vector<double> lambdas{1e-2, 1e-3, 1e-4};
  std::vector<double> middle_fractions{0.5, 0.75};
  double conf_alpha = 0.5;
  /// "l2sp" expands over these weights.
  std::vector<double> l2sp_mus{1e-3, 1e-4, 1e-5};
  std::vector<std::uint64_t> seeds{0, 1, 2};
  std::optional<PretrainSettings> pretrain;
  ModelConfig weak_model;
  ModelConfig strong_model;
  AdapterConfig adapter{true, 16, 16.0};
  TrainConfig weak_train;
  TrainConfig student_train;
  TrainConfig ceiling_train;
  DriftSettings drift;

  /// Throws ConfigError naming the offending field.
  void validate() const;
  std::vector<MethodSpec> expanded_methods() const;
  std::vector<std::string> domain_names() const;
  /// `sources`, or every domain when empty.
  std::vector<std::string> source_domains() const;
  ProtocolConfig protocol() const;
};

/// Strict parse: unknown keys, wrong types and out-of-range values raise
/// ConfigError with the JSON path of the field. Relative paths resolve
/// against `base_dir`.
ExperimentConfig parse_experiment_config(const std::string& text, const std::filesystem::path& base_dir = {});
ExperimentConfig load_experiment_config(const std::filesystem::path& path);
/// Canonical JSON with every field spelled out; parsing it yields the same
/// configuration.
std::string experiment_config_json(const ExperimentConfig& config);

}  // namespace w2s
