#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "w2s/model.hpp"

namespace w2s {

/// One line of an input preference JSONL file.
struct RawPreferenceRecord {
  std::string prompt;
  std::string chosen;
  std::string rejected;
  std::optional<double> chosen_score;
  std::optional<double> rejected_score;
  std::size_t line = 0;
};

struct LineIssue {
  std::size_t line = 0;
  std::string message;
};

struct JsonlLoad {
  std::vector<RawPreferenceRecord> records;
  /// Malformed lines skipped in lenient mode.
  std::vector<LineIssue> issues;
};

/// Reads one JSON object per line. Blank lines are ignored. Strict mode
/// throws ParseError at the first malformed line; lenient mode records it
/// and keeps going.
JsonlLoad load_jsonl(const std::filesystem::path& path, bool lenient = false);
/// Same as `load_jsonl` over in-memory text.
JsonlLoad parse_jsonl(const std::string& text, bool lenient = false);

/// Prompt with two candidate responses in a canonical (shuffled) order.
struct PreferencePair {
  std::uint64_t pair_id = 0;
  std::string domain;
  std::vector<int> prompt_tokens;
  std::vector<int> tokens_a;
  std::vector<int> tokens_b;
  /// 1 when candidate a is the gold-preferred response, 0 when b is.
  int gold_label = 1;
  /// Soft label q = P(a preferred), when annotated.
  std::optional<double> weak_label;
  /// Latent response features and spurious-pattern sign in {-1, 0, +1}
  /// (synthetic data only).
  std::vector<double> features_a;
  std::vector<double> features_b;
  int spurious_a = 0;
  int spurious_b = 0;

  Sequence sequence_a() const;
  Sequence sequence_b() const;
  /// Response tokens of the gold-preferred candidate.
  const std::vector<int>& chosen_tokens() const { return gold_label == 1 ? tokens_a : tokens_b; }
};

struct PreprocessOptions {
  std::uint64_t seed = 0;
  std::size_t max_seq_len = 64;
  std::string domain;
  std::uint64_t id_base = 0;
};

struct PreprocessResult {
  std::vector<PreferencePair> pairs;
  std::size_t dropped_ties = 0;
  std::size_t dropped_identical = 0;
  std::vector<std::string> warnings;
};

/// Drops records whose chosen and rejected scores are equal, concatenates
/// prompt with each response, tokenizes, and randomizes candidate order per
/// pair (seeded) with `gold_label` tracking the chosen side. Sequences longer
/// than `max_seq_len` are truncated: the prompt keeps its tail (at most half
/// the budget), the response keeps its head. Pairs whose responses tokenize
/// identically are dropped with a warning.
PreprocessResult preprocess(const std::vector<RawPreferenceRecord>& records, const PreprocessOptions& options);

/// Sizes derived from a training split of `train` pairs.
struct SplitCounts {
  std::size_t validation = 0;
  std::size_t gold = 0;
  std::size_t w2s = 0;
};

/// Validation takes ceil(10%) of `train` unless the dataset ships its own;
/// the remainder is halved with the odd pair going to the gold subset.
SplitCounts derive_split_counts(std::size_t train, bool provided_validation);

struct ProtocolSplit {
  std::vector<PreferencePair> gold;
  std::vector<PreferencePair> w2s;
  std::vector<PreferencePair> validation;
  std::vector<PreferencePair> test;
  std::uint64_t seed = 0;
};

/// Seeded shuffle followed by the `derive_split_counts` carve-up. `test` is
/// left empty for the caller. Throws DataError below 4 pairs.
ProtocolSplit split_protocol(const std::vector<PreferencePair>& pairs, std::uint64_t seed,
                             bool provided_validation);

/// JSON manifest listing pair ids per split with seed and counts.
std::string split_manifest_json(const ProtocolSplit& split);

}  // namespace w2s
