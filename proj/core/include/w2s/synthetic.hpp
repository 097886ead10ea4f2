#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "w2s/model.hpp"
#include "w2s/preference_data.hpp"

namespace w2s {

/// How the spurious pattern is written into a response.
enum class SpuriousKind {
  /// Both spurious tokens appear; "XY" order is positive, "YX" negative.
  order,
  /// The first spurious token is present (positive) or absent (negative).
  token,
};

struct DomainSpec {
  std::string name;
  /// Characters prompts are drawn from.
  std::string prompt_alphabet;
  /// Characters that pad responses between feature markers.
  std::string filler_alphabet;
  /// One marker character per latent feature.
  std::string markers;
  /// Agreement between the spurious pattern and the gold label is (1+rho)/2.
  double spurious_rho = 0.0;
  /// Probability that the gold label is flipped.
  double label_noise = 0.0;
  std::size_t n_train = 0;
  std::size_t n_validation = 0;
  std::size_t n_test = 0;
};

/// A preference category: one latent reward shared by several domains.
struct CategorySpec {
  std::string name;
  /// True reward is weights . counts, one weight per latent feature.
  std::vector<double> weights;
  /// Feature counts are uniform on 0..max_count.
  std::size_t max_count = 3;
  /// Bradley-Terry temperature on the true reward difference.
  double temperature = 1.0;
  std::size_t prompt_len = 6;
  std::size_t response_len = 16;
  SpuriousKind spurious_kind = SpuriousKind::order;
  /// Two characters for `order`, at least one for `token`.
  std::string spurious_tokens = "XY";
  std::vector<DomainSpec> domains;

  std::size_t features() const noexcept { return weights.size(); }
  /// Throws ConfigError naming the offending field.
  void validate() const;
};

struct DomainData {
  std::string name;
  std::vector<PreferencePair> train;
  std::vector<PreferencePair> validation;
  std::vector<PreferencePair> test;
};

struct CategoryData {
  std::string name;
  std::vector<DomainData> domains;

  const DomainData& domain(const std::string& name) const;
};

/// Deterministic under `seed`. Each response carries uniform feature counts;
/// the gold label is a Bradley-Terry draw on the true reward difference,
/// flipped with probability `label_noise`; the spurious pattern marks the
/// gold-preferred response positive with probability (1+rho)/2.
CategoryData generate_category(const CategorySpec& spec, std::uint64_t seed);

/// Unlabeled response sequence with its latent feature counts.
struct PretrainExample {
  Sequence sequence;
  std::vector<double> features;
};

/// Single responses from every domain, spurious pattern drawn at random.
std::vector<PretrainExample> generate_pretraining_corpus(const CategorySpec& spec, std::size_t n,
                                                         std::uint64_t seed);

/// True reward of a feature vector under `spec`.
double true_reward(const CategorySpec& spec, const std::vector<double>& features);

/// Serializes pairs in the preference JSONL input format with chosen/rejected
/// resolved through `gold_label`. Extra keys carry domain and pair id.
std::string to_jsonl(const std::vector<PreferencePair>& pairs);

}  // namespace w2s
