#include "w2s/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include <json.hpp>

#include "w2s/error.hpp"
#include "w2s/rng.hpp"
#include "w2s/tokenizer.hpp"

namespace w2s {

void CategorySpec::validate() const {
  auto fail = [](const std::string& field, const std::string& why) {
    throw ConfigError("category." + field + ": " + why);
  };
  if (weights.empty()) fail("weights", "need at least one latent feature");
  bool any = false;
  for (double w : weights) {
    if (!std::isfinite(w)) fail("weights", "must be finite");
    any = any || w != 0.0;
  }
  if (!any || max_count == 0) fail("weights", "degenerate spec: every response has the same true reward");
  if (!(temperature > 0.0)) fail("temperature", "must be positive");
  if (prompt_len < 1) fail("prompt_len", "must be at least 1");
  const std::size_t spurious_slots = spurious_kind == SpuriousKind::order ? 2 : 1;
  if (response_len < features() * max_count + spurious_slots) {
    fail("response_len", "too short for max_count markers per feature plus the spurious pattern");
  }
  if (spurious_tokens.size() < spurious_slots) fail("spurious_tokens", "too few characters for the spurious kind");
  if (domains.size() < 2) fail("domains", "a category needs at least 2 domains");
  std::set<std::string> names;
  for (std::size_t i = 0; i < domains.size(); ++i) {
    const DomainSpec& d = domains[i];
    const std::string at = "domains[" + std::to_string(i) + "]";
    if (d.name.empty()) fail(at + ".name", "must be non-empty");
    if (!names.insert(d.name).second) fail(at + ".name", "duplicate domain \"" + d.name + "\"");
    if (d.prompt_alphabet.empty()) fail(at + ".prompt_alphabet", "must be non-empty");
    if (d.filler_alphabet.empty()) fail(at + ".filler_alphabet", "must be non-empty");
    if (d.markers.size() != features()) fail(at + ".markers", "need one marker per weight");
    std::set<char> marks(d.markers.begin(), d.markers.end());
    if (marks.size() != d.markers.size()) fail(at + ".markers", "markers must be distinct");
    for (char c : d.filler_alphabet) {
      if (marks.count(c) || spurious_tokens.find(c) != std::string::npos) {
        fail(at + ".filler_alphabet", "overlaps markers or spurious tokens");
      }
    }
    for (char c : d.markers) {
      if (spurious_tokens.find(c) != std::string::npos) fail(at + ".markers", "overlaps spurious tokens");
    }
    for (const std::string* s : {&d.prompt_alphabet, &d.filler_alphabet, &d.markers}) {
      if (s->find('\0') != std::string::npos) fail(at, "NUL is reserved for padding");
    }
    if (!(d.spurious_rho >= 0.0 && d.spurious_rho <= 1.0)) fail(at + ".spurious_rho", "must lie in [0, 1]");
    if (!(d.label_noise >= 0.0 && d.label_noise < 0.5)) fail(at + ".label_noise", "must lie in [0, 0.5)");
  }
}

const DomainData& CategoryData::domain(const std::string& n) const {
  for (const DomainData& d : domains) {
    if (d.name == n) return d;
  }
  throw ConfigError("category " + name + " has no domain \"" + n + "\"");
}

double true_reward(const CategorySpec& spec, const std::vector<double>& features) {
  double r = 0.0;
  for (std::size_t i = 0; i < spec.weights.size(); ++i) r += spec.weights[i] * features[i];
  return r;
}

namespace {

std::vector<int> make_prompt(const CategorySpec& spec, const DomainSpec& d, Rng& rng) {
  std::vector<int> out(spec.prompt_len);
  for (int& t : out) t = static_cast<unsigned char>(d.prompt_alphabet[rng.below(d.prompt_alphabet.size())]);
  return out;
}

std::vector<double> draw_features(const CategorySpec& spec, Rng& rng) {
  std::vector<double> f(spec.features());
  for (double& v : f) v = static_cast<double>(rng.below(spec.max_count + 1));
  return f;
}

// Writes markers, the spurious pattern, and filler into a shuffled layout.
std::vector<int> render_response(const CategorySpec& spec, const DomainSpec& d, const std::vector<double>& features,
                                 int spurious, Rng& rng) {
  std::vector<int> slots;
  for (std::size_t i = 0; i < features.size(); ++i) {
    for (int c = 0; c < static_cast<int>(features[i]); ++c) slots.push_back(static_cast<unsigned char>(d.markers[i]));
  }
  while (slots.size() < spec.response_len) {
    slots.push_back(static_cast<unsigned char>(d.filler_alphabet[rng.below(d.filler_alphabet.size())]));
  }
  rng.shuffle(slots);
  std::vector<std::size_t> filler;
  for (std::size_t k = 0; k < slots.size(); ++k) {
    if (d.filler_alphabet.find(static_cast<char>(slots[k])) != std::string::npos) filler.push_back(k);
  }
  const int x = static_cast<unsigned char>(spec.spurious_tokens[0]);
  if (spec.spurious_kind == SpuriousKind::order) {
    const int y = static_cast<unsigned char>(spec.spurious_tokens[1]);
    std::size_t i = rng.below(filler.size());
    std::size_t j = rng.below(filler.size() - 1);
    if (j >= i) ++j;
    if (j < i) std::swap(i, j);
    slots[filler[i]] = spurious > 0 ? x : y;
    slots[filler[j]] = spurious > 0 ? y : x;
  } else if (spurious > 0) {
    slots[filler[rng.below(filler.size())]] = x;
  }
  return slots;
}

double sigmoid(double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

std::vector<PreferencePair> generate_pairs(const CategorySpec& spec, const DomainSpec& d, std::size_t n,
                                           std::uint64_t& next_id, Rng& rng) {
  std::vector<PreferencePair> out;
  out.reserve(n);
  while (out.size() < n) {
    PreferencePair p;
    p.domain = d.name;
    p.prompt_tokens = make_prompt(spec, d, rng);
    p.features_a = draw_features(spec, rng);
    p.features_b = draw_features(spec, rng);
    const double diff = true_reward(spec, p.features_a) - true_reward(spec, p.features_b);
    int gold = rng.bernoulli(sigmoid(diff / spec.temperature)) ? 1 : 0;
    if (rng.bernoulli(d.label_noise)) gold = 1 - gold;
    p.gold_label = gold;
    const bool agree = rng.bernoulli(0.5 * (1.0 + d.spurious_rho));
    const int preferred_sign = agree ? 1 : -1;
    p.spurious_a = gold == 1 ? preferred_sign : -preferred_sign;
    p.spurious_b = -p.spurious_a;
    p.tokens_a = render_response(spec, d, p.features_a, p.spurious_a, rng);
    p.tokens_b = render_response(spec, d, p.features_b, p.spurious_b, rng);
    if (p.tokens_a == p.tokens_b) continue;
    p.pair_id = next_id++;
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace

CategoryData generate_category(const CategorySpec& spec, std::uint64_t seed) {
  spec.validate();
  CategoryData data;
  data.name = spec.name;
  for (std::size_t i = 0; i < spec.domains.size(); ++i) {
    const DomainSpec& d = spec.domains[i];
    Rng rng(seed, "domain:" + spec.name + ":" + d.name);
    // Pair ids are unique across the category: the domain index lives in the high bits.
    std::uint64_t next_id = (static_cast<std::uint64_t>(i + 1) << 32);
    DomainData out;
    out.name = d.name;
    out.train = generate_pairs(spec, d, d.n_train, next_id, rng);
    out.validation = generate_pairs(spec, d, d.n_validation, next_id, rng);
    out.test = generate_pairs(spec, d, d.n_test, next_id, rng);
    data.domains.push_back(std::move(out));
  }
  return data;
}

std::vector<PretrainExample> generate_pretraining_corpus(const CategorySpec& spec, std::size_t n, std::uint64_t seed) {
  spec.validate();
  Rng rng(seed, "pretrain:" + spec.name);
  std::vector<PretrainExample> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const DomainSpec& d = spec.domains[i % spec.domains.size()];
    PretrainExample ex;
    ex.features = draw_features(spec, rng);
    const int spurious = rng.bernoulli(0.5) ? 1 : -1;
    ex.sequence.tokens = make_prompt(spec, d, rng);
    ex.sequence.prompt_len = ex.sequence.tokens.size();
    const std::vector<int> response = render_response(spec, d, ex.features, spurious, rng);
    ex.sequence.tokens.insert(ex.sequence.tokens.end(), response.begin(), response.end());
    out.push_back(std::move(ex));
  }
  return out;
}

std::string to_jsonl(const std::vector<PreferencePair>& pairs) {
  std::string out;
  for (const PreferencePair& p : pairs) {
    const auto& chosen = p.gold_label == 1 ? p.tokens_a : p.tokens_b;
    const auto& rejected = p.gold_label == 1 ? p.tokens_b : p.tokens_a;
    nlohmann::json j;
    j["prompt"] = ByteTokenizer::decode(p.prompt_tokens);
    j["chosen"] = ByteTokenizer::decode(chosen);
    j["rejected"] = ByteTokenizer::decode(rejected);
    j["domain"] = p.domain;
    j["pair_id"] = p.pair_id;
    out += j.dump();
    out += '\n';
  }
  return out;
}

}  // namespace w2s
