#include "w2s/preference_data.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

#include "w2s/error.hpp"
#include "w2s/rng.hpp"
#include "w2s/tokenizer.hpp"

namespace w2s {

using nlohmann::json;

Sequence PreferencePair::sequence_a() const {
  Sequence s{prompt_tokens, prompt_tokens.size()};
  s.tokens.insert(s.tokens.end(), tokens_a.begin(), tokens_a.end());
  return s;
}

Sequence PreferencePair::sequence_b() const {
  Sequence s{prompt_tokens, prompt_tokens.size()};
  s.tokens.insert(s.tokens.end(), tokens_b.begin(), tokens_b.end());
  return s;
}

namespace {

RawPreferenceRecord parse_record(const std::string& line, std::size_t number) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::parse_error& e) {
    throw ParseError(number, std::string("invalid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ParseError(number, "expected a JSON object");
  RawPreferenceRecord r;
  r.line = number;
  for (const char* field : {"prompt", "chosen", "rejected"}) {
    if (!j.contains(field)) throw ParseError(number, std::string("missing required field \"") + field + "\"");
    if (!j[field].is_string()) throw ParseError(number, std::string("field \"") + field + "\" must be a string");
    if (j[field].get_ref<const std::string&>().empty()) {
      throw ParseError(number, std::string("field \"") + field + "\" is empty");
    }
  }
  r.prompt = j["prompt"].get<std::string>();
  r.chosen = j["chosen"].get<std::string>();
  r.rejected = j["rejected"].get<std::string>();
  for (const char* field : {"chosen_score", "rejected_score"}) {
    if (j.contains(field) && !j[field].is_null()) {
      if (!j[field].is_number()) throw ParseError(number, std::string("field \"") + field + "\" must be a number");
      (std::string(field) == "chosen_score" ? r.chosen_score : r.rejected_score) = j[field].get<double>();
    }
  }
  return r;
}

JsonlLoad parse_stream(std::istream& in, bool lenient) {
  JsonlLoad out;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    try {
      out.records.push_back(parse_record(line, number));
    } catch (const ParseError& e) {
      if (!lenient) throw;
      out.issues.push_back({e.line(), e.what()});
    }
  }
  return out;
}

}  // namespace

JsonlLoad load_jsonl(const std::filesystem::path& path, bool lenient) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  return parse_stream(in, lenient);
}

JsonlLoad parse_jsonl(const std::string& text, bool lenient) {
  std::istringstream in(text);
  return parse_stream(in, lenient);
}

PreprocessResult preprocess(const std::vector<RawPreferenceRecord>& records, const PreprocessOptions& options) {
  if (options.max_seq_len < 2) throw ConfigError("preprocess: max_seq_len must be at least 2");
  PreprocessResult out;
  Rng rng(options.seed, "preprocess:" + options.domain);
  std::uint64_t next_id = options.id_base;
  for (const RawPreferenceRecord& r : records) {
    const bool shuffle_a_first = rng.bernoulli(0.5);
    if (r.chosen_score && r.rejected_score && *r.chosen_score == *r.rejected_score) {
      ++out.dropped_ties;
      continue;
    }
    std::vector<int> prompt = ByteTokenizer::encode(r.prompt);
    std::vector<int> chosen = ByteTokenizer::encode(r.chosen);
    std::vector<int> rejected = ByteTokenizer::encode(r.rejected);
    if (prompt.empty() || chosen.empty() || rejected.empty()) {
      out.warnings.push_back("line " + std::to_string(r.line) + ": empty after tokenization, dropped");
      ++out.dropped_identical;
      continue;
    }
    const std::size_t prompt_budget = std::max<std::size_t>(1, options.max_seq_len / 2);
    if (prompt.size() + std::max(chosen.size(), rejected.size()) > options.max_seq_len && prompt.size() > prompt_budget) {
      prompt.erase(prompt.begin(), prompt.end() - static_cast<std::ptrdiff_t>(prompt_budget));
    }
    const std::size_t response_budget = options.max_seq_len - prompt.size();
    if (chosen.size() > response_budget) chosen.resize(response_budget);
    if (rejected.size() > response_budget) rejected.resize(response_budget);
    if (chosen == rejected) {
      out.warnings.push_back("line " + std::to_string(r.line) + ": responses tokenize identically, dropped");
      ++out.dropped_identical;
      continue;
    }
    PreferencePair p;
    p.pair_id = next_id++;
    p.domain = options.domain;
    p.prompt_tokens = std::move(prompt);
    if (shuffle_a_first) {
      p.tokens_a = std::move(chosen);
      p.tokens_b = std::move(rejected);
      p.gold_label = 1;
    } else {
      p.tokens_a = std::move(rejected);
      p.tokens_b = std::move(chosen);
      p.gold_label = 0;
    }
    out.pairs.push_back(std::move(p));
  }
  return out;
}

SplitCounts derive_split_counts(std::size_t train, bool provided_validation) {
  SplitCounts c;
  c.validation = provided_validation ? 0 : (train + 9) / 10;
  const std::size_t rest = train - c.validation;
  c.w2s = rest / 2;
  c.gold = rest - c.w2s;
  return c;
}

ProtocolSplit split_protocol(const std::vector<PreferencePair>& pairs, std::uint64_t seed, bool provided_validation) {
  if (pairs.size() < 4) {
    throw DataError("split_protocol: need at least 4 pairs, got " + std::to_string(pairs.size()));
  }
  std::vector<std::size_t> order(pairs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(seed, "split");
  rng.shuffle(order);
  const SplitCounts c = derive_split_counts(pairs.size(), provided_validation);
  ProtocolSplit split;
  split.seed = seed;
  std::size_t i = 0;
  for (; i < c.validation; ++i) split.validation.push_back(pairs[order[i]]);
  for (std::size_t n = 0; n < c.gold; ++n, ++i) split.gold.push_back(pairs[order[i]]);
  for (; i < order.size(); ++i) split.w2s.push_back(pairs[order[i]]);
  return split;
}

std::string split_manifest_json(const ProtocolSplit& split) {
  auto ids = [](const std::vector<PreferencePair>& v) {
    json a = json::array();
    for (const auto& p : v) a.push_back(p.pair_id);
    return a;
  };
  json j;
  j["seed"] = split.seed;
  j["counts"] = {{"gold", split.gold.size()},
                 {"w2s", split.w2s.size()},
                 {"validation", split.validation.size()},
                 {"test", split.test.size()}};
  j["splits"] = {{"gold", ids(split.gold)},
                 {"w2s", ids(split.w2s)},
                 {"validation", ids(split.validation)},
                 {"test", ids(split.test)}};
  return j.dump(2);
}

}  // namespace w2s
