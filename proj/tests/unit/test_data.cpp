#include <doctest.h>

#include <cmath>
#include <set>
#include <string>

#include <json.hpp>

#include "helpers.hpp"
#include "w2s/error.hpp"
#include "w2s/io.hpp"
#include "w2s/preference_data.hpp"
#include "w2s/synthetic.hpp"
#include "w2s/tokenizer.hpp"

using namespace w2s;

namespace {

std::string line(const std::string& prompt, const std::string& chosen, const std::string& rejected,
                 std::optional<std::pair<double, double>> scores = std::nullopt) {
  nlohmann::json j{{"prompt", prompt}, {"chosen", chosen}, {"rejected", rejected}};
  if (scores) {
    j["chosen_score"] = scores->first;
    j["rejected_score"] = scores->second;
  }
  return j.dump() + "\n";
}

RawPreferenceRecord record(std::string chosen, std::string rejected, std::optional<double> cs = {},
                           std::optional<double> rs = {}) {
  RawPreferenceRecord r;
  r.prompt = "Q: ";
  r.chosen = std::move(chosen);
  r.rejected = std::move(rejected);
  r.chosen_score = cs;
  r.rejected_score = rs;
  return r;
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

CategorySpec mc_spec(double rho_a, double noise) {
  CategorySpec spec;
  spec.name = "mc";
  spec.weights = {1.0, -0.5};
  spec.max_count = 3;
  spec.temperature = 1.0;
  spec.prompt_len = 2;
  spec.response_len = 10;
  spec.domains = {{"A", "pq", "0123", "ab", rho_a, noise, 10000, 0, 0},
                  {"B", "rs", "4567", "cd", 0.0, noise, 10000, 0, 0}};
  return spec;
}

bool spurious_agrees(const PreferencePair& p) { return (p.gold_label == 1 ? p.spurious_a : p.spurious_b) > 0; }

}  // namespace

TEST_SUITE("preference-data") {
  TEST_CASE("jsonl parsing") {
    CHECK(parse_jsonl("").records.empty());
    std::string three = line("p", "a", "b") + line("p", "c", "d", {{2, 1}}) + "\n" + line("q", "e", "f");
    auto loaded = parse_jsonl(three);
    REQUIRE(loaded.records.size() == 3);
    CHECK(loaded.records[1].chosen_score == 2.0);
    CHECK(loaded.records[2].line == 4);
  }

  TEST_CASE("a line missing rejected fails strictly and is skipped leniently") {
    std::string text = line("p", "a", "b") + R"({"prompt":"p","chosen":"x"})" + "\n" + line("p", "c", "d");
    try {
      parse_jsonl(text);
      FAIL("expected a parse error");
    } catch (const ParseError& e) {
      CHECK(e.line() == 2);
      CHECK(std::string(e.what()).find("rejected") != std::string::npos);
    }
    auto lenient = parse_jsonl(text, true);
    CHECK(lenient.records.size() == 2);
    REQUIRE(lenient.issues.size() == 1);
    CHECK(lenient.issues[0].line == 2);
  }

  TEST_CASE("jsonl files load from disk") {
    auto dir = w2s::test::scratch_dir("jsonl");
    write_text_file(dir / "x.jsonl", line("p", "a", "b"));
    CHECK(load_jsonl(dir / "x.jsonl").records.size() == 1);
    CHECK_THROWS_AS(load_jsonl(dir / "missing.jsonl"), DataError);
  }

  TEST_CASE("score ties are dropped") {
    PreprocessOptions opt;
    auto tie = preprocess({record("good", "bad", 4.0, 4.0)}, opt);
    CHECK(tie.pairs.empty());
    CHECK(tie.dropped_ties == 1);
    auto kept = preprocess({record("good", "bad", 5.0, 3.0)}, opt);
    REQUIRE(kept.pairs.size() == 1);
    CHECK(ByteTokenizer::decode(kept.pairs[0].chosen_tokens()) == "good");
  }

  TEST_CASE("ten records with three ties leave seven pairs") {
    std::vector<RawPreferenceRecord> records;
    for (int i = 0; i < 10; ++i) {
      const double cs = 3.0 + i % 4, rs = i < 3 ? cs : 1.0;
      records.push_back(record("yes " + std::to_string(i), "no " + std::to_string(i), cs, rs));
    }
    auto out = preprocess(records, PreprocessOptions{});
    CHECK(out.pairs.size() == 7);
    for (const auto& p : out.pairs) CHECK(p.tokens_a != p.tokens_b);
  }

  TEST_CASE("candidate order is randomized but the gold side is tracked") {
    std::vector<RawPreferenceRecord> records;
    for (int i = 0; i < 200; ++i) records.push_back(record("chosen " + std::to_string(i), "rejected " + std::to_string(i)));
    PreprocessOptions opt;
    opt.seed = 3;
    auto out = preprocess(records, opt);
    REQUIRE(out.pairs.size() == 200);
    int a_first = 0;
    for (std::size_t i = 0; i < out.pairs.size(); ++i) {
      CHECK(ByteTokenizer::decode(out.pairs[i].chosen_tokens()) == records[i].chosen);
      a_first += out.pairs[i].gold_label;
    }
    CHECK(a_first > 60);
    CHECK(a_first < 140);
  }

  TEST_CASE("identical responses are dropped with a warning") {
    auto out = preprocess({record("same", "same")}, PreprocessOptions{});
    CHECK(out.pairs.empty());
    CHECK(out.dropped_identical == 1);
    CHECK_FALSE(out.warnings.empty());
  }

  TEST_CASE("long sequences are truncated to the budget") {
    PreprocessOptions opt;
    opt.max_seq_len = 12;
    RawPreferenceRecord r = record(std::string(30, 'c'), std::string(30, 'r'));
    r.prompt = std::string(30, 'p');
    auto out = preprocess({r}, opt);
    REQUIRE(out.pairs.size() == 1);
    const Sequence s = out.pairs[0].sequence_a();
    CHECK(s.tokens.size() <= 12);
    CHECK(s.prompt_len <= 6);
    CHECK(s.prompt_len < s.tokens.size());
  }

  TEST_CASE("split arithmetic") {
    SplitCounts h3 = derive_split_counts(17708, true);
    CHECK(h3.validation == 0);
    CHECK(h3.gold == 8854);
    CHECK(h3.w2s == 8854);
    CHECK(derive_split_counts(115396, false).validation == 11540);
    SplitCounts ten = derive_split_counts(10, false);
    CHECK(ten.validation == 1);
    CHECK(ten.gold == 5);
    CHECK(ten.w2s == 4);
  }

  TEST_CASE("protocol split is a seeded disjoint partition") {
    auto data = generate_category(w2s::test::tiny_category(), 1);
    std::vector<PreferencePair> pairs(data.domains[0].train.begin(), data.domains[0].train.begin() + 10);
    ProtocolSplit s = split_protocol(pairs, 4, false);
    CHECK(s.validation.size() == 1);
    CHECK(s.gold.size() == 5);
    CHECK(s.w2s.size() == 4);
    std::set<std::uint64_t> seen;
    for (auto* part : {&s.validation, &s.gold, &s.w2s}) {
      for (const auto& p : *part) CHECK(seen.insert(p.pair_id).second);
    }
    CHECK(seen.size() == 10);
    ProtocolSplit again = split_protocol(pairs, 4, false);
    CHECK(again.gold[0].pair_id == s.gold[0].pair_id);
    auto manifest = nlohmann::json::parse(split_manifest_json(s));
    CHECK(manifest["seed"] == 4);
    CHECK(manifest["splits"]["gold"].size() == 5);
    CHECK(manifest["counts"]["w2s"] == 4);
    CHECK_THROWS_AS(split_protocol({pairs[0], pairs[1]}, 1, false), DataError);
  }

  TEST_CASE("gold labels follow Bradley-Terry frequencies") {
    CategorySpec spec = mc_spec(0.0, 0.0);
    auto data = generate_category(spec, 21);
    double expected = 0.0, observed = 0.0;
    std::size_t large = 0, large_agree = 0;
    for (const auto& p : data.domain("A").train) {
      const double diff = true_reward(spec, p.features_a) - true_reward(spec, p.features_b);
      expected += sigmoid(diff / spec.temperature);
      observed += p.gold_label;
      if (std::abs(diff) >= 4.0) {
        ++large;
        large_agree += (diff > 0) == (p.gold_label == 1);
      }
    }
    const double n = static_cast<double>(data.domain("A").train.size());
    CHECK(std::abs(observed - expected) / n < 0.02);
    REQUIRE(large > 150);
    CHECK(static_cast<double>(large_agree) / static_cast<double>(large) > 0.97);
  }

  TEST_CASE("label noise flips the expected share") {
    CategorySpec spec = mc_spec(0.0, 0.2);
    auto data = generate_category(spec, 22);
    double observed_a = 0.0, expected_a = 0.0;
    for (const auto& p : data.domain("B").train) {
      const double pa = sigmoid(true_reward(spec, p.features_a) - true_reward(spec, p.features_b));
      expected_a += 0.8 * pa + 0.2 * (1.0 - pa);
      observed_a += p.gold_label;
    }
    CHECK(std::abs(observed_a - expected_a) / 10000.0 < 0.02);
  }

  TEST_CASE("spurious agreement is domain local") {
    auto data = generate_category(mc_spec(1.0, 0.1), 23);
    double in_a = 0.0, in_b = 0.0;
    for (const auto& p : data.domain("A").train) in_a += spurious_agrees(p);
    for (const auto& p : data.domain("B").train) in_b += spurious_agrees(p);
    CHECK(std::abs(in_a / 10000.0 - 1.0) < 0.02);
    CHECK(std::abs(in_b / 10000.0 - 0.5) < 0.02);
  }

  TEST_CASE("spurious pattern is written into the tokens") {
    CategorySpec spec = w2s::test::tiny_category(1.0);
    auto data = generate_category(spec, 24);
    for (const auto& p : data.domains[0].train) {
      const auto x = std::find(p.tokens_a.begin(), p.tokens_a.end(), 'X');
      const auto y = std::find(p.tokens_a.begin(), p.tokens_a.end(), 'Y');
      REQUIRE(x != p.tokens_a.end());
      REQUIRE(y != p.tokens_a.end());
      CHECK((x < y) == (p.spurious_a > 0));
      std::size_t markers = std::count(p.tokens_a.begin(), p.tokens_a.end(), 'a');
      CHECK(markers == static_cast<std::size_t>(p.features_a[0]));
    }
  }

  TEST_CASE("generation is deterministic and ids are unique") {
    CategorySpec spec = w2s::test::tiny_category();
    auto a = generate_category(spec, 5), b = generate_category(spec, 5), c = generate_category(spec, 6);
    CHECK(to_jsonl(a.domains[0].train) == to_jsonl(b.domains[0].train));
    CHECK(to_jsonl(a.domains[0].train) != to_jsonl(c.domains[0].train));
    std::set<std::uint64_t> ids;
    for (const auto& d : a.domains) {
      for (auto* part : {&d.train, &d.validation, &d.test}) {
        for (const auto& p : *part) CHECK(ids.insert(p.pair_id).second);
      }
    }
  }

  TEST_CASE("synthetic jsonl round-trips through preprocess") {
    auto data = generate_category(w2s::test::tiny_category(), 7);
    const auto& train = data.domains[0].train;
    auto back = preprocess(parse_jsonl(to_jsonl(train)).records, PreprocessOptions{});
    REQUIRE(back.pairs.size() == train.size());
    for (std::size_t i = 0; i < train.size(); ++i) {
      CHECK(back.pairs[i].chosen_tokens() == train[i].chosen_tokens());
    }
  }

  TEST_CASE("category validation names the field") {
    CategorySpec spec = w2s::test::tiny_category();
    spec.domains[1].markers = "a";
    CHECK_THROWS_WITH_AS(generate_category(spec, 1), doctest::Contains("markers"), ConfigError);
    spec = w2s::test::tiny_category();
    spec.domains[0].label_noise = 0.5;
    CHECK_THROWS_WITH_AS(generate_category(spec, 1), doctest::Contains("label_noise"), ConfigError);
  }

  TEST_CASE("byte tokenizer") {
    std::string s("ab\0c\xff", 5);
    auto ids = ByteTokenizer::encode(std::string_view(s.data(), s.size()));
    CHECK(ids == std::vector<int>{'a', 'b', 'c', 255});
    CHECK(ByteTokenizer::decode({'h', 0, 'i'}) == "hi");
  }
}
