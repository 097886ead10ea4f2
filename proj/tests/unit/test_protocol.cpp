#include <doctest.h>

#include <cmath>
#include <set>

#include "helpers.hpp"
#include "w2s/error.hpp"
#include "w2s/metrics.hpp"
#include "w2s/protocol.hpp"
#include "w2s/train.hpp"

using namespace w2s;
using w2s::test::random_sequence;
using w2s::test::tiny_config;

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

PreferencePair pair_from(std::uint64_t id, const Sequence& a, const Sequence& b, int gold) {
  PreferencePair p;
  p.pair_id = id;
  p.domain = "toy";
  p.prompt_tokens.assign(a.tokens.begin(), a.tokens.begin() + static_cast<long>(a.prompt_len));
  p.tokens_a.assign(a.tokens.begin() + static_cast<long>(a.prompt_len), a.tokens.end());
  p.tokens_b.assign(b.tokens.begin() + static_cast<long>(b.prompt_len), b.tokens.end());
  p.gold_label = gold;
  return p;
}

// Chosen responses carry 'G', rejected ones carry 'B'; everything else is noise.
std::vector<PreferencePair> separable_pairs(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<PreferencePair> out;
  for (std::size_t i = 0; i < n; ++i) {
    Sequence good = random_sequence(rng, 8, 3), bad = random_sequence(rng, 8, 3);
    std::copy(good.tokens.begin(), good.tokens.begin() + 3, bad.tokens.begin());
    good.tokens[3 + rng.below(5)] = 'G';
    bad.tokens[3 + rng.below(5)] = 'B';
    out.push_back(rng.bernoulli(0.5) ? pair_from(i, good, bad, 1) : pair_from(i, bad, good, 0));
  }
  return out;
}

ProtocolConfig tiny_protocol() {
  ProtocolConfig pc;
  pc.weak_model = tiny_config(1);
  pc.weak_model.d_model = 4;
  pc.weak_model.n_layers = 1;
  pc.strong_model = tiny_config(2);
  pc.adapter.enabled = true;
  pc.adapter.rank = 2;
  pc.adapter.alpha = 2.0;
  for (TrainConfig* t : {&pc.weak_train, &pc.student_train, &pc.ceiling_train}) {
    t->epochs = 1;
    t->learning_rate = 1e-2;
  }
  return pc;
}

bool same_parameters(const RewardModel& a, const RewardModel& b) {
  auto pa = a.parameters();
  auto pb = b.parameters();
  for (std::size_t i = 0; i < pa.size(); ++i) {
    if (pa[i]->value.storage() != pb[i]->value.storage()) return false;
  }
  return pa.size() == pb.size();
}

}  // namespace

TEST_SUITE("w2s-protocol") {
  TEST_CASE("zero epochs is a contract error") {
    TrainConfig cfg;
    cfg.epochs = 0;
    CHECK_THROWS_AS(cfg.validate(), ContractError);
    RewardModel m(tiny_config());
    Rng rng(1);
    std::vector<TrainExample> data{{0, random_sequence(rng, 5, 2), random_sequence(rng, 5, 2), 1.0}};
    CHECK_THROWS_AS(train_reward_model(m, data, cfg), ContractError);
  }

  TEST_CASE("a separable toy domain is learned within three epochs") {
    auto pairs = separable_pairs(200, 3);
    RewardModel m(tiny_config(4));
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.learning_rate = 1e-2;
    cfg.scope = TrainScope::full;
    train_reward_model(m, gold_examples(pairs), cfg);
    CHECK(evaluate_accuracy(m.view(false), pairs) >= 95.0);
  }

  TEST_CASE("training is deterministic under its seed") {
    auto pairs = separable_pairs(40, 5);
    RewardModel a(tiny_config(6, true)), b(tiny_config(6, true)), c(tiny_config(6, true));
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.seed = 9;
    cfg.learning_rate = 1e-2;
    train_reward_model(a, gold_examples(pairs), cfg);
    train_reward_model(b, gold_examples(pairs), cfg);
    cfg.seed = 10;
    train_reward_model(c, gold_examples(pairs), cfg);
    CHECK(same_parameters(a, b));
    CHECK_FALSE(same_parameters(a, c));
  }

  TEST_CASE("weak annotation is sigmoid of the reward gap") {
    RewardModel weak(tiny_config(7));
    auto pairs = separable_pairs(20, 8);
    auto labeled = weak_annotate(weak.view(false), pairs);
    REQUIRE(labeled.size() == pairs.size());
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      const Sequence a = pairs[i].sequence_a(), b = pairs[i].sequence_b();
      const double ra = weak.view(false).score(a.tokens, a.prompt_len).reward;
      const double rb = weak.view(false).score(b.tokens, b.prompt_len).reward;
      CHECK(*labeled[i].weak_label == doctest::Approx(sigmoid(ra - rb)).epsilon(1e-14));
      CHECK(labeled[i].gold_label == pairs[i].gold_label);

      PreferencePair swapped = pairs[i];
      std::swap(swapped.tokens_a, swapped.tokens_b);
      swapped.gold_label = 1 - swapped.gold_label;
      const double q_swapped = *weak_annotate(weak.view(false), {swapped})[0].weak_label;
      CHECK(q_swapped == doctest::Approx(1.0 - *labeled[i].weak_label).epsilon(1e-12));
    }
    CHECK(sigmoid(2.0 - 1.0) == doctest::Approx(0.731059).epsilon(1e-6));
  }

  TEST_CASE("equal weak rewards give one half") {
    RewardModel weak(tiny_config(11));
    weak.head_weight().value.fill(0.0);
    auto labeled = weak_annotate(weak.view(false), separable_pairs(5, 12));
    for (const auto& p : labeled) CHECK(*p.weak_label == 0.5);
  }

  TEST_CASE("accuracy counting") {
    RewardModel m(tiny_config(13));
    auto pairs = separable_pairs(4, 14);
    m.head_weight().value.fill(0.0);
    CHECK(evaluate_accuracy(m.view(false), pairs) == 50.0);

    RewardModel scorer(tiny_config(15));
    for (std::size_t i = 0; i < 3; ++i) {
      const Sequence a = pairs[i].sequence_a(), b = pairs[i].sequence_b();
      const double ra = scorer.view(false).score(a.tokens, a.prompt_len).reward;
      const double rb = scorer.view(false).score(b.tokens, b.prompt_len).reward;
      REQUIRE(ra != rb);
      pairs[i].gold_label = ra > rb ? 1 : 0;
    }
    pairs[3].tokens_b = pairs[3].tokens_a;
    CHECK(evaluate_accuracy(scorer.view(false), pairs) == 87.5);
    CHECK_THROWS_AS(evaluate_accuracy(scorer.view(false), {}), DataError);
  }

  TEST_CASE("label stream audit") {
    LabelStreamAudit audit({{1, 0.25}, {2, 0.75}}, {3});
    auto observe = audit.observer();
    TrainExample ok{1, {}, {}, 0.25}, gold{2, {}, {}, 1.0}, foreign{3, {}, {}, 0.25};
    const TrainExample* good[] = {&ok};
    observe(good);
    CHECK(audit.labels_seen() == 1);
    const TrainExample* leaked[] = {&gold};
    CHECK_THROWS_WITH_AS(observe(leaked), doctest::Contains("weak label"), ContractError);
    const TrainExample* outside[] = {&foreign};
    CHECK_THROWS_WITH_AS(observe(outside), doctest::Contains("outside"), ContractError);
  }

  TEST_CASE("student audit forbids target and held-out ids") {
    auto data = generate_category(w2s::test::tiny_category(), 3);
    ProtocolSplit split = split_protocol(data.domain("src").train, 4, false);
    RewardModel weak(tiny_config(5));
    auto labeled = weak_annotate(weak.view(false), split.w2s);
    LabelStreamAudit audit = make_student_audit(data, "src", split, labeled);
    auto observe = audit.observer();
    const std::vector<const std::vector<PreferencePair>*> parts{&data.domain("tgt").train, &split.gold, &split.validation,
                                                                &data.domain("src").test};
    for (const auto* part : parts) {
      const PreferencePair& p = part->front();
      TrainExample e{p.pair_id, p.sequence_a(), p.sequence_b(), 0.5};
      const TrainExample* batch[] = {&e};
      CHECK_THROWS_AS(observe(batch), ContractError);
    }
  }

  TEST_CASE("ceiling and student share initialization") {
    RewardModel base(tiny_config(16));
    AdapterConfig ad;
    ad.enabled = true;
    ad.rank = 2;
    ad.alpha = 2;
    RewardModel a = prepare_model(base, ad, 17), b = prepare_model(base, ad, 17), c = prepare_model(base, ad, 18);
    CHECK(same_parameters(a, b));
    CHECK_FALSE(same_parameters(a, c));
    CHECK(a.train_scope() == TrainScope::adapters);
  }

  TEST_CASE("end-to-end run shape, isolation and determinism") {
    auto data = generate_category(w2s::test::tiny_category(), 19);
    ProtocolConfig pc = tiny_protocol();
    RewardModel weak_base(pc.weak_model), strong_base(pc.strong_model);
    MethodSpec anchor;
    anchor.kind = Method::anchor;
    anchor.anchor.lambda = 1e-2;
    auto runs = run_w2s(data, "src", {MethodSpec{}, anchor}, {1}, weak_base, strong_base, pc);
    REQUIRE(runs.size() == 1);
    const SeedAccuracy& acc = runs[0].accuracy;
    CHECK(acc.weak.size() == 2);
    CHECK(acc.ceiling.size() == 2);
    CHECK(acc.student.size() == 2);
    CHECK(acc.student.at("naive").size() == 2);
    CHECK(acc.student.at("anchor_1e-02").count("tgt") == 1);
    for (const auto& p : runs[0].weak_labels) CHECK(p.weak_label.has_value());
    CHECK(runs[0].weak_labels.size() == runs[0].split.w2s.size());

    auto again = run_w2s(data, "src", {MethodSpec{}, anchor}, {1}, weak_base, strong_base, pc);
    CHECK(again[0].accuracy.student == acc.student);
    CHECK(again[0].accuracy.weak == acc.weak);
    CHECK(same_parameters(again[0].students.at("naive"), runs[0].students.at("naive")));
  }

  TEST_CASE("seed replicates are averaged before metrics") {
    AccuracyMatrix m;
    const double w[] = {70.0, 72.0, 71.0}, s[] = {73.0, 71.5, 75.25}, g[] = {80.0, 79.0, 81.0};
    for (int i = 0; i < 3; ++i) {
      m.add_weak("src", "src", w[i]);
      m.add_student("naive", "src", "src", s[i]);
      m.add_ceiling("src", "src", g[i]);
    }
    const double mw = (70.0 + 72.0 + 71.0) / 3.0, ms = (73.0 + 71.5 + 75.25) / 3.0, mg = 80.0;
    CHECK(m.mean(Role::student, "naive", "src", "src") == doctest::Approx(ms).epsilon(1e-15));
    CHECK(m.replicates(Role::weak, "", "src", "src").size() == 3);
    auto report = build_report(m, "cat", "fam");
    REQUIRE(report.in_domain.size() == 1);
    CHECK(report.in_domain[0].wrg == doctest::Approx(ms - mw).epsilon(1e-12));
    CHECK(report.in_domain[0].pgr == doctest::Approx(100.0 * (ms - mw) / (mg - mw)).epsilon(1e-12));
  }
}
