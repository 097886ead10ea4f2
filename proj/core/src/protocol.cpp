#include "w2s/protocol.hpp"

#include <cmath>

#include "w2s/error.hpp"
#include "w2s/rng.hpp"

namespace w2s {

namespace {

double sigmoid(double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

// Rewards for the a and b candidates of every pair.
std::pair<std::vector<double>, std::vector<double>> pair_rewards(const ModelView& model,
                                                                 const std::vector<PreferencePair>& pairs) {
  std::vector<Sequence> seqs;
  seqs.reserve(2 * pairs.size());
  for (const PreferencePair& p : pairs) {
    seqs.push_back(p.sequence_a());
    seqs.push_back(p.sequence_b());
  }
  const std::vector<double> r = model.rewards(seqs);
  std::vector<double> ra(pairs.size()), rb(pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    ra[i] = r[2 * i];
    rb[i] = r[2 * i + 1];
  }
  return {ra, rb};
}

}  // namespace

std::vector<PreferencePair> weak_annotate(const ModelView& weak, const std::vector<PreferencePair>& pairs) {
  std::vector<PreferencePair> out = pairs;
  if (pairs.empty()) return out;
  const auto [ra, rb] = pair_rewards(weak, pairs);
  for (std::size_t i = 0; i < out.size(); ++i) out[i].weak_label = sigmoid(ra[i] - rb[i]);
  return out;
}

double evaluate_accuracy(const ModelView& model, const std::vector<PreferencePair>& pairs) {
  if (pairs.empty()) throw DataError("evaluate_accuracy: empty test set");
  const auto [ra, rb] = pair_rewards(model, pairs);
  double correct = 0.0;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const double chosen = pairs[i].gold_label == 1 ? ra[i] : rb[i];
    const double other = pairs[i].gold_label == 1 ? rb[i] : ra[i];
    if (chosen > other) {
      correct += 1.0;
    } else if (chosen == other) {
      correct += 0.5;
    }
  }
  return 100.0 * correct / static_cast<double>(pairs.size());
}

LabelStreamAudit::LabelStreamAudit(std::map<std::uint64_t, double> allowed, std::set<std::uint64_t> forbidden)
    : allowed_(std::move(allowed)), forbidden_(std::move(forbidden)) {}

BatchObserver LabelStreamAudit::observer() {
  return [this](std::span<const TrainExample* const> batch) {
    for (const TrainExample* e : batch) {
      if (forbidden_.count(e->pair_id)) {
        throw ContractError("protocol violation: pair " + std::to_string(e->pair_id) +
                            " from outside the w2s subset reached the student");
      }
      auto it = allowed_.find(e->pair_id);
      if (it == allowed_.end() || it->second != e->q) {
        throw ContractError("protocol violation: student label for pair " + std::to_string(e->pair_id) +
                            " is not its weak label");
      }
      ++seen_;
    }
  };
}

RewardModel prepare_model(const RewardModel& base, const AdapterConfig& adapter, std::uint64_t seed) {
  RewardModel m = base;
  if (adapter.enabled) {
    m.attach_adapters(adapter, mix_seed(seed, hash_tag("adapters")));
    m.set_train_scope(TrainScope::adapters);
  } else {
    m.set_train_scope(TrainScope::full);
  }
  m.reset_head(mix_seed(seed, hash_tag("head")));
  return m;
}

namespace {

TrainConfig seeded(TrainConfig cfg, std::uint64_t seed, const char* role, const AdapterConfig& adapter) {
  cfg.seed = mix_seed(seed, hash_tag(role));
  cfg.scope = adapter.enabled ? TrainScope::adapters : TrainScope::full;
  return cfg;
}

std::uint64_t weak_seed(std::uint64_t seed) { return mix_seed(seed, hash_tag("weak-init")); }
std::uint64_t strong_seed(std::uint64_t seed) { return mix_seed(seed, hash_tag("strong-init")); }

}  // namespace

RewardModel train_weak(const RewardModel& weak_base, const std::vector<PreferencePair>& gold, const ProtocolConfig& cfg,
                       std::uint64_t seed, TrainResult* curve) {
  RewardModel m = prepare_model(weak_base, cfg.adapter, weak_seed(seed));
  TrainConfig tc = seeded(cfg.weak_train, seed, "weak-order", cfg.adapter);
  tc.method = MethodSpec{};
  TrainResult r = train_reward_model(m, gold_examples(gold), tc);
  if (curve) *curve = std::move(r);
  return m;
}

RewardModel train_ceiling(const RewardModel& strong_base, const std::vector<PreferencePair>& w2s,
                          const ProtocolConfig& cfg, std::uint64_t seed, TrainResult* curve) {
  RewardModel m = prepare_model(strong_base, cfg.adapter, strong_seed(seed));
  TrainConfig tc = seeded(cfg.ceiling_train, seed, "strong-order", cfg.adapter);
  tc.method = MethodSpec{};
  TrainResult r = train_reward_model(m, gold_examples(w2s), tc);
  if (curve) *curve = std::move(r);
  return m;
}

RewardModel train_student(const RewardModel& strong_base, const std::vector<PreferencePair>& weak_labeled,
                          const MethodSpec& method, const ProtocolConfig& cfg, std::uint64_t seed,
                          LabelStreamAudit& audit, TrainResult* curve) {
  RewardModel m = prepare_model(strong_base, cfg.adapter, strong_seed(seed));
  TrainConfig tc = seeded(cfg.student_train, seed, "strong-order", cfg.adapter);
  tc.method = method;
  TrainResult r = train_reward_model(m, weak_examples(weak_labeled), tc, audit.observer());
  if (curve) *curve = std::move(r);
  return m;
}

LabelStreamAudit make_student_audit(const CategoryData& data, const std::string& source, const ProtocolSplit& split,
                                    const std::vector<PreferencePair>& weak_labeled) {
  std::map<std::uint64_t, double> allowed;
  for (const PreferencePair& p : weak_labeled) {
    if (!p.weak_label) throw ContractError("student audit: pair " + std::to_string(p.pair_id) + " lacks a weak label");
    allowed.emplace(p.pair_id, *p.weak_label);
  }
  std::set<std::uint64_t> forbidden;
  for (const DomainData& d : data.domains) {
    for (const auto* set : {&d.train, &d.validation, &d.test}) {
      for (const PreferencePair& p : *set) {
        if (d.name != source || !allowed.count(p.pair_id)) forbidden.insert(p.pair_id);
      }
    }
  }
  for (const auto* set : {&split.gold, &split.validation, &split.test}) {
    for (const PreferencePair& p : *set) forbidden.insert(p.pair_id);
  }
  return LabelStreamAudit(std::move(allowed), std::move(forbidden));
}

std::vector<RunArtifacts> run_w2s(const CategoryData& data, const std::string& source,
                                  const std::vector<MethodSpec>& methods, const std::vector<std::uint64_t>& seeds,
                                  const RewardModel& weak_base, const RewardModel& strong_base,
                                  const ProtocolConfig& cfg) {
  if (data.domains.size() < 2) throw ConfigError("run_w2s: category needs at least 2 domains");
  for (const DomainData& d : data.domains) {
    if (d.test.empty()) throw ConfigError("run_w2s: domain \"" + d.name + "\" has no test split");
  }
  const DomainData& src = data.domain(source);
  std::vector<RunArtifacts> out;
  for (std::uint64_t seed : seeds) {
    RunArtifacts run;
    run.source = source;
    run.seed = seed;
    run.split = split_protocol(src.train, seed, !src.validation.empty());
    if (run.split.validation.empty()) run.split.validation = src.validation;
    run.split.test = src.test;
    run.weak = train_weak(weak_base, run.split.gold, cfg, seed, &run.weak_curve);
    run.weak_labels = weak_annotate(run.weak->view(true), run.split.w2s);
    run.ceiling = train_ceiling(strong_base, run.split.w2s, cfg, seed, &run.ceiling_curve);
    for (const DomainData& d : data.domains) {
      run.accuracy.weak[d.name] = evaluate_accuracy(run.weak->view(true), d.test);
      run.accuracy.ceiling[d.name] = evaluate_accuracy(run.ceiling->view(true), d.test);
    }
    for (const MethodSpec& method : methods) {
      LabelStreamAudit audit = make_student_audit(data, source, run.split, run.weak_labels);
      TrainResult curve;
      RewardModel student = train_student(strong_base, run.weak_labels, method, cfg, seed, audit, &curve);
      const std::string label = method.label();
      for (const DomainData& d : data.domains) {
        run.accuracy.student[label][d.name] = evaluate_accuracy(student.view(true), d.test);
      }
      run.student_curves.emplace(label, std::move(curve));
      run.students.emplace(label, std::move(student));
    }
    out.push_back(std::move(run));
  }
  return out;
}

}  // namespace w2s
