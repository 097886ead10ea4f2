#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "w2s/model.hpp"
#include "w2s/preference_data.hpp"
#include "w2s/synthetic.hpp"
#include "w2s/train.hpp"

namespace w2s {

/// Copies of `pairs` with q = sigmoid(w(x, y_a) - w(x, y_b)) in the stored
/// candidate order. Gold labels are kept on the pairs.
std::vector<PreferencePair> weak_annotate(const ModelView& weak, const std::vector<PreferencePair>& pairs);

/// Percent of pairs whose gold-preferred candidate scores strictly higher;
/// exact ties count one half. Throws DataError on an empty set.
double evaluate_accuracy(const ModelView& model, const std::vector<PreferencePair>& pairs);

/// Desk-scale model and training settings shared by all runs of a category.
struct ProtocolConfig {
  ModelConfig weak_model;
  ModelConfig strong_model;
  AdapterConfig adapter;
  TrainConfig weak_train;
  /// Student settings; `method` is replaced per method.
  TrainConfig student_train;
  TrainConfig ceiling_train;
};

/// Checks the protocol's zero-shot and label-stream guarantees while a
/// student trains. Violations throw ContractError.
class LabelStreamAudit {
 public:
  /// `allowed` maps every w2s pair id to its weak label.
  LabelStreamAudit(std::map<std::uint64_t, double> allowed, std::set<std::uint64_t> forbidden);

  BatchObserver observer();
  std::size_t labels_seen() const noexcept { return seen_; }

 private:
  std::map<std::uint64_t, double> allowed_;
  std::set<std::uint64_t> forbidden_;
  std::size_t seen_ = 0;
};

/// The three models' accuracies on each eval domain for one seed.
struct SeedAccuracy {
  std::map<std::string, double> weak;
  std::map<std::string, double> ceiling;
  /// method label -> eval domain -> accuracy.
  std::map<std::string, std::map<std::string, double>> student;
};

struct RunArtifacts {
  std::string source;
  std::uint64_t seed = 0;
  ProtocolSplit split;
  std::vector<PreferencePair> weak_labels;
  std::optional<RewardModel> weak;
  std::optional<RewardModel> ceiling;
  std::map<std::string, RewardModel> students;
  TrainResult weak_curve;
  TrainResult ceiling_curve;
  std::map<std::string, TrainResult> student_curves;
  SeedAccuracy accuracy;
};

/// Trainable copy of a pretrained base: fresh adapters and head from `seed`.
RewardModel prepare_model(const RewardModel& base, const AdapterConfig& adapter, std::uint64_t seed);

/// Train w_S on gold labels of the gold subset.
RewardModel train_weak(const RewardModel& weak_base, const std::vector<PreferencePair>& gold,
                       const ProtocolConfig& cfg, std::uint64_t seed, TrainResult* curve = nullptr);
/// Train m_gt_S on the gold labels of the w2s subset.
RewardModel train_ceiling(const RewardModel& strong_base, const std::vector<PreferencePair>& w2s,
                          const ProtocolConfig& cfg, std::uint64_t seed, TrainResult* curve = nullptr);
/// Train m_S on weak labels only, under `audit`.
RewardModel train_student(const RewardModel& strong_base, const std::vector<PreferencePair>& weak_labeled,
                          const MethodSpec& method, const ProtocolConfig& cfg, std::uint64_t seed,
                          LabelStreamAudit& audit, TrainResult* curve = nullptr);

/// Builds the audit for a student run: labels must be the weak labels of the
/// w2s subset; no id from other domains or other splits may appear.
LabelStreamAudit make_student_audit(const CategoryData& data, const std::string& source, const ProtocolSplit& split,
                                    const std::vector<PreferencePair>& weak_labeled);

/// Per seed: train w_S, annotate, train every student method and the ceiling,
/// and evaluate all of them on every domain's test split.
std::vector<RunArtifacts> run_w2s(const CategoryData& data, const std::string& source,
                                  const std::vector<MethodSpec>& methods, const std::vector<std::uint64_t>& seeds,
                                  const RewardModel& weak_base, const RewardModel& strong_base,
                                  const ProtocolConfig& cfg);

}  // namespace w2s
