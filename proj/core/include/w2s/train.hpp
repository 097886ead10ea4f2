#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "w2s/losses.hpp"
#include "w2s/model.hpp"
#include "w2s/optimizer.hpp"
#include "w2s/preference_data.hpp"
#include "w2s/synthetic.hpp"

namespace w2s {

/// What a trainer sees of one pair: both sequences and a single label q.
struct TrainExample {
  std::uint64_t pair_id = 0;
  Sequence a;
  Sequence b;
  double q = 0.5;
};

/// Hard labels q in {0, 1} from the gold annotation.
std::vector<TrainExample> gold_examples(const std::vector<PreferencePair>& pairs);
/// Soft labels from `weak_label`. Throws ContractError when a pair has none.
std::vector<TrainExample> weak_examples(const std::vector<PreferencePair>& pairs);

struct TrainConfig {
  double learning_rate = 2e-4;
  std::size_t epochs = 3;
  std::size_t batch_size = 16;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
  MethodSpec method;
  TrainScope scope = TrainScope::adapters;

  /// Throws ContractError for epochs == 0, ConfigError for other bad fields.
  void validate() const;
};

struct StepRecord {
  std::size_t epoch = 0;
  std::size_t step = 0;
  LossBreakdown loss;
};

struct TrainResult {
  std::vector<StepRecord> steps;
  /// Mean total loss per epoch.
  std::vector<double> epoch_loss;
};

/// Observes every batch before its update (pair ids and labels).
using BatchObserver = std::function<void(std::span<const TrainExample* const>)>;

/// Minimizes the method's combined objective with Adam. Data order is a
/// seed-derived shuffle per epoch; the final parameters are kept. Anchor
/// references are the model's own states before the first update. A
/// non-finite loss aborts with NumericError naming step, lr and pair ids.
TrainResult train_reward_model(RewardModel& model, const std::vector<TrainExample>& data, const TrainConfig& cfg,
                               const BatchObserver& observer = {});

/// Objective of `method` on one batch, built on `g` with gradient tracking.
/// The anchor reference is the adapter-disabled forward of `model` on the same
/// batch, so it is only meaningful for adapter training. `snapshot` is
/// required for l2sp.
LossTerms batch_objective(Graph& g, RewardModel& model, std::span<const TrainExample* const> batch,
                          const MethodSpec& method, const ParameterSnapshot* snapshot = nullptr);

/// CSV with one row per step: epoch, step, total, l_w2s, l_anchor, l_conf, l2sp.
std::string losses_csv(const TrainResult& result);

struct PretrainConfig {
  std::size_t epochs = 4;
  double learning_rate = 1e-3;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
  /// Feature indices the probe regresses; empty means all.
  std::vector<std::size_t> visible_features;
};

/// Full-parameter training of the base network with a throwaway linear probe
/// regressing standardized latent features from the pooled state. The reward
/// head is redrawn afterwards. Returns the mean squared error per epoch.
std::vector<double> pretrain_base(RewardModel& model, const std::vector<PretrainExample>& corpus,
                                  const PretrainConfig& cfg);

}  // namespace w2s
