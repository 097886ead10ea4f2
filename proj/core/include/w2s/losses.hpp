#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "w2s/autodiff.hpp"
#include "w2s/model.hpp"

namespace w2s {

// ---------------------------------------------------------------------------
// Scalar reference forms. The batched graph forms below are what training
// uses; these exist for direct evaluation and tests.

/// -log sigmoid(r_plus - r_minus).
double bt_loss(double r_plus, double r_minus);
/// Cross-entropy between q and p = sigmoid(r_a - r_b), p clamped to
/// [1e-12, 1 - 1e-12]. Throws ContractError for q outside [0, 1].
double soft_pref_loss(double q, double r_a, double r_b);
/// (1 - alpha) xent(q, p) + alpha xent(hard(p), p) with hard(p) = 1[p >= 0.5].
double confidence_loss(double q, double p, double alpha);
/// Sum_t m_t ||Hs_t - Href_t||^2 / (d Sum_t m_t). Throws DataError on an
/// all-zero mask and ShapeError on mismatched shapes.
double anchor_distance(const Tensor& h_student, const Tensor& h_ref, std::span<const double> mask);
/// D(x, y_a) + D(x, y_b) at `layer`. Throws ContractError when a state lacks the layer.
double anchor_pair_loss(const ScoredSequence& student_a, const ScoredSequence& student_b,
                        const ScoredSequence& ref_a, const ScoredSequence& ref_b, std::size_t layer);

/// {floor(f L)} for f in `fractions`, clamped to >= 1, deduplicated, sorted.
std::vector<std::size_t> middle_layer_set(std::size_t n_layers, std::span<const double> fractions = {});

enum class AnchorVariant { last, middle };

struct AnchorConfig {
  double lambda = 1e-4;
  AnchorVariant variant = AnchorVariant::last;
  std::vector<double> middle_fractions{0.5, 0.75};

  /// Throws ConfigError.
  void validate() const;
  /// Anchored layers for a model with `n_layers` blocks.
  std::vector<std::size_t> layers(std::size_t n_layers) const;
};

enum class Method { naive, conf, anchor, l2sp };

/// A training method with its strength knobs.
struct MethodSpec {
  Method kind = Method::naive;
  AnchorConfig anchor;
  /// Confidence-loss mixing weight.
  double conf_alpha = 0.5;
  /// L2-SP weight.
  double l2sp_mu = 1e-4;

  /// Directory-safe label, e.g. "naive", "anchor_1e-04", "anchor-mla_1e-04".
  std::string label() const;
  /// Parses "naive", "conf", "anchor", "anchor-mla" or "l2sp".
  static Method parse_kind(const std::string& name);
  void validate() const;
};

/// Scalar loss values of one batch.
struct LossBreakdown {
  double total = 0.0;
  double l_w2s = 0.0;
  /// Per anchored layer, batch mean of D(a) + D(b).
  std::map<std::size_t, double> l_anchor;
  std::optional<double> l_conf;
  std::optional<double> l2sp;
};

/// Initial values of every parameter, keyed by name.
struct ParameterSnapshot {
  std::map<std::string, Tensor> values;
};

ParameterSnapshot snapshot_parameters(const RewardModel& model);

/// Mean over the batch of -log sigmoid(margin).
Var bt_loss(Var margin);
/// Mean over the batch of xent(q_i, clamp(sigmoid(margin_i))). Clamped
/// entries pass no gradient.
Var soft_pref_loss(Var margin, std::span<const double> q);
/// Batched `confidence_loss`; hard(p) is treated as a constant target.
Var confidence_loss(Var margin, std::span<const double> q, double alpha);
/// Per-segment masked distances summed, divided by the pair count.
Var anchor_batch_loss(Var h_student, Var h_ref, const PackedBatch& batch, std::size_t n_pairs);
/// mu * sum over trainable parameters of (theta - theta0)^2. Adapter factors
/// enter through their effective weight delta s A B, measured from zero.
Var l2sp_penalty(Graph& g, RewardModel& model, const ParameterSnapshot& theta0, double mu);
double l2sp_penalty(const RewardModel& model, const ParameterSnapshot& theta0, double mu);
/// Plain mu * sum (theta - theta0)^2 over matching tensors.
double l2sp_penalty(std::span<const Tensor> theta, std::span<const Tensor> theta0, double mu);

/// Graph nodes of one batch objective.
struct LossTerms {
  Var total;
  Var l_w2s;
  std::map<std::size_t, Var> l_anchor;
  std::optional<Var> l_conf;
  std::optional<Var> l2sp;

  LossBreakdown breakdown() const;
};

/// Inputs for a batch of n pairs packed as [a_0..a_{n-1}, b_0..b_{n-1}].
struct ObjectiveInputs {
  const PackedBatch* batch = nullptr;
  std::size_t n_pairs = 0;
  /// Block count of the student (anchor layer selection).
  std::size_t n_layers = 0;
  ForwardResult student;
  /// Reference forward on the same batch (anchor methods only).
  const ForwardResult* reference = nullptr;
  std::span<const double> q;
  /// Model and initial snapshot (l2sp only).
  RewardModel* model = nullptr;
  const ParameterSnapshot* snapshot = nullptr;
};

/// naive: l_w2s. conf: confidence loss. anchor: l_w2s + lambda * mean over
/// anchored layers of the anchor loss. l2sp: l_w2s + penalty.
LossTerms combined_objective(Graph& g, const ObjectiveInputs& in, const MethodSpec& method);

}  // namespace w2s
