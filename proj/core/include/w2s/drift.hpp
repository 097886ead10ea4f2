#pragma once

#include <map>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "w2s/model.hpp"
#include "w2s/preference_data.hpp"

namespace w2s {

enum class ActivationPooling { masked_mean, last_response_token };

/// n x d activations of one layer, one row per (pair, candidate).
struct ActivationMatrix {
  Eigen::MatrixXd values;
  std::size_t layer = 0;
  ActivationPooling pooling = ActivationPooling::masked_mean;
  std::string corpus;
};

/// Rows are ordered a_0, b_0, a_1, b_1, ... Layers are 1-based block
/// indices; out-of-range layers throw ContractError.
std::vector<ActivationMatrix> collect_activations(const ModelView& model, const std::vector<PreferencePair>& pairs,
                                                  const std::vector<std::size_t>& layers,
                                                  ActivationPooling pooling = ActivationPooling::masked_mean,
                                                  const std::string& corpus = "");

/// 1 - ||Xc^T Yc||_F^2 / (||Xc^T Xc||_F ||Yc^T Yc||_F) with column-centered
/// inputs. Throws NumericError when either input has zero variance.
double linear_cka_distance(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y);

struct CcaResult {
  double distance = 0.0;
  /// Canonical correlations, descending, min(d1, d2) of them.
  std::vector<double> correlations;
  double condition_x = 0.0;
  double condition_y = 0.0;
};

/// Mean-CCA distance, 1 - mean canonical correlation, with a 1e-8 ridge on
/// both covariance matrices. Throws NumericError with the condition numbers
/// when a covariance is beyond rescue.
CcaResult cca_analysis(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, double ridge = 1e-8);
double cca_distance(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y);

struct DriftEntry {
  std::size_t layer = 0;
  std::string corpus;
  double cka_distance = 0.0;
  double cca_distance = 0.0;
  std::size_t n_examples = 0;
};

/// Per-layer, per-corpus distances, sorted by corpus then layer. A CCA that
/// fails its conditioning check is recorded as NaN.
struct DriftProfile {
  std::vector<DriftEntry> entries;

  /// Columns layer, corpus, cka_distance, cca_distance, n_examples.
  std::string to_csv() const;
  static DriftProfile from_csv(const std::string& text);
  const DriftEntry& at(const std::string& corpus, std::size_t layer) const;
};

DriftProfile drift_profile(const ModelView& student, const ModelView& reference,
                           const std::map<std::string, std::vector<PreferencePair>>& corpora,
                           const std::vector<std::size_t>& layers,
                           ActivationPooling pooling = ActivationPooling::masked_mean);

}  // namespace w2s
