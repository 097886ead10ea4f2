#pragma once

#include <cstddef>
#include <functional>
#include <span>

#include "w2s/autodiff.hpp"

namespace w2s {

struct GradCheckReport {
  double max_rel_err = 0.0;
  /// Parameter index and flat coordinate of the worst mismatch.
  std::size_t worst_param = 0;
  std::size_t worst_index = 0;
  double analytic_at_worst = 0.0;
  double numeric_at_worst = 0.0;
  std::size_t coordinates = 0;
};

/// Builds the scalar loss on a fresh graph from the current parameter values.
using LossBuilder = std::function<Var(Graph&)>;

/// Compares backward-pass gradients with central differences for every
/// coordinate of `params`. Relative error per coordinate is
/// |a - n| / max(1e-12, |a| + |n|).
///
/// `eps` must lie in [1e-8, 1e-3]. The builder must be deterministic; two
/// evaluations at the same point that disagree raise ContractError.
/// Parameter gradients are zeroed before and after the check.
GradCheckReport grad_check(const LossBuilder& build, std::span<Parameter* const> params, double eps = 1e-6);

}  // namespace w2s
