#pragma once

#include <vector>

#include "w2s/autodiff.hpp"

namespace w2s {

struct AdamConfig {
  double learning_rate = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with bias correction over a fixed parameter list.
class Adam {
 public:
  Adam(std::vector<Parameter*> params, AdamConfig config);

  /// Applies one update from the accumulated gradients, then zeroes them.
  void step();
  std::size_t steps() const noexcept { return t_; }
  const AdamConfig& config() const noexcept { return config_; }

 private:
  std::vector<Parameter*> params_;
  std::vector<Tensor> m_, v_;
  AdamConfig config_;
  std::size_t t_ = 0;
};

}  // namespace w2s
