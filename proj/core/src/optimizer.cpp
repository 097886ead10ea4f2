#include "w2s/optimizer.hpp"

#include <cmath>

#include "w2s/error.hpp"

namespace w2s {

Adam::Adam(std::vector<Parameter*> params, AdamConfig config) : params_(std::move(params)), config_(config) {
  if (!(config_.learning_rate > 0.0)) throw ConfigError("optimizer.learning_rate: must be positive");
  if (!(config_.beta1 >= 0.0 && config_.beta1 < 1.0)) throw ConfigError("optimizer.beta1: must lie in [0, 1)");
  if (!(config_.beta2 >= 0.0 && config_.beta2 < 1.0)) throw ConfigError("optimizer.beta2: must lie in [0, 1)");
  if (!(config_.eps > 0.0)) throw ConfigError("optimizer.eps: must be positive");
  for (Parameter* p : params_) {
    m_.push_back(Tensor::zeros_like(p->value));
    v_.push_back(Tensor::zeros_like(p->value));
  }
}

void Adam::step() {
  ++t_;
  const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Parameter& p = *params_[i];
    double* w = p.value.data();
    const double* g = p.grad.data();
    double* m = m_[i].data();
    double* v = v_[i].data();
    for (std::size_t j = 0; j < p.value.size(); ++j) {
      m[j] = config_.beta1 * m[j] + (1.0 - config_.beta1) * g[j];
      v[j] = config_.beta2 * v[j] + (1.0 - config_.beta2) * g[j] * g[j];
      w[j] -= config_.learning_rate * (m[j] / c1) / (std::sqrt(v[j] / c2) + config_.eps);
    }
    p.zero_grad();
  }
}

}  // namespace w2s
