#include "w2s/grad_check.hpp"

#include <cmath>
#include <vector>

#include "w2s/error.hpp"

namespace w2s {

namespace {

double evaluate(const LossBuilder& build) {
  Graph g;
  return build(g).item();
}

}  // namespace

GradCheckReport grad_check(const LossBuilder& build, std::span<Parameter* const> params, double eps) {
  if (!(eps >= 1e-8 && eps <= 1e-3)) {
    throw ContractError("grad_check: eps " + std::to_string(eps) + " outside [1e-8, 1e-3]");
  }
  const double f0 = evaluate(build);
  if (evaluate(build) != f0) {
    throw ContractError(
        "grad_check: loss is not deterministic; disable stochastic layers before checking gradients");
  }

  for (Parameter* p : params) p->zero_grad();
  {
    Graph g;
    Var loss = build(g);
    g.backward(loss);
  }
  std::vector<Tensor> analytic;
  analytic.reserve(params.size());
  for (Parameter* p : params) analytic.push_back(p->grad);

  GradCheckReport report;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor& value = params[pi]->value;
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double saved = value[i];
      value[i] = saved + eps;
      const double up = evaluate(build);
      value[i] = saved - eps;
      const double down = evaluate(build);
      value[i] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double a = analytic[pi][i];
      const double rel = std::abs(a - numeric) / std::max(1e-12, std::abs(a) + std::abs(numeric));
      ++report.coordinates;
      if (rel > report.max_rel_err) {
        report.max_rel_err = rel;
        report.worst_param = pi;
        report.worst_index = i;
        report.analytic_at_worst = a;
        report.numeric_at_worst = numeric;
      }
    }
  }
  for (Parameter* p : params) p->zero_grad();
  return report;
}

}  // namespace w2s
