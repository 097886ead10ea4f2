#include "w2s/losses.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "w2s/error.hpp"

namespace w2s {

namespace {

constexpr double kClamp = 1e-12;

double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double clamp_prob(double p) { return std::clamp(p, kClamp, 1.0 - kClamp); }

double xent(double q, double p) { return -(q * std::log(p) + (1.0 - q) * std::log(1.0 - p)); }

// Same as xent(q, clamp(sigmoid(m))) but with both sides computed directly,
// so swapping the candidates is exact.
double margin_xent(double q, double m) {
  return -(q * std::log(clamp_prob(stable_sigmoid(m))) + (1.0 - q) * std::log(clamp_prob(stable_sigmoid(-m))));
}

void check_prob(double q, const char* op) {
  if (!(q >= 0.0 && q <= 1.0)) {
    throw ContractError(std::string(op) + ": label q = " + std::to_string(q) + " outside [0, 1]");
  }
}

}  // namespace

double bt_loss(double r_plus, double r_minus) {
  const double m = r_plus - r_minus;
  return m >= 0 ? std::log1p(std::exp(-m)) : -m + std::log1p(std::exp(m));
}

double soft_pref_loss(double q, double r_a, double r_b) {
  check_prob(q, "soft_pref_loss");
  return margin_xent(q, r_a - r_b);
}

double confidence_loss(double q, double p, double alpha) {
  check_prob(q, "confidence_loss");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ContractError("confidence_loss: alpha outside [0, 1]");
  const double pc = clamp_prob(p);
  const double hard = p >= 0.5 ? 1.0 : 0.0;
  return (1.0 - alpha) * xent(q, pc) + alpha * xent(hard, pc);
}

double anchor_distance(const Tensor& h_student, const Tensor& h_ref, std::span<const double> mask) {
  if (!h_student.same_shape(h_ref) || h_student.rank() != 2 || mask.size() != h_student.rows()) {
    throw ShapeError("anchor_distance: incompatible shapes " + to_string(h_student.shape()) + ", " +
                     to_string(h_ref.shape()) + " and mask of length " + std::to_string(mask.size()));
  }
  double num = 0.0, msum = 0.0;
  for (std::size_t t = 0; t < mask.size(); ++t) {
    if (mask[t] == 0.0) continue;
    const auto r = static_cast<Eigen::Index>(t);
    num += mask[t] * (h_student.mat().row(r) - h_ref.mat().row(r)).squaredNorm();
    msum += mask[t];
  }
  if (msum == 0.0) throw DataError("anchor_distance: mask selects no token");
  return num / (static_cast<double>(h_student.cols()) * msum);
}

double anchor_pair_loss(const ScoredSequence& student_a, const ScoredSequence& student_b,
                        const ScoredSequence& ref_a, const ScoredSequence& ref_b, std::size_t layer) {
  auto at = [layer](const ScoredSequence& s, const char* which) -> const Tensor& {
    auto it = s.hidden_states.find(layer);
    if (it == s.hidden_states.end()) {
      throw ContractError(std::string("anchor_pair_loss: ") + which + " has no captured layer " + std::to_string(layer));
    }
    return it->second;
  };
  return anchor_distance(at(student_a, "student a"), at(ref_a, "reference a"), student_a.response_mask) +
         anchor_distance(at(student_b, "student b"), at(ref_b, "reference b"), student_b.response_mask);
}

std::vector<std::size_t> middle_layer_set(std::size_t n_layers, std::span<const double> fractions) {
  if (n_layers < 1) throw ContractError("middle_layer_set: need at least one layer");
  static const double kDefault[] = {0.5, 0.75};
  if (fractions.empty()) fractions = kDefault;
  std::vector<std::size_t> out;
  for (double f : fractions) {
    const auto l = static_cast<std::size_t>(std::floor(f * static_cast<double>(n_layers)));
    out.push_back(std::max<std::size_t>(1, l));
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

void AnchorConfig::validate() const {
  if (!std::isfinite(lambda) || lambda < 0.0) throw ConfigError("anchor.lambda: must be finite and >= 0");
  if (variant == AnchorVariant::middle) {
    if (middle_fractions.empty()) throw ConfigError("anchor.middle_fractions: must be non-empty");
    for (std::size_t i = 0; i < middle_fractions.size(); ++i) {
      const double f = middle_fractions[i];
      if (!(f > 0.0 && f <= 1.0)) throw ConfigError("anchor.middle_fractions: values must lie in (0, 1]");
      if (i > 0 && !(f > middle_fractions[i - 1])) {
        throw ConfigError("anchor.middle_fractions: must be strictly increasing");
      }
    }
  }
}

std::vector<std::size_t> AnchorConfig::layers(std::size_t n_layers) const {
  if (variant == AnchorVariant::last) return {n_layers};
  return middle_layer_set(n_layers, middle_fractions);
}

namespace {

std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.0e", v);
  return buf;
}

}  // namespace

std::string MethodSpec::label() const {
  switch (kind) {
    case Method::naive:
      return "naive";
    case Method::conf:
      return "conf";
    case Method::anchor:
      return (anchor.variant == AnchorVariant::last ? "anchor_" : "anchor-mla_") + sci(anchor.lambda);
    case Method::l2sp:
      return "l2sp_" + sci(l2sp_mu);
  }
  return "unknown";
}

Method MethodSpec::parse_kind(const std::string& name) {
  if (name == "naive") return Method::naive;
  if (name == "conf") return Method::conf;
  if (name == "anchor" || name == "anchor-mla") return Method::anchor;
  if (name == "l2sp") return Method::l2sp;
  throw ConfigError("unknown method \"" + name + "\" (expected naive, conf, anchor, anchor-mla or l2sp)");
}

void MethodSpec::validate() const {
  if (kind == Method::anchor) anchor.validate();
  if (kind == Method::conf && !(conf_alpha >= 0.0 && conf_alpha <= 1.0)) {
    throw ConfigError("conf_alpha: must lie in [0, 1]");
  }
  if (kind == Method::l2sp && !(std::isfinite(l2sp_mu) && l2sp_mu >= 0.0)) {
    throw ConfigError("l2sp_mu: must be finite and >= 0");
  }
}

ParameterSnapshot snapshot_parameters(const RewardModel& model) {
  ParameterSnapshot s;
  for (const Parameter* p : model.parameters()) s.values.emplace(p->name, p->value);
  return s;
}

Var bt_loss(Var margin) { return scale(mean(log_sigmoid(margin)), -1.0); }

Var soft_pref_loss(Var margin, std::span<const double> q) {
  Graph& g = *margin.graph;
  const Tensor& m = margin.value();
  if (m.size() != q.size() || q.empty()) {
    throw ShapeError("soft_pref_loss: " + std::to_string(q.size()) + " labels for margins of shape " +
                     to_string(m.shape()));
  }
  const double n = static_cast<double>(q.size());
  double total = 0.0;
  std::vector<double> dm(q.size());
  for (std::size_t i = 0; i < q.size(); ++i) {
    check_prob(q[i], "soft_pref_loss");
    const double raw = stable_sigmoid(m[i]);
    const double p = clamp_prob(raw);
    total += margin_xent(q[i], m[i]);
    dm[i] = raw == p ? (p - q[i]) / n : 0.0;
  }
  const std::uint32_t im = margin.id;
  return g.emit("soft_pref_loss", Tensor::scalar(total / n), {margin},
                [im, dm = std::move(dm)](Graph& gr, std::uint32_t self) {
                  const double gy = gr.node_grad(self)[0];
                  Tensor& gm = gr.grad_slot(im);
                  for (std::size_t i = 0; i < dm.size(); ++i) gm[i] += gy * dm[i];
                });
}

Var confidence_loss(Var margin, std::span<const double> q, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ContractError("confidence_loss: alpha outside [0, 1]");
  const Tensor& m = margin.value();
  if (m.size() != q.size()) {
    throw ShapeError("confidence_loss: " + std::to_string(q.size()) + " labels for margins of shape " +
                     to_string(m.shape()));
  }
  // Cross-entropy is linear in its target, so the mixture is one soft loss
  // against (1 - alpha) q + alpha hard(p).
  std::vector<double> target(q.size());
  for (std::size_t i = 0; i < q.size(); ++i) {
    check_prob(q[i], "confidence_loss");
    const double hard = stable_sigmoid(m[i]) >= 0.5 ? 1.0 : 0.0;
    target[i] = (1.0 - alpha) * q[i] + alpha * hard;
  }
  return soft_pref_loss(margin, target);
}

Var anchor_batch_loss(Var h_student, Var h_ref, const PackedBatch& batch, std::size_t n_pairs) {
  if (n_pairs == 0) throw ContractError("anchor_batch_loss: empty batch");
  Var per_seq = segment_masked_sq_dist(h_student, h_ref, batch.mask, batch.segments);
  return scale(sum(per_seq), 1.0 / static_cast<double>(n_pairs));
}

namespace {

const Tensor& snapshot_of(const ParameterSnapshot& s, const Parameter& p) {
  auto it = s.values.find(p.name);
  if (it == s.values.end()) throw ContractError("l2sp: snapshot has no parameter " + p.name);
  if (!it->second.same_shape(p.value)) {
    throw ContractError("l2sp: snapshot shape " + to_string(it->second.shape()) + " differs from " + p.name + " " +
                        to_string(p.value.shape()));
  }
  return it->second;
}

bool is_adapter(const Parameter& p) {
  return p.name.size() > 7 && (p.name.ends_with(".lora_a") || p.name.ends_with(".lora_b"));
}

template <class Fn>
void for_each_lora(const RewardModel& model, Fn fn) {
  for (const auto& b : model.blocks()) {
    for (const RewardModel::Linear* lin : {&b.q, &b.k, &b.v, &b.o, &b.up, &b.down}) {
      if (lin->lora_a && lin->lora_a->trainable) fn(*lin);
    }
  }
}

}  // namespace

Var l2sp_penalty(Graph& g, RewardModel& model, const ParameterSnapshot& theta0, double mu) {
  Var total = g.constant(Tensor::scalar(0.0));
  for (Parameter* p : model.trainable_parameters()) {
    if (is_adapter(*p)) continue;
    Var diff = sub(g.parameter(*p), g.constant(snapshot_of(theta0, *p)));
    total = add(total, sum(square(diff)));
  }
  const double s = model.config().adapter.scaling();
  for (auto& b : model.blocks()) {
    for (RewardModel::Linear* lin : {&b.q, &b.k, &b.v, &b.o, &b.up, &b.down}) {
      if (!lin->lora_a || !lin->lora_a->trainable) continue;
      Var delta = scale(matmul(g.parameter(*lin->lora_a), g.parameter(*lin->lora_b)), s);
      total = add(total, sum(square(delta)));
    }
  }
  return scale(total, mu);
}

double l2sp_penalty(const RewardModel& model, const ParameterSnapshot& theta0, double mu) {
  double total = 0.0;
  for (const Parameter* p : model.parameters()) {
    if (!p->trainable || is_adapter(*p)) continue;
    total += (p->value.mat() - snapshot_of(theta0, *p).mat()).squaredNorm();
  }
  const double s = model.config().adapter.scaling();
  for_each_lora(model, [&](const RewardModel::Linear& lin) {
    total += (s * (lin.lora_a->value.mat() * lin.lora_b->value.mat())).squaredNorm();
  });
  return mu * total;
}

double l2sp_penalty(std::span<const Tensor> theta, std::span<const Tensor> theta0, double mu) {
  if (theta.size() != theta0.size()) throw ContractError("l2sp_penalty: snapshot has a different parameter count");
  double total = 0.0;
  for (std::size_t i = 0; i < theta.size(); ++i) {
    if (!theta[i].same_shape(theta0[i])) {
      throw ContractError("l2sp_penalty: shape " + to_string(theta[i].shape()) + " vs snapshot " +
                          to_string(theta0[i].shape()));
    }
    for (std::size_t j = 0; j < theta[i].size(); ++j) {
      const double d = theta[i][j] - theta0[i][j];
      total += d * d;
    }
  }
  return mu * total;
}

LossBreakdown LossTerms::breakdown() const {
  LossBreakdown b;
  b.total = total.item();
  b.l_w2s = l_w2s.item();
  for (const auto& [layer, v] : l_anchor) b.l_anchor[layer] = v.item();
  if (l_conf) b.l_conf = l_conf->item();
  if (l2sp) b.l2sp = l2sp->item();
  return b;
}

LossTerms combined_objective(Graph& g, const ObjectiveInputs& in, const MethodSpec& method) {
  if (in.batch == nullptr || in.n_pairs == 0 || in.batch->sequences() != 2 * in.n_pairs) {
    throw ContractError("combined_objective: batch must hold the a and b candidates of every pair");
  }
  if (in.q.size() != in.n_pairs) throw ContractError("combined_objective: one weak label per pair required");
  const auto n = in.n_pairs;
  std::vector<std::size_t> a_rows(n), b_rows(n);
  for (std::size_t i = 0; i < n; ++i) {
    a_rows[i] = i;
    b_rows[i] = n + i;
  }
  Var margin = sub(gather_rows(in.student.rewards, a_rows), gather_rows(in.student.rewards, b_rows));

  LossTerms t;
  t.l_w2s = soft_pref_loss(margin, in.q);
  t.total = t.l_w2s;
  switch (method.kind) {
    case Method::naive:
      break;
    case Method::conf:
      t.l_conf = confidence_loss(margin, in.q, method.conf_alpha);
      t.total = *t.l_conf;
      break;
    case Method::anchor: {
      if (in.reference == nullptr) throw ContractError("combined_objective: anchor method needs reference states");
      const auto layers = method.anchor.layers(in.n_layers);
      Var acc = g.constant(Tensor::scalar(0.0));
      for (std::size_t layer : layers) {
        Var l = anchor_batch_loss(in.student.hidden_at(layer), in.reference->hidden_at(layer), *in.batch, n);
        t.l_anchor.emplace(layer, l);
        acc = add(acc, l);
      }
      Var avg = scale(acc, 1.0 / static_cast<double>(layers.size()));
      t.total = add(t.l_w2s, scale(avg, method.anchor.lambda));
      break;
    }
    case Method::l2sp:
      if (in.model == nullptr || in.snapshot == nullptr) {
        throw ContractError("combined_objective: l2sp needs the model and its initial snapshot");
      }
      t.l2sp = l2sp_penalty(g, *in.model, *in.snapshot, method.l2sp_mu);
      t.total = add(t.l_w2s, *t.l2sp);
      break;
  }
  return t;
}

}  // namespace w2s
