#include "w2s/autodiff.hpp"

#include <cmath>
#include <numbers>

#include "w2s/error.hpp"

namespace w2s {

const Tensor& Var::value() const { return graph->value(*this); }

Var Graph::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var{this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Graph::constant(Tensor value) {
  Node n;
  n.op = "constant";
  n.value = std::move(value);
  n.leaf = true;
  return push(std::move(n));
}

Var Graph::variable(Tensor value) {
  Node n;
  n.op = "variable";
  n.value = std::move(value);
  n.leaf = true;
  n.requires_grad = true;
  return push(std::move(n));
}

Var Graph::parameter(Parameter& p) {
  Node n;
  n.op = "parameter";
  n.value = p.value;
  n.leaf = true;
  n.requires_grad = p.trainable;
  n.param = p.trainable ? &p : nullptr;
  return push(std::move(n));
}

Var Graph::frozen(const Parameter& p) { return constant(p.value); }

const Tensor& Graph::grad(Var v) { return grad_slot(v.id); }

Tensor& Graph::grad_slot(std::uint32_t id) {
  Node& n = nodes_[id];
  if (!n.grad_ready) {
    n.grad = Tensor::zeros_like(n.value);
    n.grad_ready = true;
  }
  return n.grad;
}

Var Graph::emit(std::string op, Tensor value, std::initializer_list<Var> parents, BackwardFn fn) {
  if (!value.all_finite()) {
    throw NumericError(op + ": non-finite value in output of shape " + to_string(value.shape()));
  }
  Node n;
  n.op = std::move(op);
  n.value = std::move(value);
  for (Var p : parents) {
    n.parents.push_back(p.id);
    n.requires_grad = n.requires_grad || nodes_[p.id].requires_grad;
  }
  if (n.requires_grad) n.backward = std::move(fn);
  return push(std::move(n));
}

void Graph::backward(Var loss) {
  if (nodes_[loss.id].value.size() != 1) {
    throw ContractError("backward: loss must be scalar, got shape " +
                        to_string(nodes_[loss.id].value.shape()));
  }
  for (Node& n : nodes_) {
    if (!(n.leaf && n.param == nullptr && n.requires_grad)) n.grad_ready = false;
  }
  if (!nodes_[loss.id].requires_grad) return;
  grad_slot(loss.id)[0] += 1.0;
  for (std::int64_t i = loss.id; i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (!n.requires_grad || !n.grad_ready) continue;
    if (n.backward) n.backward(*this, static_cast<std::uint32_t>(i));
    if (n.param != nullptr) {
      n.param->grad.mat() += n.grad.mat();
    }
  }
}

namespace {

void require(bool ok, const std::string& op, const Tensor& a, const Tensor& b) {
  if (!ok) {
    throw ShapeError(op + ": incompatible shapes " + to_string(a.shape()) + " and " +
                     to_string(b.shape()));
  }
}

void require_matrix(const std::string& op, const Tensor& a) {
  if (a.rank() != 2) {
    throw ShapeError(op + ": expected rank-2 tensor, got " + to_string(a.shape()));
  }
}

bool wants(Graph& g, std::uint32_t id) { return g.node_requires_grad(id); }

template <class Forward, class Derivative>
Var unary(Var a, const char* op, Forward f, Derivative df) {
  Graph& g = *a.graph;
  const Tensor& x = a.value();
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  const std::uint32_t ia = a.id;
  return g.emit(op, std::move(y), {a}, [ia, df](Graph& gr, std::uint32_t self) {
    const Tensor& xv = gr.node_value(ia);
    const Tensor& yv = gr.node_value(self);
    const Tensor& gy = gr.node_grad(self);
    Tensor& gx = gr.grad_slot(ia);
    for (std::size_t i = 0; i < xv.size(); ++i) gx[i] += gy[i] * df(xv[i], yv[i]);
  });
}

double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

Var matmul(Var a, Var b) {
  Graph& g = *a.graph;
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require(av.rank() == 2 && bv.rank() == 2 && av.cols() == bv.rows(), "matmul", av, bv);
  Tensor out(Shape{av.rows(), bv.cols()});
  out.mat().noalias() = av.mat() * bv.mat();
  const std::uint32_t ia = a.id, ib = b.id;
  return g.emit("matmul", std::move(out), {a, b}, [ia, ib](Graph& gr, std::uint32_t self) {
    const Tensor& gc = gr.node_grad(self);
    if (wants(gr, ia)) gr.grad_slot(ia).mat().noalias() += gc.mat() * gr.node_value(ib).mat().transpose();
    if (wants(gr, ib)) gr.grad_slot(ib).mat().noalias() += gr.node_value(ia).mat().transpose() * gc.mat();
  });
}

Var matmul_bt(Var a, Var b) {
  Graph& g = *a.graph;
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require(av.rank() == 2 && bv.rank() == 2 && av.cols() == bv.cols(), "matmul_bt", av, bv);
  Tensor out(Shape{av.rows(), bv.rows()});
  out.mat().noalias() = av.mat() * bv.mat().transpose();
  const std::uint32_t ia = a.id, ib = b.id;
  return g.emit("matmul_bt", std::move(out), {a, b}, [ia, ib](Graph& gr, std::uint32_t self) {
    const Tensor& gc = gr.node_grad(self);
    if (wants(gr, ia)) gr.grad_slot(ia).mat().noalias() += gc.mat() * gr.node_value(ib).mat();
    if (wants(gr, ib)) gr.grad_slot(ib).mat().noalias() += gc.mat().transpose() * gr.node_value(ia).mat();
  });
}

Var add(Var a, Var b) {
  Graph& g = *a.graph;
  require(a.value().same_shape(b.value()), "add", a.value(), b.value());
  Tensor out = a.value();
  out.mat() += b.value().mat();
  const std::uint32_t ia = a.id, ib = b.id;
  return g.emit("add", std::move(out), {a, b}, [ia, ib](Graph& gr, std::uint32_t self) {
    const Tensor& gc = gr.node_grad(self);
    if (wants(gr, ia)) gr.grad_slot(ia).mat() += gc.mat();
    if (wants(gr, ib)) gr.grad_slot(ib).mat() += gc.mat();
  });
}

Var sub(Var a, Var b) {
  Graph& g = *a.graph;
  require(a.value().same_shape(b.value()), "sub", a.value(), b.value());
  Tensor out = a.value();
  out.mat() -= b.value().mat();
  const std::uint32_t ia = a.id, ib = b.id;
  return g.emit("sub", std::move(out), {a, b}, [ia, ib](Graph& gr, std::uint32_t self) {
    const Tensor& gc = gr.node_grad(self);
    if (wants(gr, ia)) gr.grad_slot(ia).mat() += gc.mat();
    if (wants(gr, ib)) gr.grad_slot(ib).mat() -= gc.mat();
  });
}

Var mul(Var a, Var b) {
  Graph& g = *a.graph;
  require(a.value().same_shape(b.value()), "mul", a.value(), b.value());
  Tensor out = a.value();
  out.mat().array() *= b.value().mat().array();
  const std::uint32_t ia = a.id, ib = b.id;
  return g.emit("mul", std::move(out), {a, b}, [ia, ib](Graph& gr, std::uint32_t self) {
    const Tensor& gc = gr.node_grad(self);
    if (wants(gr, ia)) gr.grad_slot(ia).mat().array() += gc.mat().array() * gr.node_value(ib).mat().array();
    if (wants(gr, ib)) gr.grad_slot(ib).mat().array() += gc.mat().array() * gr.node_value(ia).mat().array();
  });
}

Var scale(Var a, double s) {
  Graph& g = *a.graph;
  Tensor out = a.value();
  out.mat() *= s;
  const std::uint32_t ia = a.id;
  return g.emit("scale", std::move(out), {a}, [ia, s](Graph& gr, std::uint32_t self) {
    gr.grad_slot(ia).mat() += s * gr.node_grad(self).mat();
  });
}

Var add_bias(Var x, Var bias) {
  Graph& g = *x.graph;
  const Tensor& xv = x.value();
  const Tensor& bv = bias.value();
  require(xv.rank() == 2 && bv.rows() == 1 && bv.size() == xv.cols(), "add_bias", xv, bv);
  Tensor out = xv;
  out.mat().rowwise() += bv.mat().row(0);
  const std::uint32_t ix = x.id, ib = bias.id;
  return g.emit("add_bias", std::move(out), {x, bias}, [ix, ib](Graph& gr, std::uint32_t self) {
    const Tensor& gc = gr.node_grad(self);
    if (wants(gr, ix)) gr.grad_slot(ix).mat() += gc.mat();
    if (wants(gr, ib)) gr.grad_slot(ib).mat().row(0) += gc.mat().colwise().sum();
  });
}

Var sigmoid(Var a) {
  return unary(a, "sigmoid", stable_sigmoid, [](double, double y) { return y * (1.0 - y); });
}

Var log_sigmoid(Var a) {
  return unary(
      a, "log_sigmoid",
      [](double x) { return x >= 0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x)); },
      [](double x, double) { return 1.0 - stable_sigmoid(x); });
}

Var log(Var a) {
  return unary(a, "log", [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var exp(Var a) {
  return unary(a, "exp", [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var tanh(Var a) {
  return unary(a, "tanh", [](double x) { return std::tanh(x); },
               [](double, double y) { return 1.0 - y * y; });
}

Var gelu(Var a) {
  constexpr double inv_sqrt2 = 0.70710678118654752440;
  const double inv_sqrt_2pi = 0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2;
  return unary(
      a, "gelu", [](double x) { return 0.5 * x * (1.0 + std::erf(x * inv_sqrt2)); },
      [inv_sqrt_2pi](double x, double) {
        return 0.5 * (1.0 + std::erf(x * inv_sqrt2)) + x * inv_sqrt_2pi * std::exp(-0.5 * x * x);
      });
}

Var square(Var a) {
  return unary(a, "square", [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var softmax_rows(Var a) {
  Graph& g = *a.graph;
  const Tensor& x = a.value();
  Tensor y = x;
  auto m = y.mat();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    m.row(r).array() -= m.row(r).maxCoeff();
    m.row(r) = m.row(r).array().exp().matrix();
    m.row(r) /= m.row(r).sum();
  }
  const std::uint32_t ia = a.id;
  return g.emit("softmax", std::move(y), {a}, [ia](Graph& gr, std::uint32_t self) {
    const auto yv = gr.node_value(self).mat();
    const auto gy = gr.node_grad(self).mat();
    auto gx = gr.grad_slot(ia).mat();
    for (Eigen::Index r = 0; r < yv.rows(); ++r) {
      const double dot = gy.row(r).dot(yv.row(r));
      gx.row(r).array() += yv.row(r).array() * (gy.row(r).array() - dot);
    }
  });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  Graph& g = *x.graph;
  const Tensor& xv = x.value();
  require_matrix("layer_norm", xv);
  require(gain.value().size() == xv.cols() && bias.value().size() == xv.cols(), "layer_norm", xv,
          gain.value());
  const auto n = static_cast<Eigen::Index>(xv.rows());
  const auto d = static_cast<Eigen::Index>(xv.cols());
  RowMatrix xhat(n, d);
  Eigen::VectorXd inv(n);
  for (Eigen::Index r = 0; r < n; ++r) {
    const auto row = xv.mat().row(r);
    const double mu = row.mean();
    const double var = (row.array() - mu).square().mean();
    inv[r] = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = (row.array() - mu) * inv[r];
  }
  Tensor out(xv.shape());
  const auto gv = gain.value().mat();
  const auto bv = bias.value().mat();
  out.mat() = xhat.array().rowwise() * gv.row(0).array();
  out.mat().rowwise() += bv.row(0);
  const std::uint32_t ix = x.id, ig = gain.id, ib = bias.id;
  return g.emit("layer_norm", std::move(out), {x, gain, bias},
                [ix, ig, ib, xhat = std::move(xhat), inv = std::move(inv)](Graph& gr, std::uint32_t self) {
                  const auto gy = gr.node_grad(self).mat();
                  if (wants(gr, ig)) gr.grad_slot(ig).mat().row(0) += (gy.array() * xhat.array()).colwise().sum().matrix();
                  if (wants(gr, ib)) gr.grad_slot(ib).mat().row(0) += gy.colwise().sum();
                  if (!wants(gr, ix)) return;
                  const auto gain_map = gr.node_value(ig).mat();
                  const auto gain_row = gain_map.row(0).array();
                  auto gx = gr.grad_slot(ix).mat();
                  for (Eigen::Index r = 0; r < gy.rows(); ++r) {
                    const Eigen::ArrayXd gh = (gy.row(r).array() * gain_row).transpose();
                    const Eigen::ArrayXd xh = xhat.row(r).array().transpose();
                    const double m1 = gh.mean();
                    const double m2 = (gh * xh).mean();
                    gx.row(r).array() += (inv[r] * (gh - m1 - xh * m2)).transpose();
                  }
                });
}

Var embedding(Var table, std::span<const int> ids) {
  Graph& g = *table.graph;
  const Tensor& tv = table.value();
  require_matrix("embedding", tv);
  const std::size_t d = tv.cols();
  Tensor out(Shape{ids.size(), d});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= tv.rows()) {
      throw ShapeError("embedding: id " + std::to_string(ids[i]) + " outside table of shape " +
                       to_string(tv.shape()));
    }
    out.mat().row(static_cast<Eigen::Index>(i)) = tv.mat().row(ids[i]);
  }
  const std::uint32_t it = table.id;
  std::vector<int> idv(ids.begin(), ids.end());
  return g.emit("embedding", std::move(out), {table},
                [it, idv = std::move(idv)](Graph& gr, std::uint32_t self) {
                  const auto gy = gr.node_grad(self).mat();
                  auto gt = gr.grad_slot(it).mat();
                  for (std::size_t i = 0; i < idv.size(); ++i) gt.row(idv[i]) += gy.row(static_cast<Eigen::Index>(i));
                });
}

Var gather_rows(Var x, std::span<const std::size_t> rows) {
  Graph& g = *x.graph;
  const Tensor& xv = x.value();
  require_matrix("gather_rows", xv);
  Tensor out(Shape{rows.size(), xv.cols()});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= xv.rows()) {
      throw ShapeError("gather_rows: row " + std::to_string(rows[i]) + " outside " + to_string(xv.shape()));
    }
    out.mat().row(static_cast<Eigen::Index>(i)) = xv.mat().row(static_cast<Eigen::Index>(rows[i]));
  }
  const std::uint32_t ix = x.id;
  std::vector<std::size_t> rv(rows.begin(), rows.end());
  return g.emit("gather_rows", std::move(out), {x}, [ix, rv = std::move(rv)](Graph& gr, std::uint32_t self) {
    const auto gy = gr.node_grad(self).mat();
    auto gx = gr.grad_slot(ix).mat();
    for (std::size_t i = 0; i < rv.size(); ++i) gx.row(static_cast<Eigen::Index>(rv[i])) += gy.row(static_cast<Eigen::Index>(i));
  });
}

namespace {

void check_segments(const std::string& op, std::span<const Segment> segments, std::size_t rows) {
  for (const Segment& s : segments) {
    if (s.length == 0 || s.begin + s.length > rows) {
      throw ShapeError(op + ": segment [" + std::to_string(s.begin) + ", +" + std::to_string(s.length) +
                       ") outside " + std::to_string(rows) + " rows");
    }
  }
}

}  // namespace

Var causal_attention(Var q, Var k, Var v, std::size_t n_heads, std::span<const Segment> segments) {
  Graph& g = *q.graph;
  const Tensor& qv = q.value();
  const Tensor& kv = k.value();
  const Tensor& vv = v.value();
  require_matrix("causal_attention", qv);
  require(qv.same_shape(kv) && qv.same_shape(vv), "causal_attention", qv, kv);
  if (n_heads == 0 || qv.cols() % n_heads != 0) {
    throw ShapeError("causal_attention: width " + std::to_string(qv.cols()) + " not divisible by " +
                     std::to_string(n_heads) + " heads");
  }
  check_segments("causal_attention", segments, qv.rows());
  const auto dh = static_cast<Eigen::Index>(qv.cols() / n_heads);
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(dh));

  Tensor out(qv.shape());
  std::vector<RowMatrix> probs;
  probs.reserve(segments.size() * n_heads);
  for (const Segment& s : segments) {
    const auto b = static_cast<Eigen::Index>(s.begin);
    const auto t = static_cast<Eigen::Index>(s.length);
    for (std::size_t h = 0; h < n_heads; ++h) {
      const Eigen::Index c = static_cast<Eigen::Index>(h) * dh;
      RowMatrix p = (qv.mat().block(b, c, t, dh) * kv.mat().block(b, c, t, dh).transpose()) * inv_scale;
      for (Eigen::Index i = 0; i < t; ++i) {
        const double mx = p.row(i).head(i + 1).maxCoeff();
        double total = 0.0;
        for (Eigen::Index j = 0; j <= i; ++j) {
          p(i, j) = std::exp(p(i, j) - mx);
          total += p(i, j);
        }
        p.row(i).head(i + 1) /= total;
        p.row(i).tail(t - i - 1).setZero();
      }
      out.mat().block(b, c, t, dh).noalias() = p * vv.mat().block(b, c, t, dh);
      probs.push_back(std::move(p));
    }
  }
  const std::uint32_t iq = q.id, ik = k.id, iv = v.id;
  std::vector<Segment> segs(segments.begin(), segments.end());
  return g.emit(
      "causal_attention", std::move(out), {q, k, v},
      [iq, ik, iv, n_heads, dh, inv_scale, segs = std::move(segs), probs = std::move(probs)](
          Graph& gr, std::uint32_t self) {
        const auto go = gr.node_grad(self).mat();
        const auto qm = gr.node_value(iq).mat();
        const auto km = gr.node_value(ik).mat();
        const auto vm = gr.node_value(iv).mat();
        const bool want_q = wants(gr, iq), want_k = wants(gr, ik), want_v = wants(gr, iv);
        std::size_t idx = 0;
        for (const Segment& s : segs) {
          const auto b = static_cast<Eigen::Index>(s.begin);
          const auto t = static_cast<Eigen::Index>(s.length);
          for (std::size_t h = 0; h < n_heads; ++h, ++idx) {
            const Eigen::Index c = static_cast<Eigen::Index>(h) * dh;
            const RowMatrix& p = probs[idx];
            const auto go_h = go.block(b, c, t, dh);
            if (want_v) gr.grad_slot(iv).mat().block(b, c, t, dh).noalias() += p.transpose() * go_h;
            if (!want_q && !want_k) continue;
            RowMatrix dp = go_h * vm.block(b, c, t, dh).transpose();
            RowMatrix ds = p.array() * (dp.array().colwise() - (dp.array() * p.array()).rowwise().sum());
            ds *= inv_scale;
            if (want_q) gr.grad_slot(iq).mat().block(b, c, t, dh).noalias() += ds * km.block(b, c, t, dh);
            if (want_k) gr.grad_slot(ik).mat().block(b, c, t, dh).noalias() += ds.transpose() * qm.block(b, c, t, dh);
          }
        }
      });
}

Var segment_masked_mean(Var x, std::span<const double> mask, std::span<const Segment> segments) {
  Graph& g = *x.graph;
  const Tensor& xv = x.value();
  require_matrix("segment_masked_mean", xv);
  if (mask.size() != xv.rows()) {
    throw ShapeError("segment_masked_mean: mask length " + std::to_string(mask.size()) + " vs " +
                     to_string(xv.shape()));
  }
  check_segments("segment_masked_mean", segments, xv.rows());
  Tensor out(Shape{segments.size(), xv.cols()});
  std::vector<double> counts(segments.size(), 0.0);
  for (std::size_t s = 0; s < segments.size(); ++s) {
    for (std::size_t t = segments[s].begin; t < segments[s].begin + segments[s].length; ++t) {
      if (mask[t] != 0.0) {
        out.mat().row(static_cast<Eigen::Index>(s)) += mask[t] * xv.mat().row(static_cast<Eigen::Index>(t));
        counts[s] += mask[t];
      }
    }
    if (counts[s] == 0.0) throw DataError("segment_masked_mean: segment " + std::to_string(s) + " fully masked");
    out.mat().row(static_cast<Eigen::Index>(s)) /= counts[s];
  }
  const std::uint32_t ix = x.id;
  std::vector<double> m(mask.begin(), mask.end());
  std::vector<Segment> segs(segments.begin(), segments.end());
  return g.emit("segment_masked_mean", std::move(out), {x},
                [ix, m = std::move(m), segs = std::move(segs), counts = std::move(counts)](Graph& gr, std::uint32_t self) {
                  const auto gy = gr.node_grad(self).mat();
                  auto gx = gr.grad_slot(ix).mat();
                  for (std::size_t s = 0; s < segs.size(); ++s) {
                    for (std::size_t t = segs[s].begin; t < segs[s].begin + segs[s].length; ++t) {
                      if (m[t] != 0.0) gx.row(static_cast<Eigen::Index>(t)) += (m[t] / counts[s]) * gy.row(static_cast<Eigen::Index>(s));
                    }
                  }
                });
}

Var segment_masked_sq_dist(Var a, Var b, std::span<const double> mask, std::span<const Segment> segments) {
  Graph& g = *a.graph;
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_matrix("segment_masked_sq_dist", av);
  require(av.same_shape(bv), "segment_masked_sq_dist", av, bv);
  if (mask.size() != av.rows()) {
    throw ShapeError("segment_masked_sq_dist: mask length " + std::to_string(mask.size()) + " vs " +
                     to_string(av.shape()));
  }
  check_segments("segment_masked_sq_dist", segments, av.rows());
  const double d = static_cast<double>(av.cols());
  Tensor out(Shape{segments.size(), 1});
  std::vector<double> denom(segments.size(), 0.0);
  for (std::size_t s = 0; s < segments.size(); ++s) {
    double num = 0.0, msum = 0.0;
    for (std::size_t t = segments[s].begin; t < segments[s].begin + segments[s].length; ++t) {
      if (mask[t] == 0.0) continue;
      const auto r = static_cast<Eigen::Index>(t);
      num += mask[t] * (av.mat().row(r) - bv.mat().row(r)).squaredNorm();
      msum += mask[t];
    }
    if (msum == 0.0) {
      throw DataError("segment_masked_sq_dist: segment " + std::to_string(s) + " has an all-zero mask");
    }
    denom[s] = d * msum;
    out[s] = num / denom[s];
  }
  const std::uint32_t ia = a.id, ib = b.id;
  std::vector<double> m(mask.begin(), mask.end());
  std::vector<Segment> segs(segments.begin(), segments.end());
  return g.emit("segment_masked_sq_dist", std::move(out), {a, b},
                [ia, ib, m = std::move(m), segs = std::move(segs), denom = std::move(denom)](Graph& gr, std::uint32_t self) {
                  const Tensor& gy = gr.node_grad(self);
                  const auto am = gr.node_value(ia).mat();
                  const auto bm = gr.node_value(ib).mat();
                  const bool want_a = wants(gr, ia), want_b = wants(gr, ib);
                  for (std::size_t s = 0; s < segs.size(); ++s) {
                    for (std::size_t t = segs[s].begin; t < segs[s].begin + segs[s].length; ++t) {
                      if (m[t] == 0.0) continue;
                      const auto r = static_cast<Eigen::Index>(t);
                      const double c = 2.0 * m[t] * gy[s] / denom[s];
                      if (want_a) gr.grad_slot(ia).mat().row(r) += c * (am.row(r) - bm.row(r));
                      if (want_b) gr.grad_slot(ib).mat().row(r) -= c * (am.row(r) - bm.row(r));
                    }
                  }
                });
}

Var sum(Var a) {
  Graph& g = *a.graph;
  const std::uint32_t ia = a.id;
  return g.emit("sum", Tensor::scalar(a.value().mat().sum()), {a}, [ia](Graph& gr, std::uint32_t self) {
    gr.grad_slot(ia).mat().array() += gr.node_grad(self)[0];
  });
}

Var mean(Var a) {
  Graph& g = *a.graph;
  const double n = static_cast<double>(a.value().size());
  const std::uint32_t ia = a.id;
  return g.emit("mean", Tensor::scalar(a.value().mat().sum() / n), {a}, [ia, n](Graph& gr, std::uint32_t self) {
    gr.grad_slot(ia).mat().array() += gr.node_grad(self)[0] / n;
  });
}

}  // namespace w2s
