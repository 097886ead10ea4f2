#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "w2s/tensor.hpp"

namespace w2s {

/// A named learnable tensor with its gradient accumulator.
///
/// Gradients accumulate across backward passes until `zero_grad()` is called.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  bool trainable = true;

  Parameter() = default;
  Parameter(std::string n, Tensor v, bool train = true)
      : name(std::move(n)), value(std::move(v)), grad(Tensor::zeros_like(value)), trainable(train) {}

  void zero_grad() { grad.fill(0.0); }
};

class Graph;

/// Handle to a node of a `Graph`. Cheap to copy; valid while the graph lives.
struct Var {
  Graph* graph = nullptr;
  std::uint32_t id = 0;

  const Tensor& value() const;
  double item() const { return value().item(); }
};

/// Contiguous run of rows in a packed batch that belong to one sequence.
struct Segment {
  std::size_t begin = 0;
  std::size_t length = 0;
};

/// Tape of operations for reverse-mode differentiation.
///
/// Nodes are appended in evaluation order, so the tape is acyclic by
/// construction and the reverse of insertion order is a valid topological
/// order for `backward`. A graph is single-writer.
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, std::uint32_t self)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Tensor value);
  /// Leaf that owns its gradient (read back with `grad`).
  Var variable(Tensor value);
  /// Leaf bound to `p`; requires grad iff `p.trainable`. Backward adds into `p.grad`.
  Var parameter(Parameter& p);
  /// Leaf holding a copy of `p.value` that never receives gradient.
  Var frozen(const Parameter& p);

  const Tensor& value(Var v) const { return nodes_[v.id].value; }
  /// Gradient of the last backward pass; zero tensor when `v` was not reached.
  const Tensor& grad(Var v);
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }
  std::size_t size() const noexcept { return nodes_.size(); }
  const std::vector<std::uint32_t>& parents(Var v) const { return nodes_[v.id].parents; }
  const std::string& op_name(Var v) const { return nodes_[v.id].op; }

  /// Propagates d(loss)/d(node) to every node that requires grad.
  /// Intermediate gradients are reset at the start of each call; leaf and
  /// parameter gradients accumulate across calls.
  void backward(Var loss);

  /// Appends an op node. Throws NumericError when `value` is not finite.
  Var emit(std::string op, Tensor value, std::initializer_list<Var> parents, BackwardFn fn);

  // Accessors for op implementations.
  const Tensor& node_value(std::uint32_t id) const { return nodes_[id].value; }
  const Tensor& node_grad(std::uint32_t id) const { return nodes_[id].grad; }
  /// Gradient accumulator of node `id`, allocated on first use.
  Tensor& grad_slot(std::uint32_t id);
  bool node_requires_grad(std::uint32_t id) const { return nodes_[id].requires_grad; }

 private:
  struct Node {
    std::string op;
    Tensor value;
    Tensor grad;
    bool grad_ready = false;
    bool requires_grad = false;
    bool leaf = false;
    Parameter* param = nullptr;
    std::vector<std::uint32_t> parents;
    BackwardFn backward;
  };

  Var push(Node node);

  std::vector<Node> nodes_;
};

// ---------------------------------------------------------------------------
// Differentiable ops. Shapes are checked eagerly; mismatches throw ShapeError
// naming the op and both shapes.

Var matmul(Var a, Var b);
/// a * b^T without materializing the transpose.
Var matmul_bt(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
/// Adds a 1 x m row to every row of an n x m matrix (leading-batch expansion).
Var add_bias(Var x, Var bias);
Var sigmoid(Var a);
/// log(sigmoid(a)) evaluated without overflow.
Var log_sigmoid(Var a);
Var log(Var a);
Var exp(Var a);
Var tanh(Var a);
/// Exact GELU, x * Phi(x).
Var gelu(Var a);
Var square(Var a);
/// Softmax over the last axis.
Var softmax_rows(Var a);
/// Row-wise layer normalization with learned gain and bias (both 1 x m).
Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);
/// Rows of `table` selected by `ids`.
Var embedding(Var table, std::span<const int> ids);
Var gather_rows(Var x, std::span<const std::size_t> rows);
/// Multi-head causal self-attention over packed sequences. q, k, v are N x d
/// with heads laid out as contiguous column blocks; attention never crosses
/// segment boundaries.
Var causal_attention(Var q, Var k, Var v, std::size_t n_heads, std::span<const Segment> segments);
/// Per-segment mean of rows with mask 1. Output is S x d.
Var segment_masked_mean(Var x, std::span<const double> mask, std::span<const Segment> segments);
/// Per-segment sum_t m_t ||a_t - b_t||^2 / (d * sum_t m_t). Output is S x 1.
Var segment_masked_sq_dist(Var a, Var b, std::span<const double> mask,
                           std::span<const Segment> segments);
/// Sum of all entries, as a scalar.
Var sum(Var a);
/// Mean of all entries, as a scalar.
Var mean(Var a);

}  // namespace w2s
