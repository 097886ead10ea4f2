#include <doctest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "helpers.hpp"
#include "w2s/autodiff.hpp"
#include "w2s/error.hpp"
#include "w2s/grad_check.hpp"

using namespace w2s;
using w2s::test::random_tensor;

namespace {

// Contracts every output entry with fixed random weights so no gradient is trivially zero.
Var contract(Graph& g, Var out, std::uint64_t seed) {
  Rng rng(seed);
  Tensor w = random_tensor(g.value(out).shape(), rng);
  return sum(mul(out, g.constant(w)));
}

double check_op(std::vector<Parameter>& params, const std::function<Var(Graph&, std::vector<Var>&)>& op) {
  std::vector<Parameter*> ptrs;
  for (Parameter& p : params) ptrs.push_back(&p);
  auto build = [&](Graph& g) {
    std::vector<Var> vars;
    for (Parameter& p : params) vars.push_back(g.parameter(p));
    return contract(g, op(g, vars), 99);
  };
  return grad_check(build, ptrs, 1e-6).max_rel_err;
}

std::vector<Parameter> random_params(std::initializer_list<Shape> shapes, std::uint64_t seed, double scale = 1.0) {
  Rng rng(seed);
  std::vector<Parameter> out;
  int i = 0;
  for (const Shape& s : shapes) out.emplace_back("p" + std::to_string(i++), random_tensor(s, rng, scale));
  return out;
}

}  // namespace

TEST_SUITE("core-math") {
  TEST_CASE("sigmoid of zero is one half") {
    Graph g;
    CHECK(sigmoid(g.constant(Tensor::scalar(0.0))).item() == 0.5);
  }

  TEST_CASE("softmax of equal logits is uniform") {
    Graph g;
    Var s = softmax_rows(g.constant(Tensor::matrix(1, 2, {0.0, 0.0})));
    CHECK(g.value(s)[0] == 0.5);
    CHECK(g.value(s)[1] == 0.5);
  }

  TEST_CASE("matmul of ones") {
    Graph g;
    Var a = g.constant(Tensor({2, 3}, 1.0));
    Var b = g.constant(Tensor({3, 1}, 1.0));
    const Tensor& c = g.value(matmul(a, b));
    REQUIRE(c.shape() == Shape{2, 1});
    CHECK(c[0] == 3.0);
    CHECK(c[1] == 3.0);
  }

  TEST_CASE("backward of x squared at 3") {
    Graph g;
    Var x = g.variable(Tensor::scalar(3.0));
    g.backward(sum(square(x)));
    CHECK(g.grad(x).item() == doctest::Approx(6.0).epsilon(1e-15));
  }

  TEST_CASE("backward of sigmoid at 0") {
    Graph g;
    Var x = g.variable(Tensor::scalar(0.0));
    g.backward(sum(sigmoid(x)));
    CHECK(g.grad(x).item() == 0.25);
  }

  TEST_CASE("layer norm then sum matches central differences") {
    Rng rng(5);
    Parameter x("x", random_tensor({1, 4}, rng));
    Parameter gain("gain", random_tensor({1, 4}, rng));
    Parameter bias("bias", random_tensor({1, 4}, rng));
    std::vector<Parameter*> ps{&x};
    auto build = [&](Graph& g) { return sum(layer_norm(g.parameter(x), g.frozen(gain), g.frozen(bias))); };
    CHECK(grad_check(build, ps, 1e-5).max_rel_err < 1e-7);
  }

  TEST_CASE("grad_check is exact for linear functions") {
    Rng rng(6);
    Parameter w("w", random_tensor({3, 2}, rng));
    Tensor c = random_tensor({3, 2}, rng);
    std::vector<Parameter*> ps{&w};
    auto build = [&](Graph& g) { return sum(mul(g.parameter(w), g.constant(c))); };
    GradCheckReport r = grad_check(build, ps, 1e-6);
    CHECK(r.max_rel_err < 1e-10);
    CHECK(r.coordinates == 6);
  }

  TEST_CASE("grad_check rejects an out-of-range step") {
    Parameter w("w", Tensor::scalar(1.0));
    std::vector<Parameter*> ps{&w};
    auto build = [&](Graph& g) { return sum(g.parameter(w)); };
    CHECK_THROWS_AS(grad_check(build, ps, 1e-2), ContractError);
  }

  TEST_CASE("every differentiable op matches central differences") {
    const double tol = 1e-5;
    SUBCASE("matmul and matmul_bt") {
      auto p = random_params({{3, 4}, {4, 2}}, 1);
      CHECK(check_op(p, [](Graph&, auto& v) { return matmul(v[0], v[1]); }) < tol);
      auto q = random_params({{3, 4}, {5, 4}}, 2);
      CHECK(check_op(q, [](Graph&, auto& v) { return matmul_bt(v[0], v[1]); }) < tol);
    }
    SUBCASE("elementwise binary ops, rank 0 to 2") {
      for (Shape s : {Shape{}, Shape{5}, Shape{3, 4}}) {
        auto p = random_params({s, s}, 3);
        CHECK(check_op(p, [](Graph&, auto& v) { return add(v[0], v[1]); }) < tol);
        CHECK(check_op(p, [](Graph&, auto& v) { return sub(v[0], v[1]); }) < tol);
        CHECK(check_op(p, [](Graph&, auto& v) { return mul(v[0], v[1]); }) < tol);
      }
    }
    SUBCASE("elementwise unary ops, rank 0 to 2") {
      for (Shape s : {Shape{}, Shape{5}, Shape{3, 4}}) {
        auto p = random_params({s}, 4);
        CHECK(check_op(p, [](Graph&, auto& v) { return scale(v[0], -1.7); }) < tol);
        CHECK(check_op(p, [](Graph&, auto& v) { return sigmoid(v[0]); }) < tol);
        CHECK(check_op(p, [](Graph&, auto& v) { return log_sigmoid(v[0]); }) < tol);
        CHECK(check_op(p, [](Graph&, auto& v) { return exp(v[0]); }) < tol);
        CHECK(check_op(p, [](Graph&, auto& v) { return tanh(v[0]); }) < tol);
        CHECK(check_op(p, [](Graph&, auto& v) { return gelu(v[0]); }) < tol);
        CHECK(check_op(p, [](Graph&, auto& v) { return square(v[0]); }) < tol);
        CHECK(check_op(p, [](Graph&, auto& v) { return log(exp(v[0])); }) < tol);
        CHECK(check_op(p, [](Graph&, auto& v) { return sum(v[0]); }) < tol);
        CHECK(check_op(p, [](Graph&, auto& v) { return mean(v[0]); }) < tol);
      }
    }
    SUBCASE("row ops") {
      auto p = random_params({{4, 6}, {1, 6}, {1, 6}}, 5);
      CHECK(check_op(p, [](Graph&, auto& v) { return softmax_rows(v[0]); }) < tol);
      CHECK(check_op(p, [](Graph&, auto& v) { return add_bias(v[0], v[1]); }) < tol);
      CHECK(check_op(p, [](Graph&, auto& v) { return layer_norm(v[0], v[1], v[2]); }) < tol);
    }
    SUBCASE("indexing ops") {
      auto p = random_params({{7, 3}}, 6);
      const std::vector<int> ids{2, 0, 2, 6};
      CHECK(check_op(p, [&](Graph&, auto& v) { return embedding(v[0], ids); }) < tol);
      const std::vector<std::size_t> rows{1, 1, 4};
      CHECK(check_op(p, [&](Graph&, auto& v) { return gather_rows(v[0], rows); }) < tol);
    }
    SUBCASE("attention and segment reductions over packed sequences") {
      const std::vector<Segment> segs{{0, 3}, {3, 4}};
      const std::vector<double> mask{0, 1, 1, 0, 1, 1, 0};
      auto p = random_params({{7, 4}, {7, 4}, {7, 4}}, 7);
      CHECK(check_op(p, [&](Graph&, auto& v) { return causal_attention(v[0], v[1], v[2], 2, segs); }) < tol);
      CHECK(check_op(p, [&](Graph&, auto& v) { return segment_masked_mean(v[0], mask, segs); }) < tol);
      CHECK(check_op(p, [&](Graph&, auto& v) { return segment_masked_sq_dist(v[0], v[1], mask, segs); }) < tol);
    }
  }

  TEST_CASE("softmax rows sum to one") {
    Rng rng(8);
    Graph g;
    const Tensor& s = g.value(softmax_rows(g.constant(random_tensor({20, 9}, rng, 30.0))));
    for (std::size_t r = 0; r < 20; ++r) {
      double total = 0.0;
      for (std::size_t c = 0; c < 9; ++c) total += s.at(r, c);
      CHECK(std::abs(total - 1.0) <= 1e-12);
    }
  }

  TEST_CASE("attention never looks ahead or across segments") {
    Rng rng(9);
    Tensor q = random_tensor({5, 4}, rng), k = random_tensor({5, 4}, rng), v = random_tensor({5, 4}, rng);
    const std::vector<Segment> segs{{0, 2}, {2, 3}};
    Graph g1;
    Tensor base = g1.value(causal_attention(g1.constant(q), g1.constant(k), g1.constant(v), 2, segs));
    Tensor v2 = v;
    for (std::size_t c = 0; c < 4; ++c) v2.at(3, c) += 10.0;
    Graph g2;
    Tensor bumped = g2.value(causal_attention(g2.constant(q), g2.constant(k), g2.constant(v2), 2, segs));
    for (std::size_t r = 0; r < 5; ++r) {
      for (std::size_t c = 0; c < 4; ++c) {
        if (r < 3) CHECK(bumped.at(r, c) == base.at(r, c));
      }
    }
    CHECK(bumped.at(4, 0) != base.at(4, 0));
  }

  TEST_CASE("parameter gradients accumulate until zeroed") {
    Parameter p("p", Tensor::scalar(2.0));
    for (int i = 0; i < 2; ++i) {
      Graph g;
      g.backward(sum(square(g.parameter(p))));
    }
    CHECK(p.grad.item() == 8.0);
    p.zero_grad();
    CHECK(p.grad.item() == 0.0);
  }

  TEST_CASE("frozen parameters receive no gradient") {
    Parameter p("p", Tensor::scalar(2.0), false);
    Graph g;
    Var x = g.parameter(p);
    CHECK_FALSE(g.requires_grad(x));
    g.backward(sum(square(x)));
    CHECK(p.grad.item() == 0.0);
  }

  TEST_CASE("evaluation is deterministic") {
    Rng r1(10), r2(10);
    Tensor a = random_tensor({6, 6}, r1), b = random_tensor({6, 6}, r2);
    Graph g1, g2;
    Var y1 = gelu(softmax_rows(matmul(g1.constant(a), g1.constant(a))));
    Var y2 = gelu(softmax_rows(matmul(g2.constant(b), g2.constant(b))));
    CHECK(g1.value(y1).storage() == g2.value(y2).storage());
  }

  TEST_CASE("shape mismatches name the op") {
    Graph g;
    Var a = g.constant(Tensor({2, 3}));
    Var b = g.constant(Tensor({2, 3}));
    CHECK_THROWS_WITH_AS(matmul(a, b), doctest::Contains("matmul"), ShapeError);
    CHECK_THROWS_AS(add(a, g.constant(Tensor({3, 2}))), ShapeError);
  }

  TEST_CASE("non-finite values are rejected") {
    Graph g;
    CHECK_THROWS_AS(log(g.constant(Tensor::scalar(-1.0))), NumericError);
  }
}
