#include <doctest.h>

#include <cmath>
#include <sstream>

#include "dws/checkpoint.hpp"
#include "dws/graph.hpp"
#include "dws/optim.hpp"
#include "dws/random.hpp"

using namespace dws;

namespace {

Tensor<double> random_tensor(Shape s, Rng& rng) {
  Tensor<double> t(std::move(s));
  for (auto& v : t.data()) v = uniform(rng, -1.0, 1.0);
  return t;
}

// Central differences over every parameter entry.
void check_gradients(const Graph<double>& g, Bindings<double> b, NodeId loss, double h = 1e-5, double tol = 1e-4) {
  auto grads = backward_grad(g, b, loss);
  for (auto& [name, grad] : grads.grads) {
    auto& p = b.at(name);
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double orig = p[i];
      p[i] = orig + h;
      const double up = forward_eval(g, b, loss)[0];
      p[i] = orig - h;
      const double down = forward_eval(g, b, loss)[0];
      p[i] = orig;
      const double fd = (up - down) / (2 * h);
      const double a = grad[i];
      const double scale = std::max({std::abs(a), std::abs(fd), 1e-3});
      INFO(name << "[" << i << "] analytic " << a << " fd " << fd);
      CHECK(std::abs(a - fd) / scale <= tol);
    }
  }
}

}  // namespace

TEST_CASE("forward examples") {
  Graph<double> g;
  auto a = g.constant(Tensor<double>({2, 2}, {1, 2, 3, 4}));
  auto b = g.constant(Tensor<double>({2, 1}, {1, 1}));
  auto m = g.matmul(a, b);
  CHECK(forward_eval(g, {}, m).values() == std::vector<double>{3, 7});

  auto r = g.relu(g.constant(Tensor<double>({3}, {-1, 0, 2})));
  CHECK(forward_eval(g, {}, r).values() == std::vector<double>{0, 0, 2});

  auto s = g.sum(g.constant(Tensor<double>({3, 4}, 1.0)), 0);
  auto out = forward_eval(g, {}, s);
  CHECK(out.shape() == Shape{4});
  CHECK(out.values() == std::vector<double>{3, 3, 3, 3});
}

TEST_CASE("backward examples") {
  {
    Graph<double> g;
    auto x = g.parameter("x", {2});
    auto loss = g.sum(g.mul(x, x), 0);
    Bindings<double> b{{"x", Tensor<double>({2}, {1, 2})}};
    auto grads = backward_grad(g, b, loss);
    CHECK(grads.loss == 5.0);
    CHECK(grads.grads.at("x").values() == std::vector<double>{2, 4});
  }
  {
    Graph<double> g;
    auto w = g.parameter("W", {1, 1});
    auto x = g.input("x", {1, 1});
    auto y = g.input("y", {1, 1});
    auto loss = g.mse(g.matmul(w, x), y);
    Bindings<double> b{{"W", Tensor<double>({1, 1}, 0.0)}, {"x", Tensor<double>({1, 1}, 1.0)},
                       {"y", Tensor<double>({1, 1}, 1.0)}};
    auto grads = backward_grad(g, b, loss);
    CHECK(grads.grads.at("W")[0] == doctest::Approx(-2.0));
    check_gradients(g, b, loss);
  }
}

TEST_CASE("errors name the offending node") {
  Graph<double> g;
  auto a = g.input("a", {2, 3});
  auto b = g.input("b", {2, 3});
  CHECK_THROWS_AS(g.matmul(a, b), ShapeError);
  try {
    g.matmul(a, b);
  } catch (const ShapeError& e) {
    CHECK(std::string(e.what()).find("matmul") != std::string::npos);
  }
  auto c = g.add(a, b);
  CHECK_THROWS(forward_eval(g, {{"a", Tensor<double>({2, 3})}}, c));  // b unbound
  CHECK_THROWS_AS(forward_eval(g, {{"a", Tensor<double>({3, 2})}, {"b", Tensor<double>({2, 3})}}, c), ShapeError);
  CHECK_THROWS_AS(backward_grad(g, {{"a", Tensor<double>({2, 3})}, {"b", Tensor<double>({2, 3})}}, c), ShapeError);
  CHECK_THROWS_AS(Tensor<double>({2, 0}), ShapeError);
}

TEST_CASE("max ties route gradient to the first index") {
  Graph<double> g;
  auto x = g.parameter("x", {4});
  auto loss = g.sum(g.broadcast(g.max(x, 0), 0, 1), 0);
  Bindings<double> b{{"x", Tensor<double>({4}, {1, 3, 3, 2})}};
  auto grads = backward_grad(g, b, loss);
  CHECK(grads.grads.at("x").values() == std::vector<double>{0, 1, 0, 0});
}

TEST_CASE("forward is pure and repeatable") {
  Rng rng(3);
  Graph<double> g;
  auto w = g.parameter("w", {3, 4});
  auto x = g.input("x", {4, 2});
  auto y = g.sine(g.matmul(w, x));
  Bindings<double> b{{"w", random_tensor({3, 4}, rng)}, {"x", random_tensor({4, 2}, rng)}};
  const auto copy = b;
  auto first = forward_eval(g, b, y);
  auto second = forward_eval(g, b, y);
  CHECK(first == second);
  CHECK(b == copy);
}

TEST_CASE("broadcast then sum is scaling by the axis length") {
  Rng rng(5);
  for (std::size_t axis = 0; axis <= 2; ++axis) {
    Graph<double> g;
    auto x = g.input("x", {2, 3});
    auto y = g.sum(g.broadcast(x, axis, 4), axis);
    auto z = g.scale(x, 4.0);
    Bindings<double> b{{"x", random_tensor({2, 3}, rng)}};
    auto ys = forward_eval(g, b, y), zs = forward_eval(g, b, z);
    for (std::size_t i = 0; i < ys.size(); ++i) CHECK(ys[i] == doctest::Approx(zs[i]).epsilon(1e-15));
  }
}

TEST_CASE("gradients match central differences on random graphs") {
  Rng rng(2024);
  for (int trial = 0; trial < 50; ++trial) {
    Graph<double> g;
    Bindings<double> b;
    int counter = 0;
    auto param = [&](Shape s) {
      const auto name = "p" + std::to_string(counter++);
      b.emplace(name, random_tensor(s, rng));
      return g.parameter(name, s);
    };
    const std::size_t r = 1 + uniform_index(rng, 3), k = 1 + uniform_index(rng, 3), c = 1 + uniform_index(rng, 3);
    NodeId x = g.matmul(param({r, k}), param({k, c}));
    for (int step = 0; step < 6; ++step) {
      const Shape s = g.shape(x);
      const std::size_t axis = uniform_index(rng, s.size());
      switch (uniform_index(rng, 12)) {
        case 0: x = g.relu(x); break;
        case 1: x = g.sine(x); break;
        case 2: x = g.mul(x, param(s)); break;
        case 3: x = g.add(x, param(s)); break;
        case 4: x = g.sub(param(s), x); break;
        case 5: x = g.scale(x, uniform(rng, -2, 2)); break;
        case 6: x = g.broadcast(g.sum(x, axis), axis, s[axis]); break;
        case 7: x = g.broadcast(g.max(x, axis), axis, 1 + uniform_index(rng, 3)); break;
        case 8: x = s.size() == 2 ? g.permute(x, {1, 0}) : x; break;
        case 9: x = g.reshape(g.reshape(x, {shape_size(s)}), s); break;
        case 10: {
          NodeId parts[] = {x, param(s)};
          auto cat = g.concat(parts, axis);
          const std::size_t begin = uniform_index(rng, s[axis] + 1);
          x = g.slice(cat, axis, begin, begin + s[axis]);
          break;
        }
        case 11: x = g.linear(x, param({1 + uniform_index(rng, 3), s[axis]}), axis); break;
      }
    }
    auto target = g.constant(random_tensor(g.shape(x), rng));
    auto loss = g.mse(x, target);
    INFO("trial " << trial);
    check_gradients(g, b, loss);
  }
}

TEST_CASE("unreachable parameters get zero gradients") {
  Graph<double> g;
  auto a = g.parameter("a", {2});
  g.parameter("unused", {3});
  auto loss = g.sum(a, 0);
  auto grads = backward_grad(g, {{"a", Tensor<double>({2}, 1.0)}, {"unused", Tensor<double>({3}, 1.0)}}, loss);
  CHECK(grads.grads.at("unused").values() == std::vector<double>{0, 0, 0});
}

TEST_CASE("adam examples") {
  Bindings<double> p{{"w", Tensor<double>({3}, {1.0, -2.0, 0.5})}};
  Bindings<double> grad{{"w", Tensor<double>({3}, {0.3, -4.0, 1e-3})}};
  {
    auto q = p;
    OptimizerState<double> st;
    st.config.learning_rate = 0.0;
    adam_step(q, grad, st);
    CHECK(q == p);
    CHECK(st.step == 1);
  }
  {
    auto q = p;
    OptimizerState<double> st;
    st.config.learning_rate = 0.01;
    adam_step(q, grad, st);
    for (std::size_t i = 0; i < 3; ++i) {
      const double sign = grad.at("w")[i] > 0 ? 1.0 : -1.0;
      CHECK(p.at("w")[i] - q.at("w")[i] == doctest::Approx(0.01 * sign).epsilon(1e-4));
    }
  }
  {
    auto q = p;
    OptimizerState<double> st;
    st.config.learning_rate = 0.01;
    st.config.weight_decay = 0.1;
    Bindings<double> zero{{"w", Tensor<double>({3})}};
    adam_step(q, zero, st);
    for (std::size_t i = 0; i < 3; ++i) CHECK(q.at("w")[i] == doctest::Approx(p.at("w")[i] * 0.999).epsilon(1e-14));
  }
  {
    auto q = p;
    OptimizerState<double> st;
    Bindings<double> bad{{"w", Tensor<double>({3}, {0.0, NAN, 0.0})}};
    try {
      adam_step(q, bad, st);
      FAIL("expected an error");
    } catch (const std::domain_error& e) {
      CHECK(std::string(e.what()).find("'w'") != std::string::npos);
    }
    CHECK(q == p);
    CHECK(st.step == 0);
  }
}

TEST_CASE("checkpoint round trip is bitwise") {
  Rng rng(9);
  Checkpoint c;
  c.header = {{"kind", "test"}, {"dims", {1, 2, 1}}};
  c.parameters.emplace("a.weight", random_tensor({3, 2}, rng));
  c.parameters.emplace("b", Tensor<double>({1}, {0.1}));
  c.parameters.emplace("tiny", Tensor<double>({2}, {1e-300, -5e-324}));
  std::stringstream ss;
  write_checkpoint(ss, c);
  auto back = read_checkpoint(ss);
  CHECK(back.header == c.header);
  CHECK(back.parameters == c.parameters);
  CHECK(format_real(0.1) == "0.10000000000000001");
  CHECK_THROWS(format_real(INFINITY));
}
