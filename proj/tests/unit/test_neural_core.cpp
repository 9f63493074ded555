#include <cmath>
#include <sstream>

#include "doctest.h"

#include "can/errors.hpp"
#include "can/gradcheck.hpp"
#include "can/graph.hpp"
#include "can/ops.hpp"
#include "oracles.hpp"

using namespace can;

namespace {

Tensor grad_of(const Tensor& x0, const std::function<Var(Graph&, Var)>& f) {
  Tensor x = x0;
  x.set_requires_grad(true);
  Graph g;
  Var out = f(g, g.param(x));
  g.backward(out);
  return Tensor(x.shape(), std::vector<double>(x.grad().begin(), x.grad().end()));
}

double value_of(const Tensor& x, const std::function<Var(Graph&, Var)>& f) {
  Graph g;
  return f(g, g.input(x)).value()[0];
}

}  // namespace

TEST_CASE("tensor shape checks") {
  CHECK_THROWS_AS(Tensor({2, 3}, std::vector<double>(5)), ShapeError);
  CHECK_THROWS_AS(Tensor({2, 0}), ShapeError);
  Tensor t({2, 3}, 1.5);
  CHECK(t.size() == 6);
  t.set_requires_grad(true);
  CHECK(t.grad().size() == t.size());
}

TEST_CASE("tensor file round trip") {
  Rng rng(3);
  Tensor t = oracle::random_tensor({2, 3, 4}, rng);
  t[0] = -0.0;
  t[1] = 1e-310;
  std::stringstream ss;
  write_tensor(ss, t);
  std::size_t offset = 0;
  Tensor back = read_tensor(ss, offset);
  CHECK(back == t);
  CHECK(offset == 4 + 4 + 3 * 4 + 24 * 8);

  std::string bytes;
  {
    std::stringstream out;
    write_tensor(out, t);
    bytes = out.str();
  }
  std::stringstream cut(bytes.substr(0, bytes.size() - 3));
  offset = 0;
  CHECK_THROWS_AS(read_tensor(cut, offset), ParseError);
  std::stringstream bad("CANX" + bytes.substr(4));
  offset = 0;
  CHECK_THROWS_AS(read_tensor(bad, offset), ParseError);
}

TEST_CASE("conv2d examples") {
  Graph g;
  Tensor ones({1, 1, 3, 3}, 1.0);
  Var y = conv2d(g.input(ones), g.input(ones), g.input(Tensor({1}, 0.0)), 1, 0);
  CHECK(y.shape() == Shape{1, 1, 1, 1});
  CHECK(y.value()[0] == 9.0);

  Rng rng(1);
  Tensor x = oracle::random_tensor({1, 1, 5, 5}, rng);
  Var id = conv2d(g.input(x), g.input(Tensor({1, 1, 1, 1}, 1.0)), g.input(Tensor({1}, 0.0)), 1, 0);
  CHECK(id.value() == x);
}

TEST_CASE("conv2d matches loop oracle") {
  Rng rng(2);
  Tensor x = oracle::random_tensor({2, 3, 8, 8}, rng);
  Tensor w = oracle::random_tensor({4, 3, 3, 3}, rng);
  Tensor b = oracle::random_tensor({4}, rng);
  Graph g;
  Var y = conv2d(g.input(x), g.input(w), g.input(b), 1, 1);
  CHECK(y.shape() == Shape{2, 4, 8, 8});
  CHECK(oracle::max_abs_diff(y.value(), oracle::conv2d(x, w, b, 1, 1)) < 1e-12);

  Tensor odd = oracle::random_tensor({2, 3, 9, 9}, rng);
  Var s = conv2d(g.input(odd), g.input(w), g.input(b), 2, 0);
  CHECK(s.shape() == Shape{2, 4, 4, 4});
  CHECK(oracle::max_abs_diff(s.value(), oracle::conv2d(odd, w, b, 2, 0)) < 1e-12);
}

TEST_CASE("conv2d errors") {
  Graph g;
  Tensor x({1, 2, 4, 4}, 1.0);
  CHECK_THROWS_AS(conv2d(g.input(x), g.input(Tensor({1, 3, 3, 3})), g.input(Tensor({1})), 1, 0),
                  ShapeError);
  CHECK_THROWS_AS(conv2d(g.input(x), g.input(Tensor({1, 2, 3, 3})), g.input(Tensor({1})), 2, 0),
                  ConfigError);
}

TEST_CASE("relu") {
  Graph g;
  CHECK(relu(g.input(Tensor({3}, {-1, 0, 2}))).value() == Tensor({3}, {0, 0, 2}));
  Tensor nonneg({4}, {0, 1, 2, 3});
  CHECK(relu(g.input(nonneg)).value() == nonneg);
  Tensor gr = grad_of(Tensor({2}, {-1, 2}), [](Graph&, Var x) { return sum(relu(x)); });
  CHECK(gr == Tensor({2}, {0, 1}));
  CHECK(grad_of(Tensor({1}, {0.0}), [](Graph&, Var x) { return sum(relu(x)); })[0] == 0.0);
  Rng rng(5);
  Tensor r = oracle::random_tensor({10}, rng);
  CHECK(relu(relu(g.input(r))).value() == relu(g.input(r)).value());
}

TEST_CASE("max_pool2d") {
  Graph g;
  CHECK(max_pool2d(g.input(Tensor({1, 1, 2, 2}, {1, 2, 3, 4})), 2, 2).value()[0] == 4.0);
  Var c = max_pool2d(g.input(Tensor({1, 2, 4, 4}, 0.7)), 2, 2);
  for (double v : c.value().values()) CHECK(v == 0.7);
  Rng rng(6);
  Tensor x = oracle::random_tensor({1, 2, 4, 4}, rng);
  CHECK(max_pool2d(g.input(x), 2, 2).value() == oracle::max_pool(x, 2, 2));
  CHECK_THROWS_AS(max_pool2d(g.input(Tensor({1, 1, 5, 5})), 2, 2), ConfigError);

  // Ties send the gradient to the first row-major maximum.
  Tensor gr = grad_of(Tensor({1, 1, 2, 2}, 1.0), [](Graph&, Var x) { return sum(max_pool2d(x, 2, 2)); });
  CHECK(gr == Tensor({1, 1, 2, 2}, {1, 0, 0, 0}));
}

TEST_CASE("global_avg_pool") {
  Graph g;
  CHECK(global_avg_pool(g.input(Tensor({1, 1, 2, 2}, {1, 2, 3, 4}))).value()[0] == 2.5);
  CHECK(global_avg_pool(g.input(Tensor({1, 1, 3, 3}, 0.25))).value()[0] == 0.25);
  Rng rng(7);
  Tensor x = oracle::random_tensor({2, 3, 5, 4}, rng);
  Tensor y = global_avg_pool(g.input(x)).value();
  CHECK(y.shape() == Shape{2, 3});
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t c = 0; c < 3; ++c) {
      double s = 0;
      for (std::size_t i = 0; i < 5; ++i)
        for (std::size_t j = 0; j < 4; ++j) s += x.at(n, c, i, j);
      CHECK(std::abs(y[n * 3 + c] - s / 20) < 1e-12);
    }
}

TEST_CASE("dense") {
  Graph g;
  Tensor x({1, 2}, {2, 3});
  CHECK(dense(g.input(x), g.input(Tensor({1, 2}, {1, 1})), g.input(Tensor({1}, 0.0))).value()[0] == 5.0);
  CHECK(dense(g.input(x), g.input(Tensor({2, 2}, {1, 0, 0, 1})), g.input(Tensor({2}, 0.0))).value() == x);
  Rng rng(8);
  Tensor a = oracle::random_tensor({3, 5}, rng), w = oracle::random_tensor({4, 5}, rng),
         b = oracle::random_tensor({4}, rng);
  CHECK(oracle::max_abs_diff(dense(g.input(a), g.input(w), g.input(b)).value(),
                             oracle::dense(a, w, b)) < 1e-12);
  CHECK_THROWS_AS(dense(g.input(a), g.input(Tensor({4, 6})), g.input(b)), ShapeError);
}

TEST_CASE("sigmoid") {
  Graph g;
  CHECK(sigmoid(g.input(Tensor({1}, 0.0))).value()[0] == 0.5);
  Rng rng(9);
  Tensor x = oracle::random_tensor({20}, rng, -30, 30);
  Tensor neg = x;
  for (double& v : neg.values()) v = -v;
  Tensor p = sigmoid(g.input(x)).value(), q = sigmoid(g.input(neg)).value();
  for (std::size_t i = 0; i < 20; ++i) CHECK(std::abs(p[i] - (1 - q[i])) < 1e-15);
  Tensor big = sigmoid(g.input(Tensor({2}, {800.0, -800.0}))).value();
  CHECK(big[0] < 1.0);
  CHECK(big[1] > 0.0);
  CHECK(grad_of(Tensor({1}, 0.0), [](Graph&, Var v) { return sum(sigmoid(v)); })[0] == 0.25);
}

TEST_CASE("dropout") {
  Rng rng(10);
  Tensor x = oracle::random_tensor({1000}, rng);
  Graph g;
  CHECK(dropout(g.input(x), 0.0, true, rng).value() == x);
  CHECK(dropout(g.input(x), 0.9, false, rng).value() == x);
  CHECK_THROWS_AS(dropout(g.input(x), 1.0, true, rng), ConfigError);
  CHECK_THROWS_AS(dropout(g.input(x), -0.1, true, rng), ConfigError);

  Tensor ones({100000}, 1.0);
  Tensor y = dropout(g.input(ones), 0.5, true, rng).value();
  std::size_t kept = 0;
  for (double v : y.values()) {
    if (v != 0.0) {
      ++kept;
      CHECK(v == 2.0);
    }
  }
  CHECK(std::abs(double(kept) / 1e5 - 0.5) < 0.01);
}

TEST_CASE("backward examples") {
  Rng rng(11);
  Tensor x = oracle::random_tensor({3, 4}, rng);
  CHECK(grad_of(x, [](Graph&, Var v) { return sum(v); }) == Tensor({3, 4}, 1.0));
  Tensor g2 = grad_of(x, [](Graph&, Var v) { return sum(mul(v, v)); });
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(g2[i] == 2 * x[i]);

  // Fan-out accumulates.
  Tensor g3 = grad_of(x, [](Graph&, Var v) { return sum(add(v, scale(v, 3.0))); });
  CHECK(g3 == Tensor({3, 4}, 4.0));

  Graph g;
  CHECK_THROWS_AS(g.backward(g.input(x)), ShapeError);
}

TEST_CASE("finite_diff_grad") {
  Rng rng(12);
  Tensor x = oracle::random_tensor({5}, rng);
  Tensor fd = finite_diff_grad([](const Tensor& t) {
    double s = 0;
    for (double v : t.values()) s += v;
    return s;
  }, x, 1e-3);
  for (double v : fd.values()) CHECK(std::abs(v - 1.0) < 1e-9);
  Tensor sq = finite_diff_grad([](const Tensor& t) { return t[0] * t[0]; }, Tensor({1}, 3.0), 1e-3);
  CHECK(std::abs(sq[0] - 6.0) < 1e-6);
}

TEST_CASE("backward agrees with finite differences on a small network") {
  Rng rng(13);
  Tensor x = oracle::random_tensor({2, 2, 6, 6}, rng);
  ConvLayer c1 = make_conv(2, 3, 3, 1, 1, rng);
  ConvLayer c2 = make_conv(3, 2, 3, 1, 0, rng);
  DenseLayer d = make_dense(2, 3, rng);
  auto net = [&](Graph& g, Var in) {
    Var h = relu(conv2d(in, c1));
    h = max_pool2d(h, 2, 2);
    h = conv2d(h, c2);
    return sum(sigmoid(dense(global_avg_pool(h), d)));
  };
  Tensor analytic = grad_of(x, net);
  Tensor numeric = finite_diff_grad([&](const Tensor& t) { return value_of(t, net); }, x, 1e-5);
  CHECK(relative_error(analytic, numeric) < 1e-4);

  // Parameter gradients too.
  c1.kernel.zero_grad();
  Graph g;
  g.backward(net(g, g.input(x)));
  Tensor kgrad(c1.kernel.shape(), std::vector<double>(c1.kernel.grad().begin(), c1.kernel.grad().end()));
  Tensor saved = c1.kernel;
  Tensor knum = finite_diff_grad([&](const Tensor& k) {
    std::copy(k.values().begin(), k.values().end(), c1.kernel.values().begin());
    double v = value_of(x, net);
    std::copy(saved.values().begin(), saved.values().end(), c1.kernel.values().begin());
    return v;
  }, saved, 1e-5);
  CHECK(relative_error(kgrad, knum) < 1e-4);
}

TEST_CASE("replay is bit-identical") {
  auto run = [] {
    Rng rng(14);
    Tensor x = oracle::random_tensor({2, 1, 8, 8}, rng);
    ConvLayer c = make_conv(1, 2, 3, 1, 1, rng);
    Graph g;
    Var y = sum(dropout(relu(conv2d(g.input(x), c)), 0.3, true, rng));
    g.backward(y);
    return std::make_pair(y.value()[0], std::vector<double>(c.kernel.grad().begin(), c.kernel.grad().end()));
  };
  CHECK(run() == run());
}

TEST_CASE("resize_bilinear matches oracle") {
  Rng rng(15);
  Tensor x = oracle::random_tensor({2, 3, 3, 4}, rng);
  Graph g;
  CHECK(oracle::max_abs_diff(resize_bilinear(x, 7, 5), oracle::resize_bilinear(x, 7, 5)) < 1e-12);
  CHECK(oracle::max_abs_diff(resize_bilinear(x, 2, 2), oracle::resize_bilinear(x, 2, 2)) < 1e-12);
  CHECK(resize_bilinear(g.input(x), 3, 4).value() == x);
}
