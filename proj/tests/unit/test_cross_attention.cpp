#include "doctest.h"

#include "can/cross_attention.hpp"
#include "can/errors.hpp"
#include "can/gradcheck.hpp"
#include "can/losses.hpp"
#include "oracles.hpp"

using namespace can;

namespace {

ModelConfig small_config(FusionMode mode = FusionMode::hadamard) {
  ModelConfig c;
  c.num_labels = 3;
  c.backbone_a.widths = {3, 4};
  c.backbone_b.widths = {3, 5};
  c.fusion = mode;
  c.dropout = 0.0;
  return c;
}

}  // namespace

TEST_CASE("fusion mode names") {
  CHECK(parse_fusion_mode("hadamard") == FusionMode::hadamard);
  CHECK(parse_fusion_mode("add") == FusionMode::add);
  CHECK(parse_fusion_mode("max") == FusionMode::max);
  CHECK(to_string(FusionMode::max) == "max");
  CHECK_THROWS_AS(parse_fusion_mode("outer"), ConfigError);
}

TEST_CASE("transition") {
  Graph g;
  Rng rng(1);
  Tensor x = oracle::random_tensor({2, 2, 3, 3}, rng, 0, 1);
  ConvLayer id{Tensor({2, 2, 1, 1}, {1, 0, 0, 1}), Tensor({2}, 0.0), 1, 0};
  CHECK(transition(g.input(x), id).value() == x);

  ConvLayer avg{Tensor({1, 2, 1, 1}, {0.5, 0.5}), Tensor({1}, 0.0), 1, 0};
  Tensor y = transition(g.input(x), avg).value();
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j)
      CHECK(y.at(1, 0, i, j) == 0.5 * x.at(1, 0, i, j) + 0.5 * x.at(1, 1, i, j));

  ConvLayer r = make_conv(2, 4, 1, 1, 0, rng);
  CHECK(oracle::max_abs_diff(transition(g.input(x), r).value(),
                             oracle::conv2d(x, r.kernel, r.bias, 1, 0)) < 1e-12);
  ConvLayer wrong = make_conv(3, 4, 1, 1, 0, rng);
  CHECK_THROWS_AS(transition(g.input(x), wrong), ShapeError);
}

TEST_CASE("fuse") {
  Graph g;
  Rng rng(2);
  Tensor a = oracle::random_tensor({1, 2, 3, 3}, rng), b = oracle::random_tensor({1, 2, 3, 3}, rng);
  CHECK(fuse(g.input(a), g.input(Tensor(a.shape(), 1.0)), FusionMode::hadamard).value() == a);
  Tensor bz = b;
  bz[4] = 0.0;
  CHECK(fuse(g.input(a), g.input(bz), FusionMode::hadamard).value()[4] == 0.0);
  CHECK(fuse(g.input(a), g.input(b), FusionMode::hadamard).value() ==
        fuse(g.input(b), g.input(a), FusionMode::hadamard).value());
  CHECK(fuse(g.input(Tensor({2}, {1, 2})), g.input(Tensor({2}, {3, 4})), FusionMode::add).value() ==
        Tensor({2}, {4, 6}));
  CHECK(fuse(g.input(Tensor({2}, {1, 5})), g.input(Tensor({2}, {3, 4})), FusionMode::max).value() ==
        Tensor({2}, {3, 5}));
  CHECK(fuse(g.input(a), g.input(a), FusionMode::max).value() == a);
  Tensor twice = a;
  for (double& v : twice.values()) v *= 2;
  CHECK(fuse(g.input(a), g.input(a), FusionMode::add).value() == twice);
  CHECK_THROWS_AS(fuse(g.input(a), g.input(Tensor({1, 2, 3, 2})), FusionMode::add), ShapeError);
}

TEST_CASE("hadamard gradient is modulated by the other branch") {
  Rng rng(3);
  Tensor a = oracle::random_tensor({1, 1, 2, 2}, rng), b = oracle::random_tensor({1, 1, 2, 2}, rng);
  a.set_requires_grad(true);
  b.set_requires_grad(true);
  Graph g;
  g.backward(sum(fuse(g.param(a), g.param(b), FusionMode::hadamard)));
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(a.grad()[i] == b[i]);
    CHECK(b.grad()[i] == a[i]);
  }
}

TEST_CASE("assemble") {
  Graph g;
  Tensor ca({1, 1, 2, 2}, 1.0), fa({1, 1, 2, 2}, 2.0), fb({1, 1, 2, 2}, 3.0);
  Tensor y = assemble(g.input(ca), g.input(fa), g.input(fb), true).value();
  CHECK(y.shape() == Shape{1, 3, 2, 2});
  for (std::size_t c = 0; c < 3; ++c) CHECK(y.at(0, c, 1, 1) == double(c + 1));
  CHECK(assemble(g.input(ca), g.input(fa), g.input(fb), false).value() == ca);
  CHECK_THROWS_AS(assemble(g.input(ca), g.input(Tensor({1, 1, 2, 3})), g.input(fb), true), ShapeError);
}

TEST_CASE("model shapes and channel counts") {
  ModelConfig c;
  c.num_labels = 5;
  CanModel m = make_model(c, 1, 2, 3);
  CHECK(m.tran_n() == 24);
  CHECK(m.transition_a.out_channels() == 24);
  CHECK(m.transition_b.out_channels() == 24);
  CHECK(m.classifier.in_dim() == 72);
  CHECK(m.classifier.out_dim() == 5);
  c.concat_all = false;
  CHECK(make_model(c, 1, 2, 3).classifier.in_dim() == 24);

  ModelConfig t = small_config();
  t.backbone_a.widths = {4, 8};
  t.backbone_b.widths = {4, 8};
  CHECK(make_model(t, 1, 2, 3).feature_channels() == 24);

  Graph g;
  Rng rng(4);
  CanModel s = make_model(small_config(), 1, 2, 3);
  ForwardResult r = can_forward(g, s, oracle::random_tensor({2, 1, 16, 16}, rng, 0, 1), false, rng);
  CHECK(r.probs.shape() == Shape{2, 3});
  for (double p : r.probs.value().values()) {
    CHECK(p > 0.0);
    CHECK(p < 1.0);
  }

  ModelConfig five = small_config();
  five.num_labels = 5;
  CanModel m5 = make_model(five, 1, 2, 3);
  Graph g5;
  CHECK(can_forward(g5, m5, Tensor({2, 1, 16, 16}, 0.3), false, rng).probs.shape() == Shape{2, 5});
}

TEST_CASE("config validation") {
  ModelConfig c = small_config();
  c.backbone_b.widths = {3, 4, 5};
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = small_config();
  c.backbone_b.pool_last = false;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("pool_last controls the final grid") {
  ModelConfig c = small_config();
  CanModel pooled = make_model(c, 1, 2, 3);
  CHECK(backbone_output_hw(pooled.backbone_a, 16, 16) == std::pair<std::size_t, std::size_t>{4, 4});
  c.backbone_a.pool_last = c.backbone_b.pool_last = false;
  CanModel fine = make_model(c, 1, 2, 3);
  CHECK(backbone_output_hw(fine.backbone_a, 16, 16) == std::pair<std::size_t, std::size_t>{8, 8});
  CHECK(fine.parameter_count() == pooled.parameter_count());
  Graph g;
  Rng rng(9);
  CHECK(backbone_forward(fine.backbone_a, g.input(Tensor({1, 1, 16, 16}, 0.5))).shape() ==
        Shape{1, 4, 8, 8});
}

TEST_CASE("zero classifier gives one half") {
  CanModel m = make_model(small_config(), 1, 2, 3);
  for (double& v : m.classifier.weight.values()) v = 0;
  for (double& v : m.classifier.bias.values()) v = 0;
  Graph g;
  Rng rng(5);
  ForwardResult r = can_forward(g, m, oracle::random_tensor({3, 1, 16, 16}, rng), false, rng);
  for (double p : r.probs.value().values()) CHECK(p == 0.5);
}

TEST_CASE("hadamard with an all-ones branch reduces to the single path") {
  ModelConfig c = small_config();
  c.concat_all = false;
  CanModel m = make_model(c, 1, 2, 3);
  // Force transition_b to emit exactly 1 everywhere.
  for (double& v : m.transition_b.kernel.values()) v = 0;
  for (double& v : m.transition_b.bias.values()) v = 1;
  Rng rng(6);
  Tensor x = oracle::random_tensor({2, 1, 16, 16}, rng, 0, 1);

  Graph g;
  ForwardResult r = can_forward(g, m, x, false, rng);

  Graph h;
  Var fa = transition(relu(backbone_forward(m.backbone_a, h.input(x))), m.transition_a);
  Var single = sigmoid(dense(global_avg_pool(fa), m.classifier));
  CHECK(r.probs.value() == single.value());
}

TEST_CASE("parameter count parity across fusion modes") {
  const std::size_t had = make_model(small_config(FusionMode::hadamard), 1, 2, 3).parameter_count();
  CHECK(make_model(small_config(FusionMode::add), 1, 2, 3).parameter_count() == had);
  CHECK(make_model(small_config(FusionMode::max), 1, 2, 3).parameter_count() == had);
  ModelConfig d;
  d.num_labels = 4;
  const std::size_t dh = make_model(d, 1, 2, 3).parameter_count();
  d.fusion = FusionMode::max;
  CHECK(make_model(d, 1, 2, 3).parameter_count() == dh);
}

TEST_CASE("end-to-end gradient check") {
  ModelConfig c = small_config();
  CanModel m = make_model(c, 11, 12, 13);
  Rng rng(7);
  Tensor x = oracle::random_tensor({2, 1, 8, 8}, rng, 0, 1);
  Tensor y({2, 3}, {1, 0, 1, 0, 0, 1});
  LossConfig lc;
  lc.w_pos = {0.6, 0.7, 0.8};
  lc.w_neg = {0.4, 0.3, 0.2};
  lc.alpha = 0.5;
  auto loss = [&] {
    Graph g;
    Rng r(1);
    ForwardResult f = can_forward(g, m, x, false, r);
    Var l = combined_loss(f.probs, y, f.raw_a, f.raw_b, lc);
    return std::make_pair(l.value()[0], 0);
  };
  {
    Graph g;
    Rng r(1);
    for (auto& [name, t] : m.named_parameters()) t->zero_grad();
    ForwardResult f = can_forward(g, m, x, false, r);
    g.backward(combined_loss(f.probs, y, f.raw_a, f.raw_b, lc));
  }
  for (auto& [name, t] : m.named_parameters()) {
    Tensor analytic(t->shape(), std::vector<double>(t->grad().begin(), t->grad().end()));
    Tensor saved = *t;
    Tensor numeric = finite_diff_grad([&](const Tensor& v) {
      std::copy(v.values().begin(), v.values().end(), t->values().begin());
      double out = loss().first;
      std::copy(saved.values().begin(), saved.values().end(), t->values().begin());
      return out;
    }, saved, 1e-6);
    INFO(name);
    CHECK(relative_error(analytic, numeric, 1e-8) < 1e-4);
  }
}
