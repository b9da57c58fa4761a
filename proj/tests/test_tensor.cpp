// Copyright 2026 the aesnet authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <numbers>

#include "aesnet/adadelta.hpp"
#include "aesnet/common.hpp"
#include "aesnet/graph.hpp"
#include "aesnet/tensor.hpp"

using namespace aesnet;

namespace {

ParamPtr make_param(const std::string& name, Extents shape, std::vector<double> data) {
  return std::make_shared<Parameter>(name, Tensor(std::move(shape), std::move(data)));
}

ParamPtr random_param(const std::string& name, Extents shape, Rng& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-scale, scale);
  return std::make_shared<Parameter>(name, std::move(t));
}

}  // namespace

TEST_CASE("conv2d forward matches hand-computed windows") {
  Graph g;
  NodeId in = g.leaf(Tensor({1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9}));
  NodeId k = g.leaf(Tensor({1, 1, 2, 2}, {0.25, 0.25, 0.25, 0.25}));
  NodeId b = g.leaf(Tensor({1}, {0.0}));
  NodeId out = g.conv2d(in, k, b, 1, 0);
  const Tensor& v = g.value(out);
  REQUIRE(v.shape() == Extents{1, 2, 2});
  CHECK(v[0] == doctest::Approx(3.0));
  CHECK(v[1] == doctest::Approx(4.0));
  CHECK(v[2] == doctest::Approx(6.0));
  CHECK(v[3] == doctest::Approx(7.0));
}

TEST_CASE("conv2d with 1x1 identity kernel is the identity map") {
  Rng rng(7);
  Graph g;
  Tensor img({2, 4, 5});
  for (std::size_t i = 0; i < img.size(); ++i) img[i] = rng.uniform(-2, 2);
  NodeId in = g.leaf(img);
  // Two output channels, each copying one input channel.
  NodeId k = g.leaf(Tensor({2, 2, 1, 1}, {1, 0, 0, 1}));
  NodeId b = g.leaf(Tensor({2}, {0, 0}));
  NodeId out = g.conv2d(in, k, b);
  for (std::size_t i = 0; i < img.size(); ++i) CHECK(g.value(out)[i] == img[i]);
}

TEST_CASE("conv2d with zero kernel yields zero output") {
  Graph g;
  NodeId in = g.leaf(Tensor({1, 4, 4}, std::vector<double>(16, 3.14)));
  NodeId k = g.leaf(Tensor({3, 1, 3, 3}));
  NodeId b = g.leaf(Tensor({3}));
  NodeId out = g.conv2d(in, k, b, 1, 1);
  for (std::size_t i = 0; i < g.value(out).size(); ++i) CHECK(g.value(out)[i] == 0.0);
}

TEST_CASE("conv2d rejects mismatched shapes naming the dimension") {
  Graph g;
  NodeId in = g.leaf(Tensor({2, 4, 4}));
  NodeId k = g.leaf(Tensor({1, 3, 2, 2}));
  NodeId b = g.leaf(Tensor({1}));
  CHECK_THROWS_WITH_AS(g.conv2d(in, k, b), doctest::Contains("channels"),
                       std::invalid_argument);
  NodeId k2 = g.leaf(Tensor({1, 2, 6, 2}));
  CHECK_THROWS_WITH_AS(g.conv2d(in, k2, b), doctest::Contains("height"),
                       std::invalid_argument);
  NodeId k3 = g.leaf(Tensor({1, 2, 2, 2}));
  NodeId b3 = g.leaf(Tensor({4}));
  CHECK_THROWS_WITH_AS(g.conv2d(in, k3, b3), doctest::Contains("bias"), std::invalid_argument);
}

TEST_CASE("maxpool2 forward") {
  SUBCASE("2x2 window") {
    Graph g;
    NodeId in = g.leaf(Tensor({1, 2, 2}, {1, 2, 3, 4}));
    NodeId out = g.maxpool2(in);
    REQUIRE(g.value(out).size() == 1);
    CHECK(g.value(out)[0] == 4.0);
  }
  SUBCASE("4x4 ramp") {
    std::vector<double> ramp(16);
    for (int i = 0; i < 16; ++i) ramp[static_cast<std::size_t>(i)] = i;
    Graph g;
    NodeId out = g.maxpool2(g.leaf(Tensor({1, 4, 4}, ramp)));
    const Tensor& v = g.value(out);
    CHECK(v[0] == 5.0);
    CHECK(v[1] == 7.0);
    CHECK(v[2] == 13.0);
    CHECK(v[3] == 15.0);
  }
  SUBCASE("odd extent rejected") {
    Graph g;
    NodeId in = g.leaf(Tensor({1, 3, 4}));
    CHECK_THROWS_AS(g.maxpool2(in), std::invalid_argument);
  }
}

TEST_CASE("maxpool2 backward routes to the first element on ties") {
  Graph g;
  auto p = make_param("x", {1, 2, 2}, {5, 5, 5, 5});
  NodeId in = g.param(p);
  NodeId pool = g.maxpool2(in);
  // Constant input stays constant through pooling.
  CHECK(g.value(pool)[0] == 5.0);
  NodeId target = g.leaf(Tensor({1}, {0.0}));
  NodeId loss = g.mse_loss(pool, target);
  g.backward(loss);
  // d loss / d pool = 2*5 = 10, concentrated on the window's first element.
  CHECK(p->value.grad()[0] == doctest::Approx(10.0));
  CHECK(p->value.grad()[1] == 0.0);
  CHECK(p->value.grad()[2] == 0.0);
  CHECK(p->value.grad()[3] == 0.0);
}

TEST_CASE("dense affine map") {
  SUBCASE("hand example") {
    Graph g;
    NodeId in = g.leaf(Tensor({2}, {1, 2}));
    NodeId w = g.leaf(Tensor({2, 2}, {1, 1, 0, 1}));
    NodeId b = g.leaf(Tensor({2}, {1, 0}));
    NodeId out = g.dense(in, w, b);
    CHECK(g.value(out)[0] == doctest::Approx(4.0));
    CHECK(g.value(out)[1] == doctest::Approx(2.0));
  }
  SUBCASE("identity weight keeps input") {
    Graph g;
    NodeId in = g.leaf(Tensor({3}, {0.5, -1.5, 2.0}));
    NodeId w = g.leaf(Tensor({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1}));
    NodeId b = g.leaf(Tensor({3}));
    NodeId out = g.dense(in, w, b);
    for (std::size_t i = 0; i < 3; ++i) CHECK(g.value(out)[i] == g.value(in)[i]);
  }
  SUBCASE("zero weight returns bias") {
    Graph g;
    NodeId in = g.leaf(Tensor({4}, {9, 9, 9, 9}));
    NodeId w = g.leaf(Tensor({2, 4}));
    NodeId b = g.leaf(Tensor({2}, {-1, 7}));
    NodeId out = g.dense(in, w, b);
    CHECK(g.value(out)[0] == -1.0);
    CHECK(g.value(out)[1] == 7.0);
  }
  SUBCASE("dimension mismatch rejected") {
    Graph g;
    NodeId in = g.leaf(Tensor({3}));
    NodeId w = g.leaf(Tensor({2, 4}));
    NodeId b = g.leaf(Tensor({2}));
    CHECK_THROWS_WITH_AS(g.dense(in, w, b), doctest::Contains("columns"),
                         std::invalid_argument);
  }
}

TEST_CASE("relu and sigmoid") {
  Graph g;
  NodeId in = g.leaf(Tensor({3}, {-1, 0, 2}));
  NodeId r = g.relu(in);
  CHECK(g.value(r)[0] == 0.0);
  CHECK(g.value(r)[1] == 0.0);
  CHECK(g.value(r)[2] == 2.0);

  NodeId s0 = g.sigmoid(g.leaf(Tensor({1}, {0.0})));
  CHECK(g.value(s0)[0] == doctest::Approx(0.5));
  NodeId s1 = g.sigmoid(g.leaf(Tensor({1}, {std::log(3.0)})));
  CHECK(g.value(s1)[0] == doctest::Approx(0.75));
}

TEST_CASE("mse loss") {
  SUBCASE("zero when equal") {
    Graph g;
    NodeId a = g.leaf(Tensor({3}, {1, 2, 3}));
    NodeId b = g.leaf(Tensor({3}, {1, 2, 3}));
    CHECK(g.scalar(g.mse_loss(a, b)) == 0.0);
  }
  SUBCASE("hand values") {
    Graph g;
    NodeId a = g.leaf(Tensor({2}, {0.5, 0.5}));
    NodeId b = g.leaf(Tensor({2}, {0.0, 1.0}));
    CHECK(g.scalar(g.mse_loss(a, b)) == doctest::Approx(0.25));
    NodeId c = g.leaf(Tensor({1}, {3.0}));
    NodeId d = g.leaf(Tensor({1}, {1.0}));
    CHECK(g.scalar(g.mse_loss(c, d)) == doctest::Approx(4.0));
  }
  SUBCASE("shape mismatch rejected") {
    Graph g;
    NodeId a = g.leaf(Tensor({2}));
    NodeId b = g.leaf(Tensor({3}));
    CHECK_THROWS_AS(g.mse_loss(a, b), std::invalid_argument);
  }
}

TEST_CASE("weighted BCE loss") {
  Graph g;
  NodeId half = g.leaf(Tensor({1}, {0.5}));
  CHECK(g.scalar(g.weighted_bce_loss(half, 1.0, 2.0)) ==
        doctest::Approx(2.0 * std::numbers::ln2).epsilon(1e-12));

  NodeId quarter = g.leaf(Tensor({1}, {0.25}));
  CHECK(g.scalar(g.weighted_bce_loss(quarter, 0.0, 1.0)) ==
        doctest::Approx(-std::log(0.75)).epsilon(1e-12));

  // Probability equal to the label is lossless up to the clamp.
  NodeId one = g.leaf(Tensor({1}, {1.0}));
  CHECK(g.scalar(g.weighted_bce_loss(one, 1.0, 5.0)) < 1e-5);

  CHECK_THROWS_WITH_AS(g.weighted_bce_loss(half, 0.5, 1.0), doctest::Contains("label"),
                       std::invalid_argument);
  CHECK_THROWS_AS(g.weighted_bce_loss(half, 1.0, 0.0), std::invalid_argument);
}

TEST_CASE("adadelta first step matches the hand-evaluated recurrence") {
  auto p = make_param("w", {1}, {0.0});
  Adadelta opt({p});
  CHECK(opt.rho() == 0.95);
  CHECK(opt.eps() == 1e-6);
  p->value.grad()[0] = 1.0;
  opt.step();
  // E[g^2] = 0.05, dx = -sqrt(1e-6 / 0.050001)
  const double expected = -std::sqrt(1e-6 / 0.050001);
  CHECK(p->value[0] == doctest::Approx(expected).epsilon(1e-14));
  CHECK(p->value[0] == doctest::Approx(-0.0044720).epsilon(1e-4));
  CHECK(opt.grad_sq_avg(0)[0] == doctest::Approx(0.05));
  CHECK(opt.update_sq_avg(0)[0] == doctest::Approx(0.05 * expected * expected));
}

TEST_CASE("adadelta zero gradient leaves parameters, decays state") {
  auto p = make_param("w", {2}, {1.0, -2.0});
  Adadelta opt({p});
  p->value.grad()[0] = 0.5;
  p->value.grad()[1] = -0.25;
  opt.step();
  const double x0 = p->value[0], x1 = p->value[1];
  const double eg2 = opt.grad_sq_avg(0)[0];
  const double edx2 = opt.update_sq_avg(0)[0];
  p->value.zero_grad();
  opt.step();
  CHECK(p->value[0] == x0);
  CHECK(p->value[1] == x1);
  CHECK(opt.grad_sq_avg(0)[0] == doctest::Approx(0.95 * eg2).epsilon(1e-15));
  CHECK(opt.update_sq_avg(0)[0] == doctest::Approx(0.95 * edx2).epsilon(1e-15));
}

TEST_CASE("adadelta update opposes the gradient and is deterministic") {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    auto a = random_param("a", {5}, rng);
    auto b = std::make_shared<Parameter>("b", Tensor(a->value.shape(),
                                                     a->value.buffer()));
    Adadelta oa({a}), ob({b});
    std::vector<double> grads(5);
    for (auto& gv : grads) gv = rng.uniform(-3, 3);
    const std::vector<double> before = a->value.buffer();
    for (std::size_t i = 0; i < 5; ++i) {
      a->value.grad()[i] = grads[i];
      b->value.grad()[i] = grads[i];
    }
    oa.step();
    ob.step();
    for (std::size_t i = 0; i < 5; ++i) {
      const double dx = a->value[i] - before[i];
      if (grads[i] != 0.0) CHECK(dx * grads[i] < 0.0);
      CHECK(a->value[i] == b->value[i]);  // bitwise determinism
    }
  }
}

TEST_CASE("adadelta skips frozen parameters") {
  auto p = make_param("w", {1}, {3.0});
  Adadelta opt({p});
  p->frozen = true;
  p->value.grad()[0] = 1.0;
  opt.step();
  CHECK(p->value[0] == 3.0);
  CHECK(opt.grad_sq_avg(0)[0] == 0.0);
}

TEST_CASE("param_count") {
  auto w = make_param("w", {3, 4}, std::vector<double>(12, 0.0));
  auto b = make_param("b", {3}, std::vector<double>(3, 0.0));
  std::vector<ParamPtr> ps = {w, b};
  CHECK(param_count(ps) == 15);
  CHECK(param_count(std::span<const ParamPtr>{}) == 0);
}

TEST_CASE("finite differences: linear graph is exact") {
  Rng rng(3);
  auto w = random_param("w", {4}, rng);
  Graph g;
  NodeId wn = g.param(w);
  NodeId x = g.leaf(Tensor({1, 4}, {0.3, -1.2, 0.9, 2.0}));
  // y = w . x via dense with w as the input and x as the weight matrix.
  NodeId b = g.leaf(Tensor({1}, {0.0}));
  NodeId y = g.dense(wn, x, b);
  CHECK(finite_difference_check(g, y, *w, 1e-5) < 1e-10);
}

TEST_CASE("finite differences: dense+sigmoid+bce toy graph") {
  Rng rng(5);
  auto w = random_param("w", {1, 6}, rng);
  auto b = random_param("b", {1}, rng);
  auto x = random_param("x", {6}, rng);
  Graph g;
  NodeId logit = g.dense(g.param(x), g.param(w), g.param(b));
  NodeId prob = g.sigmoid(logit);
  NodeId loss = g.weighted_bce_loss(prob, 1.0, 1.7);
  CHECK(finite_difference_check(g, loss, *w, 1e-5) < 1e-4);
  CHECK(finite_difference_check(g, loss, *b, 1e-5) < 1e-4);
  CHECK(finite_difference_check(g, loss, *x, 1e-5) < 1e-4);
}

TEST_CASE("finite differences: conv+pool+dense composite") {
  Rng rng(17);
  auto img = random_param("img", {2, 6, 6}, rng);
  auto k = random_param("k", {3, 2, 3, 3}, rng, 0.5);
  auto kb = random_param("kb", {3}, rng, 0.1);
  auto w = random_param("w", {1, 3 * 3 * 3}, rng, 0.5);
  auto wb = random_param("wb", {1}, rng, 0.1);
  Graph g;
  NodeId conv = g.conv2d(g.param(img), g.param(k), g.param(kb), 1, 1);
  NodeId act = g.relu(conv);
  NodeId pool = g.maxpool2(act);
  NodeId out = g.dense(pool, g.param(w), g.param(wb));
  NodeId target = g.leaf(Tensor({1}, {0.25}));
  NodeId loss = g.mse_loss(out, target);
  REQUIRE(g.min_kink_distance() > 1e-3);
  CHECK(finite_difference_check(g, loss, *k, 1e-5) < 1e-4);
  CHECK(finite_difference_check(g, loss, *kb, 1e-5) < 1e-4);
  CHECK(finite_difference_check(g, loss, *img, 1e-5) < 1e-4);
  CHECK(finite_difference_check(g, loss, *w, 1e-5) < 1e-4);
}

TEST_CASE("finite differences require a scalar output and positive h") {
  Rng rng(2);
  auto x = random_param("x", {3}, rng);
  Graph g;
  NodeId r = g.relu(g.param(x));
  CHECK_THROWS_AS(finite_difference_check(g, r, *x, 1e-5), std::invalid_argument);
  NodeId t = g.leaf(Tensor({3}));
  NodeId loss = g.mse_loss(r, t);
  CHECK_THROWS_AS(finite_difference_check(g, loss, *x, 0.0), std::invalid_argument);
}

TEST_CASE("backward of a weighted sum of losses is the weighted sum of backwards") {
  Rng rng(23);
  auto w = random_param("w", {2, 3}, rng);
  auto b = random_param("b", {2}, rng);

  auto grads_of = [&](double lk, double lc) {
    Graph g;
    NodeId out = g.dense(g.leaf(Tensor({3}, {0.4, -0.2, 1.0})), g.param(w), g.param(b));
    NodeId l1 = g.mse_loss(out, g.leaf(Tensor({2}, {0.1, 0.7})));
    NodeId prob = g.sigmoid(g.dense(out, g.leaf(Tensor({1, 2}, {0.3, -0.8})),
                                    g.leaf(Tensor({1}, {0.05}))));
    NodeId l2 = g.weighted_bce_loss(prob, 1.0, 1.0);
    NodeId total = g.add(g.scale(l1, lk), g.scale(l2, lc));
    w->value.zero_grad();
    g.backward(total);
    return std::vector<double>(w->value.grad(), w->value.grad() + w->value.size());
  };

  auto gk = grads_of(1.0, 0.0);
  auto gc = grads_of(0.0, 1.0);
  auto gboth = grads_of(0.7, 1.3);
  for (std::size_t i = 0; i < gk.size(); ++i) {
    CHECK(gboth[i] == doctest::Approx(0.7 * gk[i] + 1.3 * gc[i]).epsilon(1e-12));
  }
}

TEST_CASE("graph replay: set_leaf + refresh recomputes downstream values") {
  Graph g;
  NodeId x = g.leaf(Tensor({2}, {1.0, 2.0}));
  NodeId w = g.leaf(Tensor({1, 2}, {2.0, 1.0}));
  NodeId b = g.leaf(Tensor({1}, {0.0}));
  NodeId y = g.dense(x, w, b);
  CHECK(g.scalar(y) == doctest::Approx(4.0));
  const double nv[2] = {3.0, -1.0};
  g.set_leaf(x, nv);
  g.refresh();
  CHECK(g.scalar(y) == doctest::Approx(5.0));
}

TEST_CASE("frozen parameters receive no gradient but pass gradients through") {
  Rng rng(31);
  auto w1 = random_param("w1", {3, 3}, rng);
  auto b1 = random_param("b1", {3}, rng);
  auto w2 = random_param("w2", {1, 3}, rng);
  auto b2 = random_param("b2", {1}, rng);
  Graph g;
  NodeId h = g.relu(g.dense(g.leaf(Tensor({3}, {1.0, -0.5, 0.25})), g.param(w1), g.param(b1)));
  NodeId out = g.dense(h, g.param(w2), g.param(b2));
  NodeId loss = g.mse_loss(out, g.leaf(Tensor({1}, {2.0})));

  // Downstream layer frozen: upstream still gets its gradient.
  w2->frozen = true;
  b2->frozen = true;
  g.refresh();
  g.backward(loss);
  bool any = false;
  for (std::size_t i = 0; i < w1->value.size(); ++i) any = any || w1->value.grad()[i] != 0.0;
  CHECK(any);
  for (std::size_t i = 0; i < w2->value.size(); ++i) CHECK(w2->value.grad()[i] == 0.0);
}
