#include <cmath>
#include <limits>

#include "adld/numerics.hpp"
#include "doctest.h"
#include "support/gradcheck.hpp"

using namespace adld;
using adld::testing::gradcheck;

namespace {

Tensor random_tensor(Rng& rng, std::size_t r, std::size_t c, double lo = -2.0,
                     double hi = 2.0) {
  Tensor t({r, c});
  for (auto& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

// Weighted sum so every output element gets a distinct upstream gradient.
Var weighted(Tape& tape, Var y, std::uint64_t seed) {
  Rng rng(seed);
  Var w = tape.constant(random_tensor(rng, y.rows(), y.cols()));
  return sum(y * w);
}

}  // namespace

TEST_CASE("tensor shape contract") {
  CHECK_THROWS_AS(Tensor({2, 3}, std::vector<double>(5)), ShapeError);
  Tensor t({2, 3}, 1.5);
  CHECK(t.rows() == 2);
  CHECK(t.cols() == 3);
  CHECK(shape_product(t.shape()) == t.size());
}

TEST_CASE("tape op values") {
  Tape tape;
  CHECK(softplus(tape.leaf(Tensor::scalar(0.0))).value().item() ==
        doctest::Approx(std::log(2.0)).epsilon(1e-12));

  Tensor eye = Tensor::matrix(3, 3, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  Tensor v = Tensor::matrix(3, 1, {0.3, -1.2, 4.0});
  CHECK(matmul(tape.leaf(eye), tape.leaf(v)).value() == v);

  Var x = tape.leaf(Tensor::matrix(1, 3, {1, 2, 3}));
  CHECK(slice(x, 1, 3).value() == Tensor::matrix(1, 2, {2, 3}));
  CHECK(concat({x, x}).value().cols() == 6);
  CHECK(mean(x).value().item() == doctest::Approx(2.0));
}

TEST_CASE("tanh derivative at 0.5 matches central difference") {
  const double h = 1e-5;
  const double fd = (std::tanh(0.5 + h) - std::tanh(0.5 - h)) / (2 * h);
  Tape tape;
  Var x = tape.leaf(Tensor::scalar(0.5));
  const double g = tape.backward(tanh(x))[x].item();
  CHECK(g == doctest::Approx(fd).epsilon(1e-8));
  CHECK(g == doctest::Approx(0.786448).epsilon(1e-6));
}

TEST_CASE("tape errors") {
  Tape tape;
  Var a = tape.leaf(Tensor({2, 3}));
  Var b = tape.leaf(Tensor({3, 2}));
  CHECK_THROWS_AS(a + b, ShapeError);
  CHECK_THROWS_AS(log(tape.leaf(Tensor::scalar(-1.0))), DomainError);
  CHECK_THROWS_AS(log(tape.leaf(Tensor::scalar(0.0))), DomainError);
  CHECK_THROWS_AS(exp(tape.leaf(Tensor::scalar(1000.0))), DomainError);
  CHECK_THROWS_AS(tape.backward(a), ContractError);
}

TEST_CASE("backward on simple roots") {
  Tape tape;
  Var x = tape.leaf(Tensor::matrix(1, 2, {1, 2}));
  auto g = tape.backward(sum(square(x)));
  CHECK(g[x] == Tensor::matrix(1, 2, {2, 4}));

  Tape t2;
  Var y = t2.leaf(Tensor::matrix(1, 2, {1, 2}));
  Var c = t2.constant(Tensor::scalar(3.0));
  auto g2 = t2.backward(c);
  CHECK(g2[y] == Tensor::matrix(1, 2, {0, 0}));
}

TEST_CASE("stop_gradient blocks its branch") {
  Tape tape;
  Tensor v = Tensor::matrix(1, 3, {1, 2, 3});
  Var x = tape.leaf(v);
  CHECK(stop_gradient(x).value() == v);

  Tape t2;
  Var s = t2.leaf(Tensor::scalar(3.0));
  CHECK(t2.backward(s * stop_gradient(s))[s].item() == 3.0);

  Tape t3;
  Var q = t3.leaf(Tensor::scalar(3.0));
  CHECK(t3.backward(sum(stop_gradient(square(q))))[q].item() == 0.0);
}

TEST_CASE("every differentiable op passes finite differences on 100 inputs") {
  using Fn = std::function<Var(Tape&, Var)>;
  struct Case {
    const char* name;
    Fn f;
    double lo, hi;
  };
  Rng wrng(7);
  Tensor mat = random_tensor(wrng, 3, 4);
  Tensor other = random_tensor(wrng, 2, 3);
  Tensor bias = Tensor(std::vector<std::size_t>{4});
  for (auto& b : bias.values()) b = wrng.uniform(-1, 1);
  const std::vector<Case> cases = {
      {"add", [&](Tape& t, Var x) { return weighted(t, x + t.constant(other), 1); }, -2, 2},
      {"sub", [&](Tape& t, Var x) { return weighted(t, t.constant(other) - x, 2); }, -2, 2},
      {"mul", [&](Tape& t, Var x) { return weighted(t, x * x, 3); }, -2, 2},
      {"neg", [&](Tape& t, Var x) { return weighted(t, -x, 4); }, -2, 2},
      {"scale", [&](Tape& t, Var x) { return weighted(t, 2.5 * x + 1.0, 5); }, -2, 2},
      {"matmul", [&](Tape& t, Var x) { return weighted(t, matmul(x, t.constant(mat)), 6); }, -2, 2},
      {"matmul_rhs", [&](Tape& t, Var x) {
         return weighted(t, matmul(t.constant(Tensor::matrix(1, 2, {0.4, -1.1})), x), 16);
       }, -2, 2},
      {"linear", [&](Tape& t, Var x) {
         Tensor w({4, 3});
         for (std::size_t i = 0; i < w.size(); ++i) w[i] = 0.1 * static_cast<double>(i) - 0.5;
         return weighted(t, linear(x, t.constant(w), t.constant(bias)), 7);
       }, -2, 2},
      {"add_row", [&](Tape& t, Var x) { return weighted(t, add_row(t.constant(other), matmul(t.constant(Tensor({1, 2}, 1.0)), x)), 8); }, -2, 2},
      {"tanh", [&](Tape& t, Var x) { return weighted(t, tanh(x), 9); }, -2, 2},
      {"sigmoid", [&](Tape& t, Var x) { return weighted(t, sigmoid(x), 10); }, -4, 4},
      {"relu", [&](Tape& t, Var x) { return weighted(t, relu(x), 11); }, -2, 2},
      {"exp", [&](Tape& t, Var x) { return weighted(t, exp(x), 12); }, -2, 2},
      {"log", [&](Tape& t, Var x) { return weighted(t, log(x), 13); }, 0.2, 3},
      {"softplus", [&](Tape& t, Var x) { return weighted(t, softplus(x), 14); }, -4, 4},
      {"square", [&](Tape& t, Var x) { return weighted(t, square(x), 15); }, -2, 2},
      {"sum", [&](Tape& t, Var x) { return square(sum(x)); }, -2, 2},
      {"mean", [&](Tape& t, Var x) { return square(mean(x)); }, -2, 2},
      {"sum_cols", [&](Tape& t, Var x) { return weighted(t, square(sum_cols(x)), 17); }, -2, 2},
      {"concat", [&](Tape& t, Var x) { return weighted(t, concat({x, square(x), t.constant(other)}), 18); }, -2, 2},
      {"slice", [&](Tape& t, Var x) { return weighted(t, slice(square(x), 1, 3), 19); }, -2, 2},
      {"clamp", [&](Tape& t, Var x) { return weighted(t, clamp(x, -1.0, 1.0), 20); }, -2, 2},
  };
  Rng rng(123);
  for (const auto& c : cases) {
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
      Tensor x = random_tensor(rng, 2, 3, c.lo, c.hi);
      // Keep inputs off the kinks of relu and clamp.
      for (auto& v : x.values()) {
        for (double kink : {0.0, -1.0, 1.0}) {
          if (std::abs(v - kink) < 1e-3) v = kink + 2e-3;
        }
      }
      worst = std::max(worst, gradcheck(c.f, x));
    }
    INFO(c.name);
    CHECK(worst < 1e-4);
  }
}

TEST_CASE("two-layer mlp gradients match finite differences") {
  Rng rng(11);
  Mlp net(3, {5}, 2, rng, Activation::kTanh);
  Tensor x = random_tensor(rng, 4, 3);
  Tensor y = random_tensor(rng, 4, 2);
  ParamRefs params;
  net.collect("net.", params);
  auto loss_value = [&] {
    Tape t;
    return mean(square(net.forward(t, t.constant(x), Grad::kTrack) - t.constant(y)))
        .value()
        .item();
  };
  Tape tape;
  Var loss = mean(square(net.forward(tape, tape.constant(x), Grad::kTrack) - tape.constant(y)));
  auto grads = tape.backward(loss);
  for (const auto& p : params) {
    Tensor fd = adld::testing::numeric_grad(loss_value, *p.tensor);
    INFO(p.name);
    CHECK(adld::testing::max_rel_error(grads.of(*p.tensor), fd) < 1e-4);
  }
}

TEST_CASE("frozen parameters receive no gradient") {
  Rng rng(3);
  Dense d(2, 2, rng);
  Tape tape;
  Var out = d.forward(tape, tape.leaf(Tensor::matrix(1, 2, {1, 2})), Grad::kFrozen);
  auto g = tape.backward(sum(out));
  CHECK(adld::testing::max_abs(g.of(d.weight)) == 0.0);
}

TEST_CASE("gru forward") {
  Rng rng(5);
  Gru gru(2, 3, rng);
  Tape tape;
  Var h0 = tape.constant(Tensor({1, 3}));
  CHECK(gru.forward(tape, {}, h0, Grad::kFrozen).empty());

  Gru zero = Gru::zeros(2, 1);
  Tape t2;
  std::vector<Var> xs(3, t2.constant(Tensor({1, 2})));
  auto hs = zero.forward(t2, xs, t2.constant(Tensor::scalar(1.0)), Grad::kFrozen);
  REQUIRE(hs.size() == 3);
  CHECK(hs[0].value().item() == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(hs[1].value().item() == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(hs[2].value().item() == doctest::Approx(0.125).epsilon(1e-12));

  Tape t3;
  Var x1 = t3.constant(Tensor::matrix(1, 2, {0.3, -0.7}));
  Var x2 = t3.constant(Tensor::matrix(1, 2, {1.1, 0.2}));
  Var h = t3.constant(Tensor::matrix(1, 3, {0.1, 0.2, -0.3}));
  std::vector<Var> seq = {x1, x2};
  auto unrolled = gru.forward(t3, seq, h, Grad::kFrozen);
  Var stepped = gru.step(t3, x2, gru.step(t3, x1, h, Grad::kFrozen), Grad::kFrozen);
  CHECK(unrolled.back().value() == stepped.value());

  CHECK_THROWS_AS(gru.step(t3, x1, t3.constant(Tensor({1, 2})), Grad::kFrozen), ShapeError);
}

TEST_CASE("gru single step matches hand-evaluated gates") {
  // Scalar cell with every weight 0.5 and every bias 0.1.
  Gru g = Gru::zeros(1, 1);
  ParamRefs params;
  g.collect("", params);
  for (auto& p : params) {
    for (auto& v : p.tensor->values()) v = p.name.ends_with("weight") ? 0.5 : 0.1;
  }
  const double x = 0.8, h = -0.4;
  auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
  const double r = sig(0.5 * x + 0.1 + 0.5 * h + 0.1);
  const double z = sig(0.5 * x + 0.1 + 0.5 * h + 0.1);
  const double n = std::tanh(0.5 * x + 0.1 + r * (0.5 * h + 0.1));
  const double expected = (1 - z) * n + z * h;
  Tape tape;
  Var out = g.step(tape, tape.constant(Tensor::scalar(x)), tape.constant(Tensor::scalar(h)),
                   Grad::kFrozen);
  CHECK(std::abs(out.value().item() - expected) < 1e-10);
}

TEST_CASE("gru gradients match finite differences") {
  Rng rng(21);
  Gru gru(2, 3, rng);
  Tensor xs = random_tensor(rng, 3, 2);
  ParamRefs params;
  gru.collect("gru.", params);
  auto build = [&](Tape& t, Grad g) {
    std::vector<Var> seq;
    for (std::size_t i = 0; i < 3; ++i) seq.push_back(t.constant(Tensor::row(xs.row_span(i))));
    auto hs = gru.forward(t, seq, t.constant(Tensor({1, 3})), g);
    return sum(square(hs.back()));
  };
  auto loss_value = [&] {
    Tape t;
    return build(t, Grad::kTrack).value().item();
  };
  Tape tape;
  auto grads = tape.backward(build(tape, Grad::kTrack));
  for (const auto& p : params) {
    INFO(p.name);
    CHECK(adld::testing::max_rel_error(grads.of(*p.tensor),
                                       adld::testing::numeric_grad(loss_value, *p.tensor)) < 1e-4);
  }
}

TEST_CASE("adam") {
  Tensor p = Tensor::matrix(1, 2, {1.0, -2.0});
  ParamRefs params = {{"p", &p}};
  AdamState state;
  std::vector<Tensor> zero = {Tensor({1, 2})};
  adam_step(params, zero, state, 1e-3);
  CHECK(p == Tensor::matrix(1, 2, {1.0, -2.0}));

  Tensor q = Tensor::scalar(0.0);
  ParamRefs qp = {{"q", &q}};
  AdamState qs;
  std::vector<Tensor> one = {Tensor::scalar(1.0)};
  adam_step(qp, one, qs, 1e-3);
  // m_hat = 1, v_hat = 1 after bias correction.
  CHECK(std::abs(q.item() - (-1e-3 / (1.0 + 1e-8))) < 1e-10);
  const double m1 = qs.m["q"].item();
  std::vector<Tensor> none = {Tensor::scalar(0.0)};
  adam_step(qp, none, qs, 1e-3);
  CHECK(std::abs(qs.m["q"].item() - 0.9 * m1) < 1e-15);
  CHECK(qs.step == 2);

  std::vector<Tensor> bad = {Tensor::scalar(std::numeric_limits<double>::quiet_NaN())};
  CHECK_THROWS_AS(adam_step(qp, bad, qs, 1e-3), NumericError);
}

TEST_CASE("training is bit-reproducible") {
  auto run = [] {
    Rng rng(99);
    Mlp net(2, {8}, 1, rng);
    ParamRefs params;
    net.collect("", params);
    AdamState st;
    Tensor x = random_tensor(rng, 16, 2);
    Tensor y = random_tensor(rng, 16, 1);
    std::vector<double> losses;
    for (int i = 0; i < 20; ++i) {
      Tape t;
      Var loss = mean(square(net.forward(t, t.constant(x), Grad::kTrack) - t.constant(y)));
      losses.push_back(loss.value().item());
      auto g = gather(t.backward(loss), params);
      adam_step(params, g, st, 1e-2);
    }
    return losses;
  };
  CHECK(run() == run());
}

TEST_CASE("reparam sample") {
  Rng rng(1);
  LatentBelief tight{{1.5, -2.0}, {-40.0, -40.0}};
  auto z = reparam_sample(tight, rng);
  CHECK(std::abs(z[0] - 1.5) < 1e-8);
  CHECK(std::abs(z[1] + 2.0) < 1e-8);

  LatentBelief b{{0.7}, {std::log(4.0)}};
  const int n = 100000;
  double s = 0.0;
  for (int i = 0; i < n; ++i) s += reparam_sample(b, rng)[0];
  CHECK(std::abs(s / n - 0.7) < 3.0 * 2.0 / std::sqrt(n));

  Tape tape;
  Var mu = tape.leaf(Tensor::matrix(1, 2, {0.1, 0.2}));
  Var lv = tape.leaf(Tensor::matrix(1, 2, {0.0, -1.0}));
  Var zs = reparam_sample(tape, BeliefVar{mu, lv}, rng);
  CHECK(tape.backward(sum(zs))[mu] == Tensor::matrix(1, 2, {1.0, 1.0}));
}

TEST_CASE("gaussian kl") {
  LatentBelief p{{0.3, -0.2}, {0.1, -0.5}};
  CHECK(gaussian_kl(p, p) == 0.0);
  CHECK(gaussian_kl(LatentBelief{{1.0}, {0.0}}, LatentBelief{{0.0}, {0.0}}) ==
        doctest::Approx(0.5).epsilon(1e-12));

  Rng rng(17);
  for (int i = 0; i < 1000; ++i) {
    LatentBelief q{{rng.uniform(-3, 3)}, {rng.uniform(-5, 5)}};
    LatentBelief r{{rng.uniform(-3, 3)}, {rng.uniform(-5, 5)}};
    CHECK(gaussian_kl(q, r) >= 0.0);
  }

  // Monte Carlo estimate of E_q[log q - log p].
  LatentBelief q{{0.5, -1.0}, {-0.3, 0.4}};
  LatentBelief pr{{0.0, 0.2}, {0.2, -0.1}};
  auto log_density = [](const LatentBelief& b, const std::vector<double>& z) {
    double s = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) {
      const double d = z[i] - b.mean[i];
      s += -0.5 * (std::log(2 * M_PI) + b.logvar[i] + d * d / std::exp(b.logvar[i]));
    }
    return s;
  };
  const int n = 100000;
  double s = 0.0, s2 = 0.0;
  for (int i = 0; i < n; ++i) {
    auto z = reparam_sample(q, rng);
    const double v = log_density(q, z) - log_density(pr, z);
    s += v;
    s2 += v * v;
  }
  const double m = s / n;
  const double se = std::sqrt((s2 / n - m * m) / n);
  CHECK(std::abs(m - gaussian_kl(q, pr)) < 3.0 * se);

  Tape tape;
  BeliefVar qv{tape.leaf(Tensor::matrix(1, 2, {0.5, -1.0})), tape.leaf(Tensor::matrix(1, 2, {-0.3, 0.4}))};
  BeliefVar pv{tape.leaf(Tensor::matrix(1, 2, {0.0, 0.2})), tape.leaf(Tensor::matrix(1, 2, {0.2, -0.1}))};
  CHECK(gaussian_kl(qv, pv).value().item() == doctest::Approx(gaussian_kl(q, pr)).epsilon(1e-12));
}

TEST_CASE("checkpoint round trip") {
  Rng rng(8);
  Mlp net(3, {4}, 2, rng);
  ParamRefs params;
  net.collect("psi.enc.", params);
  Checkpoint c = Checkpoint::from(params, "lr=0.0003\n");
  const std::string bytes = c.encode();
  CHECK(bytes.substr(0, 5) == "ADLD1");
  Checkpoint back = Checkpoint::decode(bytes);
  CHECK(back.encode() == bytes);
  CHECK(back.trailer == "lr=0.0003\n");

  Rng other(9);
  Mlp fresh(3, {4}, 2, other);
  ParamRefs fp;
  fresh.collect("psi.enc.", fp);
  back.load_into(fp);
  for (std::size_t i = 0; i < fp.size(); ++i) CHECK(*fp[i].tensor == *params[i].tensor);

  CHECK_THROWS_AS(Checkpoint::decode("ADLD2xxxx"), FormatError);
  CHECK_THROWS_AS(Checkpoint::decode(bytes.substr(0, bytes.size() - 3)), FormatError);
}

TEST_CASE("shortest round-trip formatting") {
  Rng rng(4);
  for (int i = 0; i < 1000; ++i) {
    const double v = rng.normal() * std::pow(10.0, rng.uniform(-30, 30));
    CHECK(parse_double(format_double(v)) == v);
  }
  CHECK(sha256_hex("abc") ==
        "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("replay with held stop-gradient values") {
  // f(x) = x * sg(x): the tracked-path derivative is sg(x) = x0.
  Tape base;
  Var x = base.leaf(Tensor::scalar(3.0));
  Var y = x * stop_gradient(x);
  const double analytic = base.backward(y)[x].item();
  auto held = base.held_values();
  REQUIRE(held.size() == 1);
  auto replay = [&](double v) {
    Tape t;
    t.hold(held);
    Var xv = t.leaf(Tensor::scalar(v));
    return (xv * stop_gradient(xv)).value().item();
  };
  const double h = 1e-5;
  CHECK(std::abs((replay(3.0 + h) - replay(3.0 - h)) / (2 * h) - analytic) < 1e-8);
  CHECK(analytic == 3.0);

  // Frozen parameters are pinned the same way.
  Tensor w = Tensor::scalar(2.0);
  Tape b2;
  Var out = b2.frozen(w) * b2.leaf(Tensor::scalar(1.0));
  auto h2 = b2.held_values();
  w[0] = 5.0;
  Tape r2;
  r2.hold(h2);
  CHECK((r2.frozen(w) * r2.leaf(Tensor::scalar(1.0))).value().item() == 2.0);
  CHECK(out.value().item() == 2.0);
}
