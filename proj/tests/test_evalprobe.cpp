#include <cmath>
#include <numeric>

#include "adld/evalprobe.hpp"
#include "adld/numerics/errors.hpp"
#include "adld/numerics/rng.hpp"
#include "doctest.h"

using namespace adld;
using namespace adld::eval;

namespace {

Rows random_rows(std::size_t n, std::size_t d, Rng& rng) {
  Rows out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(rng.normal_vector(d));
  return out;
}

}  // namespace

TEST_CASE("probe recovers exact linear maps") {
  Rng rng(1);
  Rows z = random_rows(200, 3, rng), y;
  for (const auto& r : z) y.push_back({2.0 * r[0] - r[2] + 0.5, r[1] * 3.0});
  auto p = linear_probe(z, y, 7);
  CHECK(p.r2 == doctest::Approx(1.0).epsilon(1e-8));
  CHECK(p.mse < 1e-12);
  CHECK(p.n_train == 160);
  CHECK(p.n_test == 40);
  CHECK(p.weights.rows() == 4);
  CHECK(p.weights.at(3, 0) == doctest::Approx(0.5).epsilon(1e-6));
}

TEST_CASE("probe on independent noise") {
  Rng rng(2);
  Rows z = random_rows(1000, 4, rng), y = random_rows(1000, 1, rng);
  auto p = linear_probe(z, y, 3);
  CHECK(p.r2 < 0.2);
  CHECK(p.r2 <= 1.0);
}

TEST_CASE("probe contracts") {
  Rng rng(3);
  Rows z = random_rows(20, 2, rng), y = random_rows(19, 1, rng);
  CHECK_THROWS_AS(linear_probe(z, y, 1), ShapeError);
  Rows z9 = random_rows(9, 2, rng), y9 = random_rows(9, 1, rng);
  CHECK_THROWS(linear_probe(z9, y9, 1));
  Rows flat(20, std::vector<double>{1.5});
  auto p = linear_probe(z, flat, 1);
  CHECK_FALSE(p.r2_defined);

  auto a = linear_probe(z, random_rows(20, 1, rng), 5);
  CHECK(a.split_seed == 5);
}

TEST_CASE("train fit beats test fit on average") {
  double train = 0.0, test = 0.0;
  for (std::uint64_t s = 0; s < 20; ++s) {
    Rng rng(100 + s);
    Rows z = random_rows(60, 5, rng), y;
    for (const auto& r : z) y.push_back({r[0] + rng.normal()});
    auto p = linear_probe(z, y, s);
    train += p.train_r2;
    test += p.r2;
  }
  CHECK(train >= test);
}

TEST_CASE("probe mse is invariant under affine reparameterization") {
  Rng rng(4);
  Rows z = random_rows(300, 3, rng), y;
  for (const auto& r : z) y.push_back({std::sin(r[0]) + 0.3 * r[1] * r[2]});
  Rows w;
  for (const auto& r : z) {
    w.push_back({2.0 * r[0] + r[1] - 1.0, -r[1] + 0.5 * r[2] + 3.0, r[2] - 0.25 * r[0]});
  }
  auto a = linear_probe(z, y, 9);
  auto b = linear_probe(w, y, 9);
  CHECK(std::abs(a.mse - b.mse) < 1e-6);
}

TEST_CASE("cluster purity") {
  // One tight point mass per equal-frequency bin.
  Rows z;
  std::vector<double> c;
  for (int bin = 0; bin < 5; ++bin) {
    for (int i = 0; i < 20; ++i) {
      z.push_back({10.0 * bin, -5.0 * bin});
      c.push_back(bin + 0.01 * i);
    }
  }
  auto r = kmeans_purity(z, c, 5, 1);
  CHECK(r.purity == doctest::Approx(1.0));
  CHECK(r.assignments.size() == 100);

  auto one = kmeans_purity(z, c, 1, 1);
  CHECK(one.purity == doctest::Approx(0.2));

  auto bins = equal_frequency_bins(c, 5);
  std::vector<std::size_t> counts(5, 0);
  for (auto b : bins) ++counts[b];
  for (auto n : counts) CHECK(n == 20);
}

TEST_CASE("purity is invariant under orthogonal maps") {
  Rng rng(5);
  Rows z = random_rows(200, 2, rng);
  std::vector<double> c;
  for (const auto& r : z) c.push_back(r[0] + 0.3 * rng.normal());
  const double th = 0.7;
  Rows rot;
  for (const auto& r : z) {
    rot.push_back({std::cos(th) * r[0] - std::sin(th) * r[1],
                   std::sin(th) * r[0] + std::cos(th) * r[1]});
  }
  auto a = kmeans_purity(z, c, 5, 11);
  auto b = kmeans_purity(rot, c, 5, 11);
  CHECK(std::abs(a.purity - b.purity) < 1e-6);
  CHECK(a.purity >= 1.0 / 5.0);
}

TEST_CASE("rollout statistics") {
  std::vector<double> r = {1.0, 2.0, 3.0};
  auto s = rollout_stats(r);
  CHECK(s.mean == doctest::Approx(2.0));
  CHECK(s.std == doctest::Approx(0.8165).epsilon(1e-4));
  CHECK(s.std_err == doctest::Approx(1.0 / std::sqrt(3.0)));
  CHECK(s.n == 3);

  std::vector<double> one = {4.0};
  auto o = rollout_stats(one);
  CHECK(o.single);
  CHECK(o.std == 0.0);
  CHECK(o.n == 1);

  std::vector<double> hi = {5.0, 6.0, 7.0};
  auto h = rollout_stats(hi);
  // Equal variances: t = (6 - 2) / sqrt(1/3 + 1/3).
  CHECK(welch_t(h, s) == doctest::Approx(4.0 / std::sqrt(2.0 / 3.0)));
  CHECK(welch_t(s, h) == doctest::Approx(-4.0 / std::sqrt(2.0 / 3.0)));
}

TEST_CASE("rank correlation") {
  std::vector<double> x = {1, 2, 3, 4, 5};
  std::vector<double> y = {1, 4, 9, 16, 25};
  CHECK(spearman(x, y) == doctest::Approx(1.0));
  std::vector<double> rev = {5, 4, 3, 2, 1};
  CHECK(spearman(x, rev) == doctest::Approx(-1.0));
  std::vector<double> tie = {1, 1, 2, 2, 3};
  // Average ranks: 1.5 1.5 3.5 3.5 5 against 1..5.
  CHECK(spearman(x, tie) == doctest::Approx(0.9486832980505138));
  CHECK(pearson(x, y) < 1.0);
}
