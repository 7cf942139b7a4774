#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "wasgd/errors.hpp"
#include "wasgd/weighting.hpp"

using namespace wasgd;

namespace {

std::vector<double> random_energies(Rng& rng, size_t p, double scale = 1.0) {
  std::vector<double> h(p);
  for (double& v : h) v = scale * (0.05 + rng.uniform01());
  return h;
}

WeightVector random_simplex(Rng& rng, size_t p) {
  WeightVector w(p);
  double sum = 0.0;
  for (double& v : w) {
    v = -std::log(1.0 - rng.uniform01());
    sum += v;
  }
  for (double& v : w) v /= sum;
  return w;
}

}  // namespace

TEST_CASE("normalize_energies hand cases") {
  auto n1 = normalize_energies({2.0, 2.0, 2.0});
  for (double v : n1) CHECK(v == doctest::Approx(1.0 / 3).epsilon(1e-15));
  auto n2 = normalize_energies({1.0, 3.0});
  CHECK(n2[0] == doctest::Approx(0.25).epsilon(1e-15));
  CHECK(n2[1] == doctest::Approx(0.75).epsilon(1e-15));
  auto n3 = normalize_energies({0.0, 5.0});
  CHECK(n3[0] == 0.0);
  CHECK(n3[1] == 1.0);
  CHECK_THROWS_AS(normalize_energies({0.0, 0.0}), DegenerateEnergyError);
  CHECK_THROWS_AS(normalize_energies({-1.0, 2.0}), ConfigError);
}

TEST_CASE("normalize_energies preserves order and sums to one") {
  Rng rng(11);
  for (int rep = 0; rep < 200; ++rep) {
    auto h = random_energies(rng, 1 + rng.below(8));
    auto n = normalize_energies(h);
    double sum = 0.0;
    for (double v : n) sum += v;
    CHECK(std::abs(sum - 1.0) <= 1e-12);
    for (size_t i = 0; i < h.size(); ++i) {
      for (size_t j = 0; j < h.size(); ++j) {
        if (h[i] <= h[j]) CHECK(n[i] <= n[j] + 1e-15);
      }
    }
  }
}

TEST_CASE("boltzmann_weights: a_tilde = 0 gives exactly 1/p") {
  Rng rng(5);
  for (size_t p : {2, 3, 5, 7}) {
    auto h = normalize_energies(random_energies(rng, p));
    auto theta = boltzmann_weights(h, 0.0);
    for (double t : theta) CHECK(t == 1.0 / static_cast<double>(p));
  }
}

TEST_CASE("boltzmann_weights: huge a_tilde broadcasts the best worker") {
  auto theta = boltzmann_weights({0.25, 0.75}, 1e6);
  CHECK(theta[0] >= 1.0 - 1e-9);
  CHECK(theta[1] <= 1e-9);
}

TEST_CASE("boltzmann_weights hand value") {
  auto theta = boltzmann_weights({0.25, 0.75}, 1.0);
  CHECK(theta[0] == doctest::Approx(0.62245933120185456464).epsilon(1e-14));
}

TEST_CASE("boltzmann_weights is a probability vector for any input") {
  Rng rng(17);
  for (int rep = 0; rep < 500; ++rep) {
    size_t p = 1 + rng.below(10);
    auto h = normalize_energies(random_energies(rng, p));
    double a = (rng.uniform01() - 0.5) * 2000.0;
    auto theta = boltzmann_weights(h, a);
    CHECK(is_weight_vector(theta));
  }
}

TEST_CASE("boltzmann_weights monotonicity in both signs of a_tilde") {
  Rng rng(23);
  for (int rep = 0; rep < 200; ++rep) {
    auto h = normalize_energies(random_energies(rng, 4));
    auto pos = boltzmann_weights(h, 3.0);
    auto neg = boltzmann_weights(h, -3.0);
    for (size_t i = 0; i < h.size(); ++i) {
      for (size_t j = 0; j < h.size(); ++j) {
        if (h[i] < h[j] - 1e-12) {
          CHECK(pos[i] > pos[j]);
          CHECK(neg[i] < neg[j]);
        }
      }
    }
  }
}

TEST_CASE("scaling raw energies leaves boltzmann weights unchanged") {
  Rng rng(31);
  for (double scale : {1e-6, 0.5, 3.0, 1e8}) {
    auto h = random_energies(rng, 5);
    auto scaled = h;
    for (double& v : scaled) v *= scale;
    auto t1 = boltzmann_weights(normalize_energies(h), 2.5);
    auto t2 = boltzmann_weights(normalize_energies(scaled), 2.5);
    for (size_t i = 0; i < t1.size(); ++i) CHECK(std::abs(t1[i] - t2[i]) <= 1e-12);
  }
}

TEST_CASE("overflow safety at extreme a_tilde of either sign") {
  auto plus = boltzmann_weights({0.1, 0.9}, 1e8);
  CHECK(is_weight_vector(plus));
  auto minus = boltzmann_weights({0.1, 0.9}, -1e8);
  CHECK(is_weight_vector(minus));
  CHECK(minus[1] >= 1.0 - 1e-9);  // negative temperature favors the worst
}

TEST_CASE("inverse_loss_weights hand cases") {
  auto t1 = inverse_loss_weights({2.0, 2.0, 2.0, 2.0});
  for (double v : t1) CHECK(v == doctest::Approx(0.25).epsilon(1e-15));
  auto t2 = inverse_loss_weights({1.0, 3.0});
  CHECK(t2[0] == doctest::Approx(0.75).epsilon(1e-14));
  CHECK(t2[1] == doctest::Approx(0.25).epsilon(1e-14));
  auto t3 = inverse_loss_weights({1.0, 1.0, 2.0});
  CHECK(t3[0] == doctest::Approx(0.4).epsilon(1e-14));
  CHECK(t3[1] == doctest::Approx(0.4).epsilon(1e-14));
  CHECK(t3[2] == doctest::Approx(0.2).epsilon(1e-14));
  CHECK_THROWS_AS(inverse_loss_weights({0.0, 1.0}), DegenerateEnergyError);
}

TEST_CASE("record_index hand cases") {
  auto s1 = record_index(4, 2, 100);
  CHECK(s1.indices == std::vector<int>{48, 49, 98, 99});

  auto s2 = record_index(6, 1, 6);
  CHECK(s2.indices == std::vector<int>{0, 1, 2, 3, 4, 5});

  auto s3 = record_index(1, 1, 50);
  CHECK(s3.indices == std::vector<int>{49});

  CHECK_THROWS_AS(record_index(3, 2, 100), ConfigError);  // c does not divide m
  CHECK_THROWS_AS(record_index(4, 2, 99), ConfigError);   // c does not divide tau
  CHECK_THROWS_AS(record_index(101, 1, 100), ConfigError);
}

TEST_CASE("record_index structure: m distinct indices inside [0, tau)") {
  for (auto [m, c, tau] : {std::tuple{10, 2, 40}, {100, 4, 1000}, {9, 3, 9}}) {
    auto s = record_index(m, c, tau);
    CHECK(static_cast<int>(s.indices.size()) == m);
    CHECK(std::adjacent_find(s.indices.begin(), s.indices.end()) == s.indices.end());
    CHECK(s.indices.front() >= 0);
    CHECK(s.indices.back() < tau);
    // last m/c of each segment
    int seg = tau / c;
    for (int i = 0; i < c; ++i) {
      for (int j = 0; j < m / c; ++j) {
        CHECK(s.contains((i + 1) * seg - j - 1));
      }
    }
  }
}

TEST_CASE("estimation_error hand cases and metric properties") {
  CHECK(estimation_error({0.5, 0.5}, {0.5, 0.5}) == 0.0);
  CHECK(estimation_error({1.0, 0.0}, {0.0, 1.0}) == 2.0);
  CHECK(estimation_error({0.6, 0.4}, {0.5, 0.5}) == doctest::Approx(0.2).epsilon(1e-15));
  CHECK_THROWS_AS(estimation_error({1.0}, {0.5, 0.5}), ConfigError);

  Rng rng(41);
  for (int rep = 0; rep < 1000; ++rep) {
    size_t p = 2 + rng.below(6);
    auto a = random_simplex(rng, p);
    auto b = random_simplex(rng, p);
    double e = estimation_error(a, b);
    CHECK(e >= 0.0);
    CHECK(e <= 2.0 + 1e-12);
    CHECK(e == doctest::Approx(estimation_error(b, a)).epsilon(1e-15));
    CHECK(estimation_error(a, a) == 0.0);
  }
}

TEST_CASE("true_weights: symmetry, brute force, and the a_tilde = 0 limit") {
  SoftmaxRegressionModel model(2, 2);
  Rng rng(53);
  std::vector<Sample> data;
  for (int i = 0; i < 10; ++i) {
    Sample s;
    s.features = {rng.gaussian(), rng.gaussian()};
    s.label = static_cast<int>(rng.below(2));
    data.push_back(s);
  }
  ParamVector xa = model.random_params(0.7, rng);
  ParamVector xb = model.random_params(0.7, rng);

  auto equal = true_weights(model, {xa, xa, xa}, data, 2.0);
  for (double t : equal) CHECK(t == doctest::Approx(1.0 / 3).epsilon(1e-12));

  // brute-force totals computed independently here
  double ta = 0.0, tb = 0.0;
  for (const Sample& s : data) {
    ta += model.loss(xa, s);
    tb += model.loss(xb, s);
  }
  double a_tilde = 1.7;
  auto expect = boltzmann_weights(normalize_energies({ta, tb}), a_tilde);
  auto got = true_weights(model, {xa, xb}, data, a_tilde);
  CHECK(got[0] == doctest::Approx(expect[0]).epsilon(1e-14));
  CHECK(got[1] == doctest::Approx(expect[1]).epsilon(1e-14));

  auto zero = true_weights(model, {xa, xb}, data, 0.0);
  CHECK(zero[0] == 0.5);
  CHECK(zero[1] == 0.5);
}
