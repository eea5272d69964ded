#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include "fixtures.hpp"
#include "psym/errors.hpp"
#include "psym/gmm.hpp"

using namespace psym;

namespace {

double bayes_posterior(const gmm::GmmParams& p, double x) {
  auto pdf = [](double x, double m, double v) { return std::exp(-(x - m) * (x - m) / (2 * v)) / std::sqrt(2 * std::numbers::pi * v); };
  const double lo = p.weight_low * pdf(x, p.mean_low, p.var_low);
  const double hi = p.weight_high * pdf(x, p.mean_high, p.var_high);
  return hi / (lo + hi);
}

}  // namespace

TEST_CASE("identical values collapse both components onto the value") {
  std::vector<double> v(10, 5.0);
  auto p = gmm::fit_gmm(v);
  CHECK(p.mean_low == doctest::Approx(5.0));
  CHECK(p.mean_high == doctest::Approx(5.0));
  CHECK(p.var_low == gmm::kVarFloor);
  CHECK(p.var_high == gmm::kVarFloor);
  CHECK_NOTHROW(p.validate());
}

TEST_CASE("planted two-component mixture is recovered") {
  const auto v = fixtures::planted_mixture(11, 500);
  auto p = gmm::fit_gmm(v);
  CHECK(std::abs(p.mean_low - 2.0) <= 0.3);
  CHECK(std::abs(p.mean_high - 8.0) <= 0.3);
  CHECK(std::abs(p.weight_low - 0.8) <= 0.05);
  CHECK(std::abs(p.weight_high - 0.2) <= 0.05);
  CHECK(p.weight_high < p.weight_low);
}

TEST_CASE("posterior at a far value matches direct Bayes evaluation") {
  auto p = gmm::fit_gmm(fixtures::planted_mixture(11, 500));
  CHECK(std::abs(gmm::posterior_abnormal(p, 8.0) - bayes_posterior(p, 8.0)) < 1e-12);
  for (double x : {0.0, 1.5, 3.7, 5.0, 6.2, 11.0})
    CHECK(std::abs(gmm::posterior_abnormal(p, x) - bayes_posterior(p, x)) < 1e-12);
}

TEST_CASE("symmetric mixture gives one half at the midpoint") {
  gmm::GmmParams p{0.5, 0.5, 1.0, 3.0, 0.4, 0.4};
  CHECK(gmm::posterior_abnormal(p, 2.0) == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("the high component dominates the far tail") {
  gmm::GmmParams p{0.9, 0.1, 1.0, 3.0, 0.5, 0.8};
  CHECK(gmm::posterior_abnormal(p, 50.0) > 1.0 - 1e-12);
  CHECK(gmm::posterior_abnormal(p, 1e6) == 1.0);
}

TEST_CASE("underflowing densities fall back to the nearer mean") {
  gmm::GmmParams p{0.5, 0.5, 0.0, 1.0, gmm::kVarFloor, gmm::kVarFloor};
  CHECK(gmm::posterior_abnormal(p, 1e200) == 1.0);
  CHECK(gmm::posterior_abnormal(p, -1e200) == 0.0);
}

TEST_CASE("fewer than four values is an insufficient-data error") {
  std::vector<double> v{1.0, 2.0, 3.0};
  CHECK_THROWS_AS(gmm::fit_gmm(v), InsufficientDataError);
  std::vector<double> bad{1.0, 2.0, NAN, 4.0};
  CHECK_THROWS_AS(gmm::fit_gmm(bad), DataError);
}

TEST_CASE("fitted parameters satisfy the type invariants on fuzzed data") {
  std::mt19937_64 rng(99);
  for (int trial = 0; trial < 100; ++trial) {
    const auto v = fixtures::fuzzed_dataset(rng);
    auto r = gmm::fit(v);
    CAPTURE(trial);
    CHECK_NOTHROW(r.params.validate());
    CHECK(std::abs(r.params.weight_low + r.params.weight_high - 1.0) <= 1e-9);
  }
}

TEST_CASE("EM log-likelihood never decreases") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    const auto v = fixtures::fuzzed_dataset(rng);
    auto r = gmm::fit(v);
    CAPTURE(trial);
    for (std::size_t i = 1; i < r.log_likelihood.size(); ++i)
      CHECK(r.log_likelihood[i] >= r.log_likelihood[i - 1] - 1e-9);
  }
}

TEST_CASE("responsibilities sum to one") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.0, 20.0);
  for (int trial = 0; trial < 50; ++trial) {
    auto p = gmm::fit_gmm(fixtures::fuzzed_dataset(rng));
    for (int k = 0; k < 20; ++k) {
      auto [lo, hi] = gmm::responsibilities(p, u(rng));
      CHECK(std::abs(lo + hi - 1.0) <= 1e-12);
    }
  }
}

TEST_CASE("with equal variances the posterior is non-decreasing in the distance") {
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> u(0.05, 3.0);
  for (int trial = 0; trial < 50; ++trial) {
    const double var = u(rng), a = u(rng), b = a + u(rng), w = u(rng) / 3.1;
    gmm::GmmParams p{1.0 - w, w, a, b, var, var};
    double prev = 0.0;
    for (double x = 0.0; x <= 10.0; x += 0.01) {
      const double post = gmm::posterior_abnormal(p, x);
      CHECK(post >= prev);
      prev = post;
    }
  }
}

TEST_CASE("fit is invariant to the order of the initial components") {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 20; ++trial) {
    const auto v = fixtures::planted_mixture(100 + trial, 300);
    gmm::GmmParams init{0.6, 0.4, 1.0, 6.0, 1.0, 2.0};
    gmm::GmmParams swapped{0.4, 0.6, 6.0, 1.0, 2.0, 1.0};
    auto a = gmm::fit_from(v, init).params;
    auto b = gmm::fit_from(v, swapped).params;
    CHECK(a.mean_low == doctest::Approx(b.mean_low).epsilon(1e-9));
    CHECK(a.mean_high == doctest::Approx(b.mean_high).epsilon(1e-9));
    CHECK(a.weight_high == doctest::Approx(b.weight_high).epsilon(1e-9));
    CHECK(a.var_low == doctest::Approx(b.var_low).epsilon(1e-9));
  }
}

TEST_CASE("mixture parameters round-trip through JSON") {
  gmm::GmmParams p{0.7, 0.3, 0.1234567890123, 5.5, 0.25, 1.75};
  nlohmann::json j = p;
  CHECK(j.size() == 6);
  CHECK(j.get<gmm::GmmParams>() == p);
}
