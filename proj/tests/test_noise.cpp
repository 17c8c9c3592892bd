#include <cmath>
#include <vector>

#include "blockdiff/error.hpp"
#include "blockdiff/noise.hpp"
#include "blockdiff/rng.hpp"
#include "blockdiff/stats.hpp"
#include "doctest.h"

using namespace blockdiff;

namespace {

constexpr std::size_t kDraws = 100000;

// Mean within 3 standard errors and variance within `var_tol` relative.
void check_moments(const std::vector<double>& xs, double mean, double var, double var_tol = 0.05) {
  RunningMoments m;
  for (double x : xs) {
    m.push(x);
  }
  const double se = std::sqrt(var / static_cast<double>(xs.size()));
  CHECK(std::abs(m.mean() - mean) <= 3.0 * se);
  CHECK(std::abs(m.variance() - var) <= var_tol * var);
}

}  // namespace

TEST_CASE("derive_seed separates paths and is stable") {
  CHECK(derive_seed(1, {2, 3}) == derive_seed(1, {2, 3}));
  CHECK(derive_seed(1, {2, 3}) != derive_seed(1, {3, 2}));
  CHECK(derive_seed(1, {2}) != derive_seed(2, {2}));
  CHECK(derive_seed(1, {}) != derive_seed(1, {0}));
}

TEST_CASE("uniform_open0 never returns zero and below is in range") {
  Rng r(5);
  for (int i = 0; i < 10000; ++i) {
    const double u = r.uniform_open0();
    CHECK((u > 0.0 && u <= 1.0));
    CHECK(r.below(7) < 7);
  }
  CHECK_THROWS_AS(r.below(0), ContractError);
}

TEST_CASE("sync draws replicate one ratio") {
  Rng r(1);
  const auto t = sample_sync(r, 4);
  REQUIRE(t.size() == 4);
  for (double x : t) {
    CHECK(x == t[0]);
  }
  Rng again(1);
  CHECK(sample_sync(again, 4) == t);
  std::vector<double> xs;
  for (std::size_t i = 0; i < kDraws; ++i) {
    xs.push_back(sample_sync(r, 1)[0]);
  }
  check_moments(xs, 0.5, 1.0 / 12.0);
}

TEST_CASE("clamped async draws stay in range with the uniform moments") {
  Rng r(2);
  const auto kind = SchedulerKind::async_clamp(0.45, 0.95);
  const auto xs = sample_async(r, kDraws, kind, 0);
  for (double x : xs) {
    CHECK((x >= 0.45 && x <= 0.95));
  }
  check_moments(xs, 0.70, 0.25 / 12.0);
  CHECK_THROWS_AS(SchedulerKind::async_clamp(0.9, 0.5), ContractError);
  CHECK_THROWS_AS(SchedulerKind::async_clamp(0.0, 0.5), ContractError);
}

TEST_CASE("beta parameters follow the curriculum") {
  BetaSchedule s;
  s.mu_start = 0.5;
  s.mu_final = 0.8;
  s.c_start = 2.0;
  s.c_final = 25.0;
  s.warmup_steps = 100;
  const auto p0 = beta_params_at(s, 0);
  CHECK(p0.alpha == doctest::Approx(1.0));
  CHECK(p0.beta == doctest::Approx(1.0));
  const auto pf = beta_params_at(s, 100);
  CHECK(pf.alpha == doctest::Approx(20.0));
  CHECK(pf.beta == doctest::Approx(5.0));
  CHECK(beta_params_at(s, 5000).alpha == pf.alpha);
  double prev_mu = 0.0, prev_c = 0.0;
  for (std::size_t step = 0; step <= 150; ++step) {
    const auto p = beta_params_at(s, step);
    CHECK(p.mu >= prev_mu);
    CHECK(p.concentration >= prev_c);
    prev_mu = p.mu;
    prev_c = p.concentration;
  }
  s.warmup_steps = 0;
  CHECK_THROWS_AS(s.validate(), ContractError);
}

TEST_CASE("beta draws match the closed-form moments") {
  BetaSchedule s;
  s.mu_start = 0.8;
  s.mu_final = 0.8;
  s.c_start = 25.0;
  s.c_final = 25.0;
  s.warmup_steps = 1;
  Rng r(3);
  const auto xs = sample_async(r, kDraws, SchedulerKind::async_beta(s), 10);
  for (double x : xs) {
    CHECK((x > 0.0 && x <= 1.0));
  }
  check_moments(xs, 0.8, 0.8 * 0.2 / 26.0);

  s.mu_start = s.mu_final = 0.3;
  s.c_start = s.c_final = 0.9;  // shape below 1 exercises the boost path
  Rng r2(4);
  check_moments(sample_async(r2, kDraws, SchedulerKind::async_beta(s), 0), 0.3, 0.3 * 0.7 / 1.9);
}

TEST_CASE("gamma draws match shape mean and variance") {
  for (double shape : {0.4, 1.0, 3.5}) {
    Rng r(17);
    std::vector<double> xs(kDraws);
    for (double& x : xs) {
      x = r.gamma(shape);
    }
    check_moments(xs, shape, shape);
  }
  Rng r(1);
  CHECK_THROWS_AS(r.gamma(0.0), ContractError);
}

TEST_CASE("mask realization and effective ratio") {
  Rng r(6);
  for (std::size_t len : {1u, 3u, 16u}) {
    const auto d = realize_mask(r, 1.0, len);
    CHECK(d.masked_count() == len);
    CHECK(d.t_prime == 1.0);
  }
  const auto d = draw_from_mask(0.5, {1, 0, 1, 0});
  CHECK(d.t_prime == 0.5);
  for (int i = 0; i < 2000; ++i) {
    const auto x = realize_mask(r, r.uniform_open0(), 1 + r.below(20));
    CHECK(static_cast<std::size_t>(std::llround(x.t_prime * static_cast<double>(x.mask.size()))) ==
          x.masked_count());
  }
}

TEST_CASE("mask deviation variance is t(1-t)/L") {
  Rng r(7);
  std::vector<double> dev(kDraws);
  for (double& e : dev) {
    e = realize_mask(r, 0.5, 4).t_prime - 0.5;
  }
  RunningMoments m;
  for (double e : dev) {
    m.push(e);
  }
  CHECK(m.variance() == doctest::Approx(0.0625).epsilon(0.05));
}

TEST_CASE("per-block streams are decorrelated") {
  std::vector<double> a, b;
  for (std::size_t step = 0; step < kDraws; ++step) {
    BlockStreams s(derive_seed(99, {stream::kRatio, step}), stream::kRatio);
    a.push_back(s.stream(0).uniform_open0());
    b.push_back(s.stream(1).uniform_open0());
  }
  CHECK(std::abs(pearson(a, b)) <= 3.0 / std::sqrt(static_cast<double>(kDraws)));
}
