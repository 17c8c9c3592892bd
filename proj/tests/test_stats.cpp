#include <cmath>
#include <random>
#include <vector>

#include "blockdiff/stats.hpp"
#include "doctest.h"
#include "oracles.hpp"

using namespace blockdiff;

TEST_CASE("Welford agrees with two-pass on shifted data") {
  std::mt19937_64 g(1);
  std::normal_distribution<double> d(1e6, 3.0);
  std::vector<double> xs(5000);
  RunningMoments m, left, right;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    xs[i] = d(g);
    m.push(xs[i]);
    (i < 1700 ? left : right).push(xs[i]);
  }
  left.merge(right);
  CHECK(std::abs(m.mean() - mean(xs)) < 1e-10 * std::abs(mean(xs)));
  CHECK(std::abs(m.variance() - variance(xs)) < 1e-10 * variance(xs));
  CHECK(std::abs(left.variance() - variance(xs)) < 1e-10 * variance(xs));
  CHECK(left.count() == 5000);
  CHECK(RunningMoments{}.variance() == 0.0);
}

TEST_CASE("ranks and Spearman match brute force") {
  CHECK(average_ranks(std::vector<double>{3, 1, 3, 2}) == std::vector<double>{3.5, 1, 3.5, 2});
  std::mt19937_64 g(2);
  for (int rep = 0; rep < 20; ++rep) {
    std::vector<double> x(40), y(40);
    for (std::size_t i = 0; i < 40; ++i) {
      x[i] = static_cast<double>(g() % 12);  // ties
      y[i] = std::sin(x[i]) + static_cast<double>(g() % 5);
    }
    const double ref = oracle::two_pass_pearson(oracle::brute_ranks(x), oracle::brute_ranks(y));
    CHECK(std::abs(spearman(x, y) - ref) < 1e-12);
  }
  const std::vector<double> t{0.1, 0.2, 0.3, 0.4};
  CHECK(spearman(t, std::vector<double>{1, 4, 9, 16}) == doctest::Approx(1.0));
  CHECK(spearman(t, std::vector<double>{4, 3, 2, 1}) == doctest::Approx(-1.0));
}

TEST_CASE("sliding window variance matches direct windows") {
  std::vector<double> xs{1, 4, 2, 8, 5, 7, 1};
  const auto w = sliding_window_variance(xs, 3);
  REQUIRE(w.size() == 5);
  for (std::size_t i = 0; i < w.size(); ++i) {
    const std::vector<double> win(xs.begin() + static_cast<std::ptrdiff_t>(i),
                                  xs.begin() + static_cast<std::ptrdiff_t>(i + 3));
    CHECK(w[i] == doctest::Approx(variance(win)).epsilon(1e-12));
  }
  CHECK(sliding_window_variance(xs, 10).empty());
}

TEST_CASE("variance standard error tracks the spread of sample variances") {
  Rng r(3);
  std::vector<double> variances;
  double se_sum = 0.0;
  for (int rep = 0; rep < 400; ++rep) {
    std::vector<double> xs(200);
    for (double& x : xs) {
      x = r.normal();
    }
    variances.push_back(variance(xs));
    se_sum += variance_standard_error(xs);
  }
  const double spread = std::sqrt(variance(variances));
  CHECK(se_sum / 400.0 == doctest::Approx(spread).epsilon(0.15));
}

TEST_CASE("bootstrap gap detects a real difference and is seeded") {
  Rng data(4);
  std::vector<double> wide(500), narrow(500);
  for (std::size_t i = 0; i < 500; ++i) {
    wide[i] = 2.0 * data.normal();
    narrow[i] = data.normal();
  }
  Rng a(5), b(5);
  const auto r1 = bootstrap_variance_gap(wide, narrow, 300, 0.95, a);
  const auto r2 = bootstrap_variance_gap(wide, narrow, 300, 0.95, b);
  CHECK(r1.lower_bound == r2.lower_bound);
  CHECK(r1.lower_bound > 0.0);
  CHECK(r1.observed == doctest::Approx(variance(wide) - variance(narrow)));
  Rng c(6);
  CHECK(bootstrap_variance_gap(narrow, wide, 300, 0.95, c).lower_bound < 0.0);
}
