#pragma once

// Streaming moments, rank correlation and resampling tests.

#include <cstddef>
#include <span>
#include <vector>

#include "blockdiff/rng.hpp"

namespace blockdiff {

/// Welford accumulator; merge() uses the pairwise update so partial
/// accumulators combine associatively.
class RunningMoments {
 public:
  void push(double x);
  void merge(const RunningMoments& other);

  std::size_t count() const { return n_; }
  double mean() const { return mean_; }
  /// Unbiased sample variance (n - 1 denominator); 0 for n < 2.
  double variance() const;
  /// sqrt(variance / n).
  double standard_error() const;

 private:
  std::size_t n_ = 0;
  double mean_ = 0.0;
  double m2_ = 0.0;
};

double mean(std::span<const double> xs);
/// Two-pass unbiased variance.
double variance(std::span<const double> xs);
/// Standard error of the unbiased sample variance, from the fourth central
/// moment: sqrt((m4 - (n - 3) / (n - 1) * s^4) / n).
double variance_standard_error(std::span<const double> xs);

/// Average ranks (1-based; ties share the mean of their positions).
std::vector<double> average_ranks(std::span<const double> xs);
double pearson(std::span<const double> x, std::span<const double> y);
double spearman(std::span<const double> x, std::span<const double> y);

/// Variance of each trailing window ending at index i, for i >= window - 1.
std::vector<double> sliding_window_variance(std::span<const double> xs, std::size_t window);

struct BootstrapResult {
  double observed = 0.0;      // var(a) - var(b)
  double lower_bound = 0.0;   // one-sided lower quantile of the resampled gap
  double fraction_positive = 0.0;
  std::size_t resamples = 0;
};

/// Resamples a and b independently with replacement. lower_bound is the
/// (1 - confidence) quantile of var(a*) - var(b*).
BootstrapResult bootstrap_variance_gap(std::span<const double> a, std::span<const double> b,
                                       std::size_t resamples, double confidence, Rng& rng);

}  // namespace blockdiff
