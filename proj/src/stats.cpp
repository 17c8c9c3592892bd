#include "blockdiff/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "blockdiff/error.hpp"

namespace blockdiff {

void RunningMoments::push(double x) {
  ++n_;
  const double delta = x - mean_;
  mean_ += delta / static_cast<double>(n_);
  m2_ += delta * (x - mean_);
}

void RunningMoments::merge(const RunningMoments& other) {
  if (other.n_ == 0) {
    return;
  }
  if (n_ == 0) {
    *this = other;
    return;
  }
  const double na = static_cast<double>(n_);
  const double nb = static_cast<double>(other.n_);
  const double n = na + nb;
  const double delta = other.mean_ - mean_;
  mean_ += delta * nb / n;
  m2_ += other.m2_ + delta * delta * na * nb / n;
  n_ += other.n_;
}

double RunningMoments::variance() const {
  return n_ < 2 ? 0.0 : m2_ / static_cast<double>(n_ - 1);
}

double RunningMoments::standard_error() const {
  return n_ == 0 ? 0.0 : std::sqrt(variance() / static_cast<double>(n_));
}

double mean(std::span<const double> xs) {
  if (xs.empty()) {
    return 0.0;
  }
  double s = 0.0;
  for (double x : xs) {
    s += x;
  }
  return s / static_cast<double>(xs.size());
}

double variance(std::span<const double> xs) {
  if (xs.size() < 2) {
    return 0.0;
  }
  const double m = mean(xs);
  double s = 0.0;
  for (double x : xs) {
    s += (x - m) * (x - m);
  }
  return s / static_cast<double>(xs.size() - 1);
}

double variance_standard_error(std::span<const double> xs) {
  const std::size_t n = xs.size();
  if (n < 4) {
    return 0.0;
  }
  const double m = mean(xs);
  double m4 = 0.0;
  for (double x : xs) {
    const double d = (x - m) * (x - m);
    m4 += d * d;
  }
  const double nd = static_cast<double>(n);
  m4 /= nd;
  const double s2 = variance(xs);
  const double v = (m4 - (nd - 3.0) / (nd - 1.0) * s2 * s2) / nd;
  return std::sqrt(std::max(v, 0.0));
}

std::vector<double> average_ranks(std::span<const double> xs) {
  std::vector<std::size_t> order(xs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return xs[a] < xs[b]; });
  std::vector<double> ranks(xs.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && xs[order[j + 1]] == xs[order[i]]) {
      ++j;
    }
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) {
      ranks[order[k]] = r;
    }
    i = j + 1;
  }
  return ranks;
}

double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) {
    throw DimensionError("pearson: " + std::to_string(x.size()) + " vs " +
                         std::to_string(y.size()) + " values");
  }
  if (x.size() < 2) {
    return 0.0;
  }
  const double mx = mean(x);
  const double my = mean(y);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) {
    return 0.0;
  }
  return sxy / std::sqrt(sxx * syy);
}

double spearman(std::span<const double> x, std::span<const double> y) {
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  return pearson(rx, ry);
}

std::vector<double> sliding_window_variance(std::span<const double> xs, std::size_t window) {
  if (window < 2) {
    throw ContractError("sliding window needs at least 2 values");
  }
  std::vector<double> out;
  for (std::size_t end = window; end <= xs.size(); ++end) {
    out.push_back(variance(xs.subspan(end - window, window)));
  }
  return out;
}

namespace {

double resampled_variance(std::span<const double> xs, Rng& rng, std::vector<double>& scratch) {
  scratch.resize(xs.size());
  for (double& v : scratch) {
    v = xs[rng.below(xs.size())];
  }
  return variance(scratch);
}

}  // namespace

BootstrapResult bootstrap_variance_gap(std::span<const double> a, std::span<const double> b,
                                       std::size_t resamples, double confidence, Rng& rng) {
  if (a.size() < 2 || b.size() < 2 || resamples == 0) {
    throw ContractError("bootstrap needs two samples of size >= 2 and resamples > 0");
  }
  if (!(confidence > 0.0 && confidence < 1.0)) {
    throw ContractError("bootstrap confidence must lie in (0, 1)");
  }
  BootstrapResult res;
  res.observed = variance(a) - variance(b);
  res.resamples = resamples;
  std::vector<double> gaps(resamples);
  std::vector<double> scratch;
  std::size_t positive = 0;
  for (double& g : gaps) {
    g = resampled_variance(a, rng, scratch);
    g -= resampled_variance(b, rng, scratch);
    positive += g > 0.0 ? 1 : 0;
  }
  std::sort(gaps.begin(), gaps.end());
  const auto idx = static_cast<std::size_t>(
      std::floor((1.0 - confidence) * static_cast<double>(resamples)));
  res.lower_bound = gaps[std::min(idx, resamples - 1)];
  res.fraction_positive = static_cast<double>(positive) / static_cast<double>(resamples);
  return res;
}

}  // namespace blockdiff
