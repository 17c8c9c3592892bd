#pragma once

// Monte Carlo checks of the scheduling and scaling lemmas on synthetic
// per-block losses, plus an end-to-end variant on real gradient projections.
//
// Notation: a block draws t from a ratio distribution, masks each of its L'
// positions with probability t, and reports Z. Z-bar is the mean over B
// blocks. Synchronous scheduling shares one t across the B blocks;
// asynchronous scheduling draws one t per block.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "blockdiff/model.hpp"
#include "blockdiff/rng.hpp"
#include "blockdiff/sequence.hpp"
#include "blockdiff/stats.hpp"
#include "json.hpp"

namespace blockdiff {

/// t ~ U(lo, hi] (or a point mass when lo == hi).
struct RatioDistribution {
  double lo = 0.0;
  double hi = 1.0;

  static RatioDistribution fixed(double t) { return {t, t}; }
  static RatioDistribution uniform(double lo, double hi) { return {lo, hi}; }

  bool is_fixed() const { return lo == hi; }
  void validate() const;
  double draw(Rng& rng) const;
  /// E[f(t)] by Gauss-Legendre quadrature with `nodes` points.
  double expect(const std::function<double(double)>& f, std::size_t nodes = 512) const;
};

/// Gauss-Legendre nodes and weights on [-1, 1].
void gauss_legendre(std::size_t n, std::vector<double>& nodes, std::vector<double>& weights);

struct SyntheticLossModel {
  enum class Kind { kGaussianAnalytic, kBernoulliMaskStylized };

  Kind kind = Kind::kGaussianAnalytic;
  std::function<double(double)> mu;      // E[Z | t]
  std::function<double(double)> sigma2;  // Var(Z | t)
  std::function<double(double)> h;       // per-masked-token loss at t'

  static SyntheticLossModel gaussian(std::function<double(double)> mu,
                                     std::function<double(double)> sigma2);
  static SyntheticLossModel stylized(std::function<double(double)> h);
};

struct EstimatorReport {
  std::string name;
  std::size_t replicates = 0;
  double mean = 0.0;
  double variance = 0.0;
  double estimate = 0.0;  // the quantity compared with target
  double target = 0.0;
  double standard_error = 0.0;
  double sigma_tolerance = 0.0;     // pass band k * SE (0 = unused)
  double relative_tolerance = 0.0;  // pass band rel * |target| (0 = unused)
  bool passed = false;

  /// Sets `passed` from the recorded bands.
  void judge();
};

nlohmann::json to_json(const EstimatorReport& r);

enum class Scheme { kSync, kAsync };
std::string to_string(Scheme s);

struct BatchEstimate {
  EstimatorReport mean;      // estimate = mean of Z-bar, target E_t[mu]
  EstimatorReport variance;  // estimate = Var(Z-bar), target from quadrature
  std::vector<double> samples;
};

/// Gaussian-analytic model only. Targets: E[mu(t)]; Var(Z-bar) equals
/// Var_t(mu) + E[sigma2] / B (sync) or (Var_t(mu) + E[sigma2]) / B (async).
BatchEstimate estimate_batch_mean_variance(const SyntheticLossModel& model, std::size_t num_blocks,
                                           Scheme scheme, std::size_t replicates,
                                           const RatioDistribution& tdist, Rng& rng);

/// Var(sync) - Var(async) against (1 - 1/B) Var_t(mu(t)). The band is 5%
/// relative when the target is nonzero, 3 SE otherwise.
EstimatorReport variance_gap_report(const BatchEstimate& sync, const BatchEstimate& async,
                                    const SyntheticLossModel& model, std::size_t num_blocks,
                                    const RatioDistribution& tdist);

/// mean(a) - mean(b) against 0 within 3 combined SE.
EstimatorReport mean_equality_report(const std::string& name, std::span<const double> a,
                                     std::span<const double> b);

enum class RatioRule { kUnscaled, kSampledRatio, kEffectiveRatio };
std::string to_string(RatioRule r);

/// Expectations of the stylized block loss l = k h(k / L') under each
/// scaling, by enumeration of all 2^L' masks and quadrature over t. A block
/// with k = 0 contributes 0 under every rule. ideal = E[L' h(t') ; t' > 0].
struct ScalingOracle {
  double sampled = 0.0;    // E[l / t]
  double effective = 0.0;  // E[l / t']
  double ideal = 0.0;
};

/// Throws ContractError for block_len > 20.
ScalingOracle enumerate_scaling_oracle(const std::function<double(double)>& h,
                                       std::size_t block_len, const RatioDistribution& tdist,
                                       std::size_t nodes = 512);

struct ScalingBiasReport {
  EstimatorReport estimator;  // MC mean vs the enumerated expectation for the rule
  double ideal = 0.0;
  double oracle_bias = 0.0;     // enumerated expectation - ideal
  double mc_bias = 0.0;         // MC mean - ideal
  double per_token_bias = 0.0;  // oracle_bias / L'
};

ScalingBiasReport estimate_scaling_bias(const SyntheticLossModel& model, std::size_t block_len,
                                        const RatioDistribution& tdist, RatioRule rule,
                                        std::size_t replicates, Rng& rng);

/// Var(t' - t) over realized masks against t (1 - t) / L'.
EstimatorReport mask_ratio_deviation_variance(std::size_t block_len, double t,
                                              std::size_t replicates, Rng& rng);

struct EndToEndConfig {
  std::size_t num_blocks = 8;
  std::size_t replicates = 2000;
  std::size_t max_block_index = 1;  // pool blocks come from the first two of a sample
  RatioRule rule = RatioRule::kUnscaled;
  std::size_t bootstrap_resamples = 1000;
  double confidence = 0.95;
  std::uint64_t seed = 0;
};

struct EndToEndResult {
  EstimatorReport sync;           // mean / variance of Z-bar under sync
  EstimatorReport async;
  EstimatorReport mean_equality;  // sync vs async means
  EstimatorReport split_half;     // async: first vs second half of replicates
  BootstrapResult gap;
  bool variance_reduced = false;  // bootstrap lower bound > 0
  std::vector<double> sync_samples;
  std::vector<double> async_samples;
};

/// A full block of a corpus sample: tokens [block * K, (block + 1) * K).
struct BlockSource {
  std::size_t sample = 0;
  std::size_t block = 0;
};

/// Full blocks with index <= max_block_index of the plain, prompt-free
/// samples in `slice`.
std::vector<BlockSource> block_pool(std::span<const TokenSequence> slice, std::size_t block_len,
                                    std::size_t max_block_index);

/// Each replicate draws B blocks i.i.d. from block_pool(slice) and reports
/// Z-bar = u . grad(loss) for a fixed unit vector u over all parameters.
/// loss is (1 / B) * sum of block terms under the ratio rule, where a block
/// with no masked token contributes 0. Sync shares one t across the B
/// blocks; async draws one per block.
EndToEndResult end_to_end_lemma_check(const ModelConfig& cfg, const ModelParams& params,
                                      std::span<const TokenSequence> slice,
                                      const EndToEndConfig& ec);

nlohmann::json to_json(const EndToEndResult& r);

}  // namespace blockdiff
