#include "blockdiff/theory.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numbers>

#include "blockdiff/error.hpp"
#include "blockdiff/loss.hpp"
#include "blockdiff/noise.hpp"

namespace blockdiff {

void RatioDistribution::validate() const {
  if (!(lo >= 0.0 && hi <= 1.0 && lo <= hi && hi > 0.0)) {
    throw ContractError("ratio distribution needs 0 <= lo <= hi <= 1 and hi > 0");
  }
}

double RatioDistribution::draw(Rng& rng) const {
  if (is_fixed()) {
    return lo;
  }
  return lo + (hi - lo) * rng.uniform_open0();
}

void gauss_legendre(std::size_t n, std::vector<double>& nodes, std::vector<double>& weights) {
  if (n == 0) {
    throw ContractError("Gauss-Legendre needs at least one node");
  }
  nodes.assign(n, 0.0);
  weights.assign(n, 0.0);
  const double nd = static_cast<double>(n);
  for (std::size_t i = 0; i < (n + 1) / 2; ++i) {
    double x = std::cos(std::numbers::pi * (static_cast<double>(i) + 0.75) / (nd + 0.5));
    double dp = 0.0;
    for (int iter = 0; iter < 100; ++iter) {
      double p0 = 1.0;
      double p1 = x;
      for (std::size_t k = 2; k <= n; ++k) {
        const double kd = static_cast<double>(k);
        const double p2 = ((2.0 * kd - 1.0) * x * p1 - (kd - 1.0) * p0) / kd;
        p0 = p1;
        p1 = p2;
      }
      dp = nd * (x * p1 - p0) / (x * x - 1.0);
      const double dx = p1 / dp;
      x -= dx;
      if (std::abs(dx) < 1e-15) {
        break;
      }
    }
    const double w = 2.0 / ((1.0 - x * x) * dp * dp);
    nodes[i] = -x;
    nodes[n - 1 - i] = x;
    weights[i] = w;
    weights[n - 1 - i] = w;
  }
}

double RatioDistribution::expect(const std::function<double(double)>& f, std::size_t n) const {
  if (is_fixed()) {
    return f(lo);
  }
  std::vector<double> x, w;
  gauss_legendre(n, x, w);
  const double half = 0.5 * (hi - lo);
  const double mid = 0.5 * (hi + lo);
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    acc += w[i] * f(mid + half * x[i]);
  }
  // Density 1 / (hi - lo) times Jacobian half.
  return acc * 0.5;
}

SyntheticLossModel SyntheticLossModel::gaussian(std::function<double(double)> mu,
                                                std::function<double(double)> sigma2) {
  SyntheticLossModel m;
  m.kind = Kind::kGaussianAnalytic;
  m.mu = std::move(mu);
  m.sigma2 = std::move(sigma2);
  return m;
}

SyntheticLossModel SyntheticLossModel::stylized(std::function<double(double)> h) {
  SyntheticLossModel m;
  m.kind = Kind::kBernoulliMaskStylized;
  m.h = std::move(h);
  return m;
}

void EstimatorReport::judge() {
  const double dev = std::abs(estimate - target);
  const bool by_sigma = sigma_tolerance > 0.0 && dev <= sigma_tolerance * standard_error;
  const bool by_rel = relative_tolerance > 0.0 && dev <= relative_tolerance * std::abs(target);
  passed = by_sigma || by_rel || (dev == 0.0);
}

nlohmann::json to_json(const EstimatorReport& r) {
  return {{"name", r.name},
          {"replicates", r.replicates},
          {"mean", r.mean},
          {"variance", r.variance},
          {"estimate", r.estimate},
          {"target", r.target},
          {"standard_error", r.standard_error},
          {"sigma_tolerance", r.sigma_tolerance},
          {"relative_tolerance", r.relative_tolerance},
          {"passed", r.passed}};
}

std::string to_string(Scheme s) { return s == Scheme::kSync ? "sync" : "async"; }

std::string to_string(RatioRule r) {
  switch (r) {
    case RatioRule::kUnscaled:
      return "unscaled";
    case RatioRule::kSampledRatio:
      return "sampled-ratio";
    case RatioRule::kEffectiveRatio:
      return "effective-ratio";
  }
  return "?";
}

namespace {

struct MuMoments {
  double mean;
  double var_mu;
  double mean_sigma2;
};

MuMoments mu_moments(const SyntheticLossModel& m, const RatioDistribution& tdist) {
  const double e1 = tdist.expect(m.mu);
  const double e2 = tdist.expect([&](double t) { return m.mu(t) * m.mu(t); });
  return {e1, std::max(e2 - e1 * e1, 0.0), tdist.expect(m.sigma2)};
}

void fill_from_samples(EstimatorReport& r, std::span<const double> xs) {
  r.replicates = xs.size();
  r.mean = mean(xs);
  r.variance = variance(xs);
}

}  // namespace

BatchEstimate estimate_batch_mean_variance(const SyntheticLossModel& model, std::size_t num_blocks,
                                           Scheme scheme, std::size_t replicates,
                                           const RatioDistribution& tdist, Rng& rng) {
  if (model.kind != SyntheticLossModel::Kind::kGaussianAnalytic) {
    throw ContractError("batch mean/variance estimator needs the gaussian-analytic model");
  }
  if (num_blocks == 0 || replicates < 2) {
    throw ContractError("need at least one block and two replicates");
  }
  tdist.validate();
  BatchEstimate out;
  out.samples.reserve(replicates);
  RunningMoments rm;
  for (std::size_t r = 0; r < replicates; ++r) {
    double shared = scheme == Scheme::kSync ? tdist.draw(rng) : 0.0;
    double acc = 0.0;
    for (std::size_t b = 0; b < num_blocks; ++b) {
      const double t = scheme == Scheme::kSync ? shared : tdist.draw(rng);
      acc += model.mu(t) + std::sqrt(model.sigma2(t)) * rng.normal();
    }
    const double zbar = acc / static_cast<double>(num_blocks);
    out.samples.push_back(zbar);
    rm.push(zbar);
  }
  const MuMoments mm = mu_moments(model, tdist);
  const double bd = static_cast<double>(num_blocks);
  const std::string tag = to_string(scheme);

  out.mean.name = tag + " mean";
  fill_from_samples(out.mean, out.samples);
  out.mean.estimate = rm.mean();
  out.mean.target = mm.mean;
  out.mean.standard_error = rm.standard_error();
  out.mean.sigma_tolerance = 3.0;
  out.mean.judge();

  out.variance.name = tag + " variance";
  fill_from_samples(out.variance, out.samples);
  out.variance.estimate = rm.variance();
  out.variance.target = scheme == Scheme::kSync ? mm.var_mu + mm.mean_sigma2 / bd
                                                : (mm.var_mu + mm.mean_sigma2) / bd;
  out.variance.standard_error = variance_standard_error(out.samples);
  out.variance.relative_tolerance = 0.05;
  out.variance.judge();
  return out;
}

EstimatorReport variance_gap_report(const BatchEstimate& sync, const BatchEstimate& async,
                                    const SyntheticLossModel& model, std::size_t num_blocks,
                                    const RatioDistribution& tdist) {
  EstimatorReport r;
  r.name = "variance gap sync - async";
  r.replicates = std::min(sync.samples.size(), async.samples.size());
  r.estimate = sync.variance.estimate - async.variance.estimate;
  r.mean = r.estimate;
  r.target = (1.0 - 1.0 / static_cast<double>(num_blocks)) * mu_moments(model, tdist).var_mu;
  r.standard_error = std::hypot(sync.variance.standard_error, async.variance.standard_error);
  if (r.target == 0.0) {
    r.sigma_tolerance = 3.0;
  } else {
    r.relative_tolerance = 0.05;
  }
  r.judge();
  return r;
}

EstimatorReport mean_equality_report(const std::string& name, std::span<const double> a,
                                     std::span<const double> b) {
  EstimatorReport r;
  r.name = name;
  r.replicates = std::min(a.size(), b.size());
  r.estimate = mean(a) - mean(b);
  r.mean = r.estimate;
  r.target = 0.0;
  const double se_a = std::sqrt(variance(a) / static_cast<double>(a.size()));
  const double se_b = std::sqrt(variance(b) / static_cast<double>(b.size()));
  r.standard_error = std::hypot(se_a, se_b);
  r.sigma_tolerance = 3.0;
  r.judge();
  return r;
}

ScalingOracle enumerate_scaling_oracle(const std::function<double(double)>& h,
                                       std::size_t block_len, const RatioDistribution& tdist,
                                       std::size_t nodes) {
  if (block_len == 0 || block_len > 20) {
    throw ContractError("enumeration oracle supports 1 <= block_len <= 20, got " +
                        std::to_string(block_len));
  }
  tdist.validate();
  // Masks grouped by popcount: count[k] masks have k positions set.
  std::vector<double> count(block_len + 1, 0.0);
  const std::uint32_t total = 1u << block_len;
  for (std::uint32_t m = 0; m < total; ++m) {
    count[static_cast<std::size_t>(std::popcount(m))] += 1.0;
  }
  const double len = static_cast<double>(block_len);
  auto at_t = [&](double t, int which) {
    double acc = 0.0;
    for (std::size_t k = 1; k <= block_len; ++k) {
      const double kd = static_cast<double>(k);
      const double p = count[k] * std::pow(t, kd) * std::pow(1.0 - t, len - kd);
      const double ell = kd * h(kd / len);
      const double v = which == 0 ? ell / t : which == 1 ? ell / (kd / len) : len * h(kd / len);
      acc += p * v;
    }
    return acc;
  };
  ScalingOracle o;
  o.sampled = tdist.expect([&](double t) { return at_t(t, 0); }, nodes);
  o.effective = tdist.expect([&](double t) { return at_t(t, 1); }, nodes);
  o.ideal = tdist.expect([&](double t) { return at_t(t, 2); }, nodes);
  return o;
}

ScalingBiasReport estimate_scaling_bias(const SyntheticLossModel& model, std::size_t block_len,
                                        const RatioDistribution& tdist, RatioRule rule,
                                        std::size_t replicates, Rng& rng) {
  if (model.kind != SyntheticLossModel::Kind::kBernoulliMaskStylized) {
    throw ContractError("scaling bias estimator needs the bernoulli-mask-stylized model");
  }
  if (rule == RatioRule::kUnscaled) {
    throw ContractError("scaling bias is defined for the sampled and effective rules");
  }
  if (block_len == 0 || replicates < 2) {
    throw ContractError("need block_len >= 1 and at least two replicates");
  }
  const ScalingOracle oracle = enumerate_scaling_oracle(model.h, block_len, tdist);
  std::vector<double> xs;
  xs.reserve(replicates);
  for (std::size_t r = 0; r < replicates; ++r) {
    const double t = tdist.draw(rng);
    const NoiseDraw d = realize_mask(rng, t, block_len);
    const std::size_t k = d.masked_count();
    double v = 0.0;
    if (k > 0) {
      const double ell = static_cast<double>(k) * model.h(d.t_prime);
      v = rule == RatioRule::kSampledRatio ? ell / t : ell / d.t_prime;
    }
    xs.push_back(v);
  }
  ScalingBiasReport out;
  EstimatorReport& e = out.estimator;
  e.name = to_string(rule) + " estimator, L'=" + std::to_string(block_len);
  fill_from_samples(e, xs);
  e.estimate = e.mean;
  e.target = rule == RatioRule::kSampledRatio ? oracle.sampled : oracle.effective;
  e.standard_error = std::sqrt(e.variance / static_cast<double>(replicates));
  e.sigma_tolerance = 3.0;
  e.judge();
  out.ideal = oracle.ideal;
  out.oracle_bias = e.target - oracle.ideal;
  out.mc_bias = e.mean - oracle.ideal;
  out.per_token_bias = out.oracle_bias / static_cast<double>(block_len);
  return out;
}

EstimatorReport mask_ratio_deviation_variance(std::size_t block_len, double t,
                                              std::size_t replicates, Rng& rng) {
  if (replicates < 2) {
    throw ContractError("need at least two replicates");
  }
  std::vector<double> dev;
  dev.reserve(replicates);
  for (std::size_t r = 0; r < replicates; ++r) {
    dev.push_back(realize_mask(rng, t, block_len).t_prime - t);
  }
  EstimatorReport e;
  e.name = "Var(t' - t), L'=" + std::to_string(block_len) + ", t=" + std::to_string(t);
  fill_from_samples(e, dev);
  e.estimate = e.variance;
  e.target = t * (1.0 - t) / static_cast<double>(block_len);
  e.standard_error = variance_standard_error(dev);
  e.relative_tolerance = 0.05;
  e.judge();
  return e;
}

namespace {

std::vector<double> projection_vector(const ModelParams& params, std::uint64_t seed) {
  Rng rng(derive_seed(seed, {stream::kTheory, 0x70726f6aULL}));
  std::vector<double> u(params.parameter_count());
  double norm2 = 0.0;
  for (double& x : u) {
    x = rng.normal();
    norm2 += x * x;
  }
  const double inv = 1.0 / std::sqrt(norm2);
  for (double& x : u) {
    x *= inv;
  }
  return u;
}

double projected_gradient(const ModelParams& params, std::span<const double> u) {
  double acc = 0.0;
  std::size_t at = 0;
  for (const auto& [name, t] : params.named()) {
    const std::size_t n = t.numel();
    if (t.has_grad()) {
      const auto g = t.grad();
      for (std::size_t i = 0; i < n; ++i) {
        acc += u[at + i] * g[i];
      }
    }
    at += n;
  }
  return acc;
}

}  // namespace

std::vector<BlockSource> block_pool(std::span<const TokenSequence> slice, std::size_t block_len,
                                    std::size_t max_block_index) {
  if (block_len == 0) {
    throw ContractError("block_len must be at least 1");
  }
  std::vector<BlockSource> pool;
  for (std::size_t s = 0; s < slice.size(); ++s) {
    if (slice[s].prompt_len != 0 || slice[s].role != TokenSequence::Role::kPlain) {
      continue;
    }
    const std::size_t full = slice[s].size() / block_len;
    for (std::size_t b = 0; b < std::min(full, max_block_index + 1); ++b) {
      pool.push_back({s, b});
    }
  }
  return pool;
}

EndToEndResult end_to_end_lemma_check(const ModelConfig& cfg, const ModelParams& base,
                                      std::span<const TokenSequence> slice,
                                      const EndToEndConfig& ec) {
  const std::size_t k = cfg.block_len;
  const auto pool = block_pool(slice, k, ec.max_block_index);
  if (ec.num_blocks == 0 || pool.empty()) {
    throw ContractError("end-to-end check needs B >= 1 and a slice with at least one full block");
  }
  if ((ec.max_block_index + 1) * k > cfg.max_seq_len) {
    throw ContractError("end-to-end block prefixes exceed max_seq_len");
  }
  if (ec.replicates < 4) {
    throw ContractError("end-to-end check needs at least four replicates");
  }
  const std::vector<std::size_t> always{cfg.think_open_id, cfg.think_close_id};

  ModelParams params = base.clone();
  const auto u = projection_vector(params, ec.seed);
  const ScalingRule rule =
      ec.rule == RatioRule::kEffectiveRatio ? ScalingRule::kEffectiveRatio : ScalingRule::kSampledRatio;

  auto run = [&](Scheme scheme) {
    std::vector<double> zs;
    zs.reserve(ec.replicates);
    for (std::size_t r = 0; r < ec.replicates; ++r) {
      const std::uint64_t rep_seed =
          derive_seed(ec.seed, {stream::kTheory, static_cast<std::uint64_t>(scheme), r});
      // B blocks drawn i.i.d. from the pool; each member is its sample's
      // prefix through the chosen block, with only that block supervised.
      Rng pick(derive_seed(rep_seed, {stream::kData}));
      PackedRow row;
      row.supervision.always_mask_ids = always;
      for (std::size_t i = 0; i < ec.num_blocks; ++i) {
        const BlockSource& src = pool[pick.below(pool.size())];
        const TokenSequence& s = slice[src.sample];
        row.sample_starts.push_back(row.size());
        row.members.push_back(src.sample);
        for (std::size_t p = 0; p < (src.block + 1) * k; ++p) {
          row.tokens.push_back(s.tokens[p]);
          row.positions.push_back(p);
          row.supervision.loss_weight.push_back(p >= src.block * k ? 1.0 : 0.0);
        }
      }
      const auto blocks = supervised_blocks(row, k);
      Rng ratio_rng(derive_seed(rep_seed, {stream::kRatio}));
      const auto ratios = scheme == Scheme::kSync
                              ? sample_sync(ratio_rng, blocks.size())
                              : sample_async(ratio_rng, blocks.size(),
                                             SchedulerKind::async_uniform(), 0);
      BlockStreams masks(rep_seed, stream::kMask);
      auto draws = draw_block_masks(row, blocks, ratios, masks);
      const auto corrupted = apply_corruption(row.tokens, draws, row.supervision, cfg.mask_token_id);
      if (ec.rule == RatioRule::kUnscaled) {
        for (NoiseDraw& d : draws) {
          d.t = 1.0;
        }
      }
      const auto input = teacher_forced_input(row.tokens, corrupted, row.sample_starts, k);
      const Tensor logits = forward_teacher_forced(cfg, params, input);
      // Fixed divisor B: Z-bar stays a plain mean of per-block terms.
      const LossResult lr = bd3_loss(logits, row.tokens, draws, row.supervision, rule,
                                     Aggregation::kBlockMean, false);
      params.zero_grad();
      double z = 0.0;
      if (lr.loss.requires_grad()) {
        backward(lr.loss);
        z = projected_gradient(params, u);
      }
      zs.push_back(z);
    }
    return zs;
  };

  EndToEndResult out;
  out.sync_samples = run(Scheme::kSync);
  out.async_samples = run(Scheme::kAsync);

  auto describe = [&](const std::string& name, const std::vector<double>& xs) {
    EstimatorReport e;
    e.name = name;
    fill_from_samples(e, xs);
    e.estimate = e.variance;
    e.standard_error = variance_standard_error(xs);
    e.passed = true;
    return e;
  };
  out.sync = describe("sync projected gradient", out.sync_samples);
  out.async = describe("async projected gradient", out.async_samples);
  out.mean_equality = mean_equality_report("sync vs async mean", out.sync_samples, out.async_samples);
  const std::size_t half = out.async_samples.size() / 2;
  out.split_half = mean_equality_report(
      "async split-half mean",
      std::span<const double>(out.async_samples).first(half),
      std::span<const double>(out.async_samples).subspan(half));
  Rng boot(derive_seed(ec.seed, {stream::kBootstrap}));
  out.gap = bootstrap_variance_gap(out.sync_samples, out.async_samples, ec.bootstrap_resamples,
                                   ec.confidence, boot);
  out.variance_reduced = out.gap.lower_bound > 0.0;
  return out;
}

nlohmann::json to_json(const EndToEndResult& r) {
  return {{"sync", to_json(r.sync)},
          {"async", to_json(r.async)},
          {"mean_equality", to_json(r.mean_equality)},
          {"split_half", to_json(r.split_half)},
          {"variance_gap",
           {{"observed", r.gap.observed},
            {"lower_bound", r.gap.lower_bound},
            {"fraction_positive", r.gap.fraction_positive},
            {"resamples", r.gap.resamples}}},
          {"variance_reduced", r.variance_reduced}};
}

}  // namespace blockdiff
