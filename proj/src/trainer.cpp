#include "blockdiff/trainer.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <fstream>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

#include "blockdiff/checkpoint.hpp"
#include "blockdiff/error.hpp"
#include "blockdiff/loss.hpp"
#include "blockdiff/noise.hpp"
#include "blockdiff/ops.hpp"
#include "blockdiff/rng.hpp"
#include "blockdiff/stats.hpp"

namespace blockdiff {

std::vector<ArmSpec> standard_arms(const RunConfig& base) {
  BetaSchedule c25 = base.scheduler.beta;
  c25.c_final = 25.0;
  BetaSchedule c50 = base.scheduler.beta;
  c50.c_final = 50.0;
  return {
      {"SNS", SchedulerKind::sync_uniform(), ScalingRule::kSampledRatio},
      {"ABNS", SchedulerKind::async_uniform(), ScalingRule::kSampledRatio},
      {"ABNS+EMRS", SchedulerKind::async_uniform(), ScalingRule::kEffectiveRatio},
      {"ABNS+EMRS+Clamp(0.45,0.95)", SchedulerKind::async_clamp(0.45, 0.95),
       ScalingRule::kEffectiveRatio},
      {"ABNS+EMRS+PBNC(c=25)", SchedulerKind::async_beta(c25), ScalingRule::kEffectiveRatio},
      {"ABNS+EMRS+PBNC(c=50)", SchedulerKind::async_beta(c50), ScalingRule::kEffectiveRatio},
  };
}

ArmSpec arm_from_config(const RunConfig& cfg, const std::string& name) {
  return {name, cfg.scheduler, cfg.loss.rule};
}

std::string metrics_csv_header() {
  return "step,arm,batch_loss,loss_variance_window,mean_t_prime,num_skipped,token_nll,lr,"
         "wall_clock";
}

namespace {

std::string num(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) {
    return s;
  }
  std::string out = "\"";
  for (char c : s) {
    out += c == '"' ? std::string("\"\"") : std::string(1, c);
  }
  return out + "\"";
}

std::string slug(const std::string& name) {
  std::string out;
  for (char c : name) {
    if (std::isalnum(static_cast<unsigned char>(c))) {
      out += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    } else if (!out.empty() && out.back() != '-') {
      out += '-';
    }
  }
  while (!out.empty() && out.back() == '-') {
    out.pop_back();
  }
  return out.empty() ? "arm" : out;
}

std::vector<std::size_t> think_ids(const ModelConfig& m) {
  return {m.think_open_id, m.think_close_id};
}

std::size_t capacity_of(const RunConfig& cfg) {
  return cfg.train.pack_capacity == 0 ? cfg.model.max_seq_len : cfg.train.pack_capacity;
}

}  // namespace

std::string to_csv(const MetricsRow& r) {
  return std::to_string(r.step) + "," + csv_field(r.arm) + "," + num(r.batch_loss) + "," +
         (r.loss_variance_window ? num(*r.loss_variance_window) : std::string()) + "," +
         num(r.mean_t_prime) + "," + std::to_string(r.num_skipped) + "," + num(r.token_nll) +
         "," + num(r.lr) + "," + num(r.wall_clock);
}

CorpusSplit split_corpus(std::vector<TokenSequence> samples, const RunConfig& cfg) {
  if (samples.empty()) {
    throw ContractError("cannot split an empty corpus");
  }
  const std::size_t cap = capacity_of(cfg);
  for (TokenSequence& s : samples) {
    if (s.size() > cap) {
      s.tokens.resize(cap);
      s.prompt_len = std::min(s.prompt_len, cap);
    }
  }
  CorpusSplit out;
  if (samples.size() == 1) {
    out.train = samples;
    out.eval = samples;
    return out;
  }
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed(cfg.seed, {stream::kData, 0xe7a1ULL}));
  for (std::size_t i = order.size() - 1; i > 0; --i) {
    std::swap(order[i], order[rng.below(i + 1)]);
  }
  std::size_t n_eval = static_cast<std::size_t>(
      std::floor(cfg.train.eval_fraction * static_cast<double>(samples.size())));
  n_eval = std::min({n_eval, cfg.train.eval_max_samples, samples.size() - 1});
  std::vector<bool> held(samples.size(), false);
  for (std::size_t i = 0; i < n_eval; ++i) {
    held[order[i]] = true;
  }
  for (std::size_t i = 0; i < samples.size(); ++i) {
    (held[i] ? out.eval : out.train).push_back(std::move(samples[i]));
  }
  if (out.eval.empty()) {
    out.eval = out.train;
  }
  return out;
}

Optimizer::Optimizer(const OptimizerConfig& cfg, const ModelParams& params) : cfg_(cfg) {
  for (const auto& [name, t] : params.named()) {
    v_.emplace_back(t.numel(), 0.0);
  }
}

void Optimizer::step(ModelParams& params) {
  ++n_;
  auto named = params.named();
  double clip_scale = 1.0;
  if (cfg_.grad_clip > 0.0) {
    double norm2 = 0.0;
    for (const auto& [name, t] : named) {
      if (t.has_grad()) {
        for (double g : t.grad()) {
          norm2 += g * g;
        }
      }
    }
    const double norm = std::sqrt(norm2);
    if (norm > cfg_.grad_clip) {
      clip_scale = cfg_.grad_clip / norm;
    }
  }
  const double correction = 1.0 - std::pow(cfg_.beta2, static_cast<double>(n_));
  for (std::size_t p = 0; p < named.size(); ++p) {
    Tensor& t = named[p].second;
    if (!t.has_grad()) {
      continue;
    }
    const auto g = t.grad();
    auto w = t.mutable_values();
    auto& v = v_[p];
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = g[i] * clip_scale;
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * gi * gi;
      w[i] -= cfg_.lr * gi / (std::sqrt(v[i] / correction) + cfg_.eps);
    }
  }
}

namespace {

struct StepLoss {
  LossResult combined;
  double ell_total = 0.0;
  std::size_t masked = 0;
  double t_prime_sum = 0.0;
  std::size_t blocks = 0;
};

/// Ratios for the blocks of one row. `block_offset` is the running block
/// count of earlier rows in the step.
std::vector<double> row_ratios(const RunConfig& cfg, const SchedulerKind& kind,
                               const PackedRow& row, const std::vector<BlockSpan>& blocks,
                               std::size_t step, std::size_t block_offset) {
  std::vector<double> ratios;
  ratios.reserve(blocks.size());
  if (kind.synchronous() && cfg.sync_scope == SyncScope::kStep) {
    Rng r(derive_seed(cfg.seed, {stream::kRatio, step}));
    ratios.assign(blocks.size(), draw_ratio(r, kind, step));
    return ratios;
  }
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    if (kind.synchronous()) {
      const std::uint64_t member = row.members[blocks[i].sample_index];
      Rng r(derive_seed(cfg.seed, {stream::kRatio, step, 1, member}));
      ratios.push_back(draw_ratio(r, kind, step));
    } else {
      Rng r(derive_seed(cfg.seed, {stream::kRatio, step, 2, block_offset + i}));
      ratios.push_back(draw_ratio(r, kind, step));
    }
  }
  return ratios;
}

StepLoss step_loss(const RunConfig& cfg, const SchedulerKind& kind, ScalingRule rule,
                   const ModelParams& params, const std::vector<TokenSequence>& batch,
                   std::size_t step) {
  const auto rows = pack_samples(batch, capacity_of(cfg), think_ids(cfg.model));
  BlockStreams masks(derive_seed(cfg.seed, {stream::kMask, step}), stream::kMask);
  StepLoss out;
  std::vector<LossResult> parts;
  std::size_t offset = 0;
  for (const PackedRow& row : rows) {
    const auto blocks = supervised_blocks(row, cfg.model.block_len);
    const auto ratios = row_ratios(cfg, kind, row, blocks, step, offset);
    const auto draws = draw_block_masks(row, blocks, ratios, masks, offset);
    offset += blocks.size();
    if (draws.empty()) {
      continue;
    }
    const auto corrupted =
        apply_corruption(row.tokens, draws, row.supervision, cfg.model.mask_token_id);
    const auto input =
        teacher_forced_input(row.tokens, corrupted, row.sample_starts, cfg.model.block_len);
    const Tensor logits = forward_teacher_forced(cfg.model, params, input);
    parts.push_back(bd3_loss(logits, row.tokens, draws, row.supervision, rule,
                             Aggregation::kBlockSum));
    for (const BlockLoss& b : parts.back().breakdown.per_block) {
      out.ell_total += b.ell;
      out.masked += b.masked_count;
      out.t_prime_sum += b.t_prime;
      ++out.blocks;
    }
  }
  out.combined = combine_rows(parts, cfg.loss.aggregation, cfg.loss.skip_zero_mask_blocks);
  return out;
}

void check_finite_params(const ModelParams& params, std::size_t step, const std::string& arm) {
  if (!params.all_finite()) {
    throw TrainingError("non-finite parameter after step " + std::to_string(step) + " in arm " +
                        arm);
  }
}

}  // namespace

TrainResult train(const RunConfig& cfg, const CorpusSplit& data, const ArmSpec& arm,
                  const std::optional<std::filesystem::path>& output_dir) {
  cfg.validate();
  if (data.train.empty()) {
    throw ContractError("training split is empty");
  }
  SchedulerKind kind = arm.scheduler;
  kind.beta.warmup_steps = cfg.warmup_steps();
  kind.validate();

  TrainResult res;
  res.arm = arm.name;
  res.params = init_params(cfg.model, cfg.seed);
  Optimizer opt(cfg.optimizer, res.params);

  std::vector<std::size_t> plain, all(data.train.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  for (std::size_t i = 0; i < data.train.size(); ++i) {
    if (data.train[i].role == TokenSequence::Role::kPlain) {
      plain.push_back(i);
    }
  }
  const auto cot_start = static_cast<std::size_t>(
      std::round(cfg.train.cot_start_frac * static_cast<double>(cfg.train.steps)));

  std::ofstream metrics_out;
  if (output_dir) {
    std::filesystem::create_directories(*output_dir);
    metrics_out.open(*output_dir / "metrics.csv", std::ios::trunc);
    if (!metrics_out) {
      throw FormatError("cannot write " + (*output_dir / "metrics.csv").string());
    }
    metrics_out << metrics_csv_header() << "\n";
  }

  const auto t0 = std::chrono::steady_clock::now();
  std::vector<double> losses;
  losses.reserve(cfg.train.steps);
  for (std::size_t step = 0; step < cfg.train.steps; ++step) {
    const auto& pool = (step < cot_start && !plain.empty()) ? plain : all;
    Rng data_rng(derive_seed(cfg.seed, {stream::kData, step}));
    std::vector<TokenSequence> batch;
    batch.reserve(cfg.train.batch_size);
    for (std::size_t i = 0; i < cfg.train.batch_size; ++i) {
      batch.push_back(data.train[pool[data_rng.below(pool.size())]]);
    }

    const StepLoss sl = step_loss(cfg, kind, arm.rule, res.params, batch, step);
    const double loss = sl.combined.breakdown.batch_loss;
    if (!std::isfinite(loss)) {
      throw TrainingError("non-finite loss at step " + std::to_string(step) + " in arm " +
                          arm.name);
    }
    if (sl.combined.loss.requires_grad()) {
      res.params.zero_grad();
      backward(sl.combined.loss);
      opt.step(res.params);
      check_finite_params(res.params, step, arm.name);
    }

    losses.push_back(loss);
    MetricsRow row;
    row.step = step;
    row.arm = arm.name;
    row.batch_loss = loss;
    if (losses.size() >= cfg.train.variance_window) {
      row.loss_variance_window = variance(
          std::span<const double>(losses).last(cfg.train.variance_window));
    }
    row.mean_t_prime = sl.blocks == 0 ? 0.0 : sl.t_prime_sum / static_cast<double>(sl.blocks);
    row.num_skipped = sl.combined.breakdown.num_skipped;
    row.token_nll = sl.masked == 0 ? 0.0 : sl.ell_total / static_cast<double>(sl.masked);
    row.lr = cfg.optimizer.lr;
    if (cfg.train.record_wall_clock) {
      row.wall_clock =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    }
    if (metrics_out.is_open()) {
      metrics_out << to_csv(row) << "\n";
    }
    res.metrics.push_back(std::move(row));

    if (output_dir && cfg.train.checkpoint_every > 0 && (step + 1) % cfg.train.checkpoint_every == 0 &&
        step + 1 < cfg.train.steps) {
      save_checkpoint(*output_dir / ("step" + std::to_string(step + 1) + ".bdck"), cfg.model,
                      res.params);
    }
  }
  res.params.zero_grad();
  if (output_dir) {
    save_checkpoint(*output_dir / "final.bdck", cfg.model, res.params);
  }
  return res;
}

namespace {

/// Sum of weighted NLL over masked supervised positions, and their count.
std::pair<double, std::size_t> masked_nll(const ModelConfig& cfg, const ModelParams& params,
                                          const TokenSequence& sample, double t,
                                          std::uint64_t mask_seed) {
  const PackedRow row = single_row(sample, think_ids(cfg));
  const auto blocks = supervised_blocks(row, cfg.block_len);
  if (blocks.empty()) {
    return {0.0, 0};
  }
  const std::vector<double> ratios(blocks.size(), t);
  BlockStreams masks(mask_seed, stream::kMask);
  const auto draws = draw_block_masks(row, blocks, ratios, masks);
  const auto corrupted = apply_corruption(row.tokens, draws, row.supervision, cfg.mask_token_id);
  const auto input = teacher_forced_input(row.tokens, corrupted, row.sample_starts, cfg.block_len);
  const Tensor nll = ops::token_nll(forward_teacher_forced(cfg, params, input), row.tokens);
  const auto nv = nll.values();
  double sum = 0.0;
  std::size_t count = 0;
  for (const NoiseDraw& d : draws) {
    for (std::size_t j = 0; j < d.mask.size(); ++j) {
      const std::size_t p = d.positions[j];
      if (d.mask[j] != 0 && row.supervision.loss_weight[p] > 0.0) {
        sum += row.supervision.loss_weight[p] * nv[p];
        ++count;
      }
    }
  }
  return {sum, count};
}

}  // namespace

std::vector<double> uniform_grid(std::size_t points) {
  if (points == 0) {
    throw ContractError("grid needs at least one point");
  }
  std::vector<double> g;
  for (std::size_t j = 1; j <= points; ++j) {
    g.push_back(static_cast<double>(j) / static_cast<double>(points));
  }
  return g;
}

EvalResult evaluate_nll(const ModelConfig& cfg, const ModelParams& params,
                        const std::vector<TokenSequence>& samples, std::size_t grid_points,
                        std::uint64_t seed) {
  const auto grid = uniform_grid(grid_points);
  EvalResult out;
  double total = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    for (std::size_t j = 0; j < grid.size(); ++j) {
      const auto [sum, count] =
          masked_nll(cfg, params, samples[i], grid[j], derive_seed(seed, {stream::kEval, 0, i, j}));
      if (count == 0) {
        continue;
      }
      total += sum;
      out.masked_tokens += count;
      out.item_nll.push_back(sum / static_cast<double>(count));
    }
  }
  out.mean_nll = out.masked_tokens == 0 ? 0.0 : total / static_cast<double>(out.masked_tokens);
  return out;
}

SweepResult sweep_loss_vs_t(const ModelConfig& cfg, const ModelParams& params,
                            const std::vector<TokenSequence>& samples,
                            const std::vector<double>& grid, std::size_t masks_per_t,
                            std::uint64_t seed) {
  if (grid.empty() || masks_per_t == 0 || samples.empty()) {
    throw ContractError("sweep needs a grid, samples and at least one mask per point");
  }
  for (double t : grid) {
    if (!(t > 0.0 && t <= 1.0)) {
      throw ContractError("sweep grid values must lie in (0, 1]");
    }
  }
  SweepResult out;
  for (std::size_t j = 0; j < grid.size(); ++j) {
    double total = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
      for (std::size_t m = 0; m < masks_per_t; ++m) {
        const auto [s, c] = masked_nll(cfg, params, samples[i], grid[j],
                                       derive_seed(seed, {stream::kEval, 1, j, i, m}));
        total += s;
        count += c;
      }
    }
    out.t.push_back(grid[j]);
    out.mean_loss.push_back(count == 0 ? 0.0 : total / static_cast<double>(count));
    out.masked_tokens.push_back(count);
  }
  out.spearman = spearman(out.t, out.mean_loss);
  return out;
}

nlohmann::json to_json(const SweepResult& s) {
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t i = 0; i < s.t.size(); ++i) {
    rows.push_back({{"t", s.t[i]}, {"mean_loss", s.mean_loss[i]}, {"masked_tokens", s.masked_tokens[i]}});
  }
  return {{"points", rows}, {"spearman", s.spearman}};
}

nlohmann::json AblationReport::to_json() const {
  nlohmann::json arr = nlohmann::json::array();
  for (const ArmOutcome& a : arms) {
    arr.push_back({{"arm", a.result.arm},
                   {"held_out_nll", a.eval.mean_nll},
                   {"held_out_tokens", a.eval.masked_tokens},
                   {"diff_vs_baseline", a.diff_vs_baseline},
                   {"diff_standard_error", a.diff_standard_error},
                   {"indistinguishable_from_baseline", a.indistinguishable},
                   {"final_batch_loss", a.result.metrics.empty() ? 0.0 : a.result.metrics.back().batch_loss},
                   {"mean_window_variance", a.mean_window_variance},
                   {"steps", a.result.metrics.size()}});
  }
  return {{"baseline", arms.empty() ? std::string() : arms.front().result.arm}, {"arms", arr}};
}

std::string AblationReport::to_csv() const {
  std::string out =
      "arm,held_out_nll,diff_vs_baseline,diff_standard_error,indistinguishable,"
      "mean_window_variance,steps\n";
  for (const ArmOutcome& a : arms) {
    out += csv_field(a.result.arm) + "," + num(a.eval.mean_nll) + "," + num(a.diff_vs_baseline) +
           "," + num(a.diff_standard_error) + "," + (a.indistinguishable ? "true" : "false") + "," +
           num(a.mean_window_variance) + "," + std::to_string(a.result.metrics.size()) + "\n";
  }
  return out;
}

AblationReport run_ablation(const RunConfig& cfg, const CorpusSplit& data,
                            const std::vector<ArmSpec>& arms,
                            const std::optional<std::filesystem::path>& output_dir) {
  if (arms.empty()) {
    throw ContractError("ablation needs at least one arm");
  }
  AblationReport report;
  report.arms.resize(arms.size());
  std::atomic<std::size_t> next{0};
  std::mutex error_mu;
  std::exception_ptr error;
  auto worker = [&] {
    for (std::size_t k = next++; k < arms.size(); k = next++) {
      try {
        std::optional<std::filesystem::path> dir;
        if (output_dir) {
          dir = *output_dir / (std::to_string(k) + "-" + slug(arms[k].name));
        }
        ArmOutcome& o = report.arms[k];
        o.result = train(cfg, data, arms[k], dir);
        o.eval = evaluate_nll(cfg.model, o.result.params, data.eval, cfg.train.eval_grid_points,
                              cfg.seed);
        std::vector<double> losses;
        for (const MetricsRow& r : o.result.metrics) {
          losses.push_back(r.batch_loss);
        }
        if (losses.size() >= cfg.train.variance_window) {
          o.mean_window_variance = mean(sliding_window_variance(losses, cfg.train.variance_window));
        }
      } catch (...) {
        std::lock_guard lock(error_mu);
        if (!error) {
          error = std::current_exception();
        }
      }
    }
  };
  const std::size_t n_threads = std::clamp<std::size_t>(cfg.train.threads, 1, arms.size());
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t i = 0; i < n_threads; ++i) {
      pool.emplace_back(worker);
    }
    for (auto& th : pool) {
      th.join();
    }
  }
  if (error) {
    std::rethrow_exception(error);
  }

  const EvalResult& base = report.arms.front().eval;
  for (ArmOutcome& o : report.arms) {
    o.diff_vs_baseline = o.eval.mean_nll - base.mean_nll;
    std::vector<double> d(o.eval.item_nll.size());
    for (std::size_t i = 0; i < d.size(); ++i) {
      d[i] = o.eval.item_nll[i] - base.item_nll[i];
    }
    o.diff_standard_error = d.size() < 2 ? 0.0 : std::sqrt(variance(d) / static_cast<double>(d.size()));
    o.indistinguishable = std::abs(o.diff_vs_baseline) < 2.0 * o.diff_standard_error ||
                          o.diff_vs_baseline == 0.0;
  }
  if (output_dir) {
    std::ofstream(*output_dir / "report.json") << report.to_json().dump(2) << "\n";
    std::ofstream(*output_dir / "ablation.csv") << report.to_csv();
  }
  return report;
}

}  // namespace blockdiff
