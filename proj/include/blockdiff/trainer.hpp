#pragma once

// Training loop, held-out evaluation, loss-vs-ratio sweep and ablations.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "blockdiff/config.hpp"
#include "blockdiff/model.hpp"
#include "blockdiff/sequence.hpp"
#include "json.hpp"

namespace blockdiff {

/// One arm of an ablation: a scheduler plus a scaling rule.
struct ArmSpec {
  std::string name;
  SchedulerKind scheduler;
  ScalingRule rule = ScalingRule::kEffectiveRatio;
};

/// SNS, ABNS, ABNS+EMRS, +Clamp(0.45, 0.95), +PBNC(c=25), +PBNC(c=50).
/// The PBNC arms take mu/c_start from `base` and set c_final.
std::vector<ArmSpec> standard_arms(const RunConfig& base);

/// The arm described by the config's own scheduler and loss rule.
ArmSpec arm_from_config(const RunConfig& cfg, const std::string& name = "run");

struct MetricsRow {
  std::size_t step = 0;
  std::string arm;
  double batch_loss = 0.0;
  std::optional<double> loss_variance_window;  // from step window - 1 on
  double mean_t_prime = 0.0;
  std::size_t num_skipped = 0;
  double token_nll = 0.0;  // unscaled NLL per masked supervised token
  double lr = 0.0;
  double wall_clock = 0.0;  // seconds; 0 unless record_wall_clock
};

std::string metrics_csv_header();
std::string to_csv(const MetricsRow& row);

struct CorpusSplit {
  std::vector<TokenSequence> train;
  std::vector<TokenSequence> eval;  // same as train when the corpus has one sample
};

/// Crops samples to the pack capacity, then holds out a seeded
/// eval_fraction (at most eval_max_samples).
CorpusSplit split_corpus(std::vector<TokenSequence> samples, const RunConfig& cfg);

/// Adaptive step without momentum: v = b2 v + (1 - b2) g^2,
/// p -= lr g / (sqrt(v / (1 - b2^n)) + eps).
class Optimizer {
 public:
  Optimizer(const OptimizerConfig& cfg, const ModelParams& params);
  void step(ModelParams& params);
  std::size_t steps_taken() const { return n_; }

 private:
  OptimizerConfig cfg_;
  std::vector<std::vector<double>> v_;
  std::size_t n_ = 0;
};

struct TrainResult {
  std::string arm;
  ModelParams params;
  std::vector<MetricsRow> metrics;
};

/// Runs cfg.train.steps steps of `arm` from init_params(cfg.model, seed).
/// When `output_dir` is set, writes metrics.csv and checkpoints there.
/// Throws TrainingError on a non-finite loss or parameter.
TrainResult train(const RunConfig& cfg, const CorpusSplit& data, const ArmSpec& arm,
                  const std::optional<std::filesystem::path>& output_dir = std::nullopt);

struct EvalResult {
  double mean_nll = 0.0;           // total NLL / total masked tokens
  std::vector<double> item_nll;    // per (sample, grid ratio) with a masked token
  std::size_t masked_tokens = 0;
};

/// Masked NLL over ratios t_j = j / points, j = 1..points, with masks drawn
/// from the eval stream of `seed`, so every arm sees the same masks.
EvalResult evaluate_nll(const ModelConfig& cfg, const ModelParams& params,
                        const std::vector<TokenSequence>& samples, std::size_t grid_points,
                        std::uint64_t seed);

struct SweepResult {
  std::vector<double> t;
  std::vector<double> mean_loss;
  std::vector<std::size_t> masked_tokens;
  double spearman = 0.0;
};

/// Unscaled NLL per masked token at each grid ratio, fresh masks per point.
SweepResult sweep_loss_vs_t(const ModelConfig& cfg, const ModelParams& params,
                            const std::vector<TokenSequence>& samples,
                            const std::vector<double>& grid, std::size_t masks_per_t,
                            std::uint64_t seed);

/// t_j = j / points for j = 1..points.
std::vector<double> uniform_grid(std::size_t points);

nlohmann::json to_json(const SweepResult& s);

struct ArmOutcome {
  TrainResult result;
  EvalResult eval;
  double mean_window_variance = 0.0;  // over all full windows
  double diff_vs_baseline = 0.0;  // held-out NLL minus the first arm's
  double diff_standard_error = 0.0;
  bool indistinguishable = false;  // |diff| < 2 paired SE
};

struct AblationReport {
  std::vector<ArmOutcome> arms;

  nlohmann::json to_json() const;
  std::string to_csv() const;
};

/// Trains every arm with the same seed, data order and step budget, on up to
/// cfg.train.threads threads, then evaluates each on the held-out split.
AblationReport run_ablation(const RunConfig& cfg, const CorpusSplit& data,
                            const std::vector<ArmSpec>& arms,
                            const std::optional<std::filesystem::path>& output_dir = std::nullopt);

}  // namespace blockdiff
