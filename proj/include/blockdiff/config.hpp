#pragma once

// Run configuration and its flat text form.
//
// Grammar, one entry per line:
//   section.key = value     # trailing comments allowed
// Blank lines and lines starting with '#' are ignored. Keys are unique.
// `--set section.key=value` overrides use the same key space.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>

#include "blockdiff/decoder.hpp"
#include "blockdiff/loss.hpp"
#include "blockdiff/model.hpp"
#include "blockdiff/noise.hpp"

namespace blockdiff {

/// How a synchronous scheduler shares its ratio.
enum class SyncScope { kStep, kSample };

struct LossConfig {
  ScalingRule rule = ScalingRule::kEffectiveRatio;
  Aggregation aggregation = Aggregation::kBlockMean;
  bool skip_zero_mask_blocks = true;
};

struct OptimizerConfig {
  double lr = 3e-4;
  double beta2 = 0.999;
  double eps = 1e-8;
  double grad_clip = 0.0;  // global-norm clip; 0 disables
};

struct TrainConfig {
  std::size_t steps = 2000;
  std::size_t batch_size = 8;       // samples per step
  std::size_t pack_capacity = 0;    // 0 = model.max_seq_len
  std::size_t checkpoint_every = 0; // 0 = final checkpoint only
  std::size_t variance_window = 100;
  double warmup_frac = 0.6;         // curriculum horizon as a fraction of steps
  double cot_start_frac = 0.0;      // CoT samples join after this fraction of steps
  double eval_fraction = 0.05;
  std::size_t eval_max_samples = 64;
  std::size_t eval_grid_points = 10;
  std::size_t threads = 1;
  bool record_wall_clock = false;
};

struct RunConfig {
  ModelConfig model;
  SchedulerKind scheduler = SchedulerKind::async_uniform();
  SyncScope sync_scope = SyncScope::kStep;
  LossConfig loss;
  DecodeConfig decode;
  OptimizerConfig optimizer;
  TrainConfig train;
  std::uint64_t seed = 0;
  std::filesystem::path corpus;
  std::filesystem::path output_dir = "runs/default";

  /// Warmup steps for the curriculum: max(1, round(warmup_frac * steps)).
  std::size_t warmup_steps() const;
  /// Scheduler with the curriculum horizon filled in.
  SchedulerKind resolved_scheduler() const;
  void validate() const;
};

using ConfigMap = std::map<std::string, std::string>;

/// Throws FormatError naming `source` and the line number.
ConfigMap parse_config_text(std::string_view text, const std::string& source = "<config>");
ConfigMap load_config_file(const std::filesystem::path& path);
/// Parses "section.key=value" into `map`, replacing any earlier value.
void apply_override(ConfigMap& map, std::string_view assignment);

/// Starts from defaults; unknown keys and unparsable values throw FormatError.
RunConfig run_config_from(const ConfigMap& map);
/// Every key with its resolved value.
ConfigMap to_config_map(const RunConfig& cfg);
std::string render_config(const RunConfig& cfg);

/// Replaces cfg.seed with BLOCKDIFF_SEED when that variable is set.
void apply_seed_environment(RunConfig& cfg);

}  // namespace blockdiff
