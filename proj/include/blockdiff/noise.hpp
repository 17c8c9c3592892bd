#pragma once

// Corruption-level samplers and Bernoulli mask realization.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "blockdiff/rng.hpp"

namespace blockdiff {

/// Progressive Beta curriculum: mean and concentration move linearly in the
/// normalized progress u = min(step / warmup_steps, 1).
struct BetaSchedule {
  double mu_start = 0.5;
  double mu_final = 0.8;
  double c_start = 2.0;
  double c_final = 25.0;
  std::size_t warmup_steps = 1;

  void validate() const;
};

struct BetaParams {
  double alpha;
  double beta;
  double mu;
  double concentration;
};

BetaParams beta_params_at(const BetaSchedule& sched, std::size_t step);

/// Which distribution supplies t and whether it is shared across blocks.
struct SchedulerKind {
  enum class Tag { kSyncUniform, kAsyncUniform, kAsyncClamp, kAsyncBeta };

  Tag tag = Tag::kAsyncUniform;
  double clamp_lo = 0.45;
  double clamp_hi = 0.95;
  BetaSchedule beta;

  static SchedulerKind sync_uniform() { return with_tag(Tag::kSyncUniform); }
  static SchedulerKind async_uniform() { return with_tag(Tag::kAsyncUniform); }
  static SchedulerKind async_clamp(double lo, double hi);
  static SchedulerKind async_beta(const BetaSchedule& sched);

  bool synchronous() const { return tag == Tag::kSyncUniform; }
  void validate() const;
  /// "sns", "abns", "abns-clamp(0.45,0.95)", "abns-beta(...)".
  std::string describe() const;

 private:
  static SchedulerKind with_tag(Tag t) {
    SchedulerKind k;
    k.tag = t;
    return k;
  }
};

/// One draw of the step-appropriate ratio distribution; never 0.
double draw_ratio(Rng& rng, const SchedulerKind& kind, std::size_t step);

/// One t ~ U(0, 1] shared by all blocks.
std::vector<double> sample_sync(Rng& rng, std::size_t num_blocks);

/// Independent per-block draws from `kind` at training step `step`. A
/// synchronous kind is delegated to sample_sync.
std::vector<double> sample_async(Rng& rng, std::size_t num_blocks, const SchedulerKind& kind,
                                 std::size_t step);

/// Realized corruption of one block.
struct NoiseDraw {
  double t = 1.0;                  // sampled ratio
  std::vector<std::uint8_t> mask;  // 1 = replaced by the mask token
  double t_prime = 1.0;            // popcount(mask) / mask.size()
  std::size_t block_index = 0;
  std::vector<std::size_t> positions;  // row position of each mask entry
  std::size_t sample_index = 0;

  std::size_t masked_count() const;
  /// Recomputes t_prime from the mask.
  void refresh_ratio();
};

/// Each of `block_len` positions is masked independently with probability t.
NoiseDraw realize_mask(Rng& rng, double t, std::size_t block_len, std::size_t block_index = 0);

/// Builds a draw from an explicit mask (tests and enumeration oracles).
NoiseDraw draw_from_mask(double t, std::vector<std::uint8_t> mask, std::size_t block_index = 0);

/// Independent per-block streams derived from a master seed:
/// stream(b) = Rng(derive_seed(master, {tag, b})).
class BlockStreams {
 public:
  BlockStreams(std::uint64_t master, std::uint64_t tag) : master_(master), tag_(tag) {}
  Rng& stream(std::size_t block);

 private:
  std::uint64_t master_;
  std::uint64_t tag_;
  std::vector<Rng> streams_;
};

}  // namespace blockdiff
