#pragma once

// Block diffusion training objectives, corruption, and sequence packing.
//
// A packed row holds one or more samples back to back. Each sample is cut
// into blocks of block_len starting at the sample's first token (the last
// block may be short). Within a block only supervised positions
// (loss weight > 0) are corruptible; a block's noise draw covers exactly
// those positions, so t' = masked / supervised-in-block.

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "blockdiff/noise.hpp"
#include "blockdiff/sequence.hpp"
#include "blockdiff/tensor.hpp"

namespace blockdiff {

struct SupervisionMask {
  std::vector<double> loss_weight;          // per position
  std::vector<std::size_t> always_mask_ids;  // e.g. <think>, </think>

  bool always_masked(std::size_t token) const;
};

/// Prompt positions weight 0, response positions weight 1; tokens in
/// `always_mask_ids` always weight 1.
SupervisionMask supervision_for(const TokenSequence& seq,
                                std::vector<std::size_t> always_mask_ids);

struct PackedRow {
  std::vector<std::size_t> tokens;
  std::vector<std::size_t> positions;      // index within own sample
  std::vector<std::size_t> sample_starts;  // offset of each member sample
  std::vector<std::size_t> members;        // input indices, in row order
  SupervisionMask supervision;

  std::size_t size() const { return tokens.size(); }
};

/// First-fit-decreasing packing (stable for equal lengths). Samples are never
/// split. Throws ContractError naming the first sample longer than capacity.
std::vector<PackedRow> pack_samples(std::span<const TokenSequence> samples, std::size_t capacity,
                                    const std::vector<std::size_t>& always_mask_ids);

/// A row holding exactly one sample (no packing).
PackedRow single_row(const TokenSequence& sample, const std::vector<std::size_t>& always_mask_ids);

/// Block with at least one supervised position.
struct BlockSpan {
  std::size_t block_index;  // running index within the row
  std::size_t sample_index; // position of the owning sample in the row
  std::size_t begin;
  std::size_t end;
  std::vector<std::size_t> eligible;  // supervised positions, increasing
};

std::vector<BlockSpan> supervised_blocks(const PackedRow& row, std::size_t block_len);

/// Realizes one Bernoulli(t_b) mask per block over its eligible positions,
/// then forces always-mask tokens and recomputes t'. `mask_streams.stream(b)`
/// draws block b, with b offset by `stream_offset`.
std::vector<NoiseDraw> draw_block_masks(const PackedRow& row, std::span<const BlockSpan> blocks,
                                        std::span<const double> ratios, BlockStreams& mask_streams,
                                        std::size_t stream_offset = 0);

/// Replaces masked positions and every always-mask token with mask_token_id.
/// Positions not covered by a draw (prompt/context) are left untouched.
std::vector<std::size_t> apply_corruption(std::span<const std::size_t> tokens,
                                          std::span<const NoiseDraw> draws,
                                          const SupervisionMask& sup, std::size_t mask_token_id);

enum class ScalingRule { kSampledRatio, kEffectiveRatio };
enum class Aggregation { kBlockMean, kBlockSum, kTokenMean };

std::string to_string(ScalingRule rule);
std::string to_string(Aggregation agg);
ScalingRule parse_scaling_rule(const std::string& s);
Aggregation parse_aggregation(const std::string& s);

struct BlockLoss {
  std::size_t block_index;
  std::size_t sample_index;
  double ell;  // summed weighted NLL over masked positions
  double t;
  double t_prime;
  std::size_t masked_count;
  std::size_t eligible_count;
  std::optional<double> scaled;  // absent when the block is skipped
};

struct LossBreakdown {
  std::vector<BlockLoss> per_block;
  double batch_loss = 0.0;
  std::size_t num_skipped = 0;
  std::size_t num_supervised_blocks = 0;
  std::size_t num_supervised_tokens = 0;  // eligible positions of supervised blocks
  std::size_t num_masked_tokens = 0;
  ScalingRule rule = ScalingRule::kEffectiveRatio;
};

struct LossResult {
  LossBreakdown breakdown;
  /// Differentiable batch loss. Does not require grad when every block was
  /// skipped (value 0).
  Tensor loss;
};

/// Per masked supervised position adds weight * (-log p(target)) to its
/// block's ell; scaled = ell / t (sampled) or ell / t' (effective). Blocks
/// with no masked position are skipped. Sums fold per sample, then across
/// samples in row order, so a packed row with block-sum aggregation equals the
/// sum of its samples' losses bit for bit.
/// With skip_zero_mask_blocks false, skipped blocks still count in the
/// block-mean denominator (contributing 0).
LossResult bd3_loss(const Tensor& logits, std::span<const std::size_t> targets,
                    std::span<const NoiseDraw> draws, const SupervisionMask& sup, ScalingRule rule,
                    Aggregation aggregation = Aggregation::kBlockMean,
                    bool skip_zero_mask_blocks = true);

/// Same objective from precomputed per-position NLLs (differentiable [L]).
LossResult bd3_loss_from_nll(const Tensor& nll, std::span<const NoiseDraw> draws,
                             const SupervisionMask& sup, ScalingRule rule, Aggregation aggregation,
                             bool skip_zero_mask_blocks = true);

/// Combines rows built with block-sum aggregation into one batch objective
/// (e.g. block mean over the supervised blocks of all rows).
LossResult combine_rows(std::span<const LossResult> rows, Aggregation aggregation,
                        bool skip_zero_mask_blocks = true);

}  // namespace blockdiff
