#pragma once

// Block-by-block generation. Each new block starts as K mask tokens and is
// denoised over S steps; every step commits the K/S still-masked positions
// whose argmax probability is highest (ties to the lower position).
// Committed tokens never change, and finished blocks become clean context.

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "blockdiff/model.hpp"
#include "json.hpp"

namespace blockdiff {

struct DecodeConfig {
  std::size_t block_len = 4;   // K
  std::size_t steps = 4;       // S
  std::size_t max_new_blocks = 8;
  bool stop_at_eos = true;

  void validate() const;
};

struct DecodeStep {
  std::size_t block = 0;
  std::size_t step = 0;
  std::vector<std::size_t> positions;  // absolute positions, commit order
  std::vector<std::size_t> tokens;
  std::vector<double> confidences;

  friend bool operator==(const DecodeStep&, const DecodeStep&) = default;
};

struct DecodeTrace {
  std::size_t block_len = 0;
  std::size_t steps_per_block = 0;
  std::vector<DecodeStep> steps;
  std::vector<std::size_t> output;  // prompt followed by generated tokens
  std::string text;

  friend bool operator==(const DecodeTrace&, const DecodeTrace&) = default;
};

nlohmann::json to_json(const DecodeTrace& trace);

/// Block ids for `len` context positions partitioned by K from 0, plus the
/// new block, which always gets a fresh id.
AttentionMask decode_mask(std::size_t context_len, std::size_t block_len);

/// Denoises one block after `context`; appends its steps to `trace` when given.
std::vector<std::size_t> decode_block(const ModelConfig& cfg, const ModelParams& params,
                                      std::span<const std::size_t> context,
                                      const DecodeConfig& dc, DecodeTrace* trace = nullptr,
                                      std::size_t block_number = 0);

/// Generates up to max_new_blocks blocks. In stop-at-eos mode the first
/// block containing eos ends generation and the output is cut just after
/// that eos.
DecodeTrace decode_sequence(const ModelConfig& cfg, const ModelParams& params,
                            std::span<const std::size_t> prompt, const DecodeConfig& dc);

/// Token-by-token greedy decoding under a strictly causal mask.
std::vector<std::size_t> reference_greedy_decode(const ModelConfig& cfg, const ModelParams& params,
                                                 std::span<const std::size_t> prompt,
                                                 std::size_t max_new_tokens, bool stop_at_eos);

}  // namespace blockdiff
