#pragma once

// Tiny pre-LayerNorm transformer with block-causal attention.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "blockdiff/attention_mask.hpp"
#include "blockdiff/tensor.hpp"

namespace blockdiff {

struct ModelConfig {
  std::size_t vocab_size = 260;
  std::size_t embed_dim = 128;
  std::size_t num_layers = 4;
  std::size_t num_heads = 4;
  std::size_t max_seq_len = 256;
  std::size_t block_len = 4;
  std::size_t mask_token_id = 256;
  std::size_t think_open_id = 257;
  std::size_t think_close_id = 258;
  std::size_t eos_id = 259;
  double init_std = 0.02;

  void validate() const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct LayerParams {
  Tensor ln1_gamma, ln1_beta;
  Tensor wq, wk, wv, wo;
  Tensor ln2_gamma, ln2_beta;
  Tensor w1, b1, w2, b2;
};

/// Every tensor is a requires-grad leaf and is used exactly once per forward
/// pass (no weight tying).
struct ModelParams {
  Tensor token_embedding;     // [vocab x D]
  Tensor position_embedding;  // [max_seq_len x D]
  std::vector<LayerParams> layers;
  Tensor final_gamma, final_beta;
  Tensor out_weight;  // [D x vocab]
  Tensor out_bias;    // [vocab]

  /// Stable order: embeddings, layers in order, final norm, output head.
  std::vector<std::pair<std::string, Tensor>> named() const;
  std::size_t parameter_count() const;
  void zero_grad();
  bool all_finite() const;
  ModelParams clone() const;
};

std::size_t parameter_count(const ModelConfig& cfg);

/// Gaussian(0, init_std) matrices and embeddings; LayerNorm gains 1, biases 0.
ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed);

/// Logits [L x vocab]. `positions` gives each token's index within its own
/// packed sample (restarting at 0 per sample).
Tensor forward(const ModelConfig& cfg, const ModelParams& params,
               std::span<const std::size_t> tokens, std::span<const std::size_t> positions,
               const AttentionMask& mask);

/// Single-sample forward with positions 0..L-1.
Tensor forward(const ModelConfig& cfg, const ModelParams& params,
               std::span<const std::size_t> tokens, const AttentionMask& mask);

/// Training input with clean conditioning. Every sample of a row is laid out
/// as [corrupted copy | clean copy], samples back to back. A corrupted token
/// in block b reads the corrupted tokens of block b and the clean tokens of
/// blocks < b; a clean token in block b reads clean tokens of blocks <= b.
/// Nothing crosses a sample boundary.
struct TeacherForcedInput {
  std::vector<std::size_t> tokens;
  std::vector<std::size_t> positions;
  AttentionMask mask;
  std::vector<std::pair<std::size_t, std::size_t>> corrupted_rows;  // [begin, end) per sample
};

TeacherForcedInput teacher_forced_input(std::span<const std::size_t> clean,
                                        std::span<const std::size_t> corrupted,
                                        std::span<const std::size_t> sample_starts,
                                        std::size_t block_len);

/// Logits [L x vocab] at the corrupted copy of each row position, in row order.
Tensor forward_teacher_forced(const ModelConfig& cfg, const ModelParams& params,
                              const TeacherForcedInput& input);

}  // namespace blockdiff
