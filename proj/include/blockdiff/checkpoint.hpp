#pragma once

// Checkpoint container, all integers and floats little-endian:
//
//   bytes 0..3   magic "BDCK"
//   u32          format version (1)
//   u64 x 10     vocab_size, embed_dim, num_layers, num_heads, max_seq_len,
//                block_len, mask_token_id, think_open_id, think_close_id, eos_id
//   f64          init_std
//   u32          parameter count P
//   P times:     u32 name length, name bytes (UTF-8),
//                u32 rank, u64 x rank dims, f64 x prod(dims) values
//
// Parameters appear in ModelParams::named() order. Values are stored as raw
// IEEE-754 bit patterns, so save/load round-trips exactly.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "blockdiff/model.hpp"

namespace blockdiff {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  ModelConfig config;
  ModelParams params;
};

std::vector<std::uint8_t> encode_checkpoint(const ModelConfig& cfg, const ModelParams& params);
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const std::filesystem::path& path, const ModelConfig& cfg,
                     const ModelParams& params);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace blockdiff
