#include "blockdiff/attention_mask.hpp"

#include <algorithm>
#include <string>

#include "blockdiff/error.hpp"

namespace blockdiff {

AttentionMask::AttentionMask(std::size_t seq_len, std::vector<std::uint8_t> pattern)
    : seq_len_(seq_len), allowed_(std::move(pattern)) {
  if (allowed_.size() != seq_len_ * seq_len_) {
    throw DimensionError("attention mask for length " + std::to_string(seq_len_) +
                         " needs " + std::to_string(seq_len_ * seq_len_) + " entries");
  }
  for (std::size_t q = 0; q < seq_len_; ++q) {
    if (!allowed(q, q)) {
      throw ContractError("attention mask row " + std::to_string(q) + " does not attend to itself");
    }
  }
}

AttentionMask AttentionMask::from_ids(std::span<const std::size_t> block_ids,
                                      std::span<const std::size_t> sample_ids) {
  if (block_ids.size() != sample_ids.size()) {
    throw DimensionError("block ids and sample ids differ in length");
  }
  const std::size_t n = block_ids.size();
  std::vector<std::uint8_t> allowed(n * n, 0);
  for (std::size_t q = 0; q < n; ++q) {
    for (std::size_t k = 0; k < n; ++k) {
      allowed[q * n + k] = sample_ids[q] == sample_ids[k] && block_ids[k] <= block_ids[q];
    }
  }
  return AttentionMask(n, std::move(allowed));
}

AttentionMask build_block_causal_mask(std::size_t seq_len, std::ptrdiff_t block_len,
                                      std::span<const std::size_t> sample_boundaries) {
  if (block_len <= 0) {
    throw ContractError("block_len must be positive, got " + std::to_string(block_len));
  }
  if (!std::is_sorted(sample_boundaries.begin(), sample_boundaries.end())) {
    throw ContractError("sample boundaries must be sorted");
  }
  std::vector<std::uint8_t> starts_sample(seq_len, 0);
  for (std::size_t b : sample_boundaries) {
    if (b > seq_len) {
      throw ContractError("sample boundary " + std::to_string(b) +
                          " exceeds sequence length " + std::to_string(seq_len));
    }
    if (b > 0 && b < seq_len) {
      starts_sample[b] = 1;
    }
  }
  std::vector<std::size_t> block_ids(seq_len);
  std::vector<std::size_t> sample_ids(seq_len);
  std::size_t sample = 0;
  std::size_t start = 0;
  for (std::size_t pos = 0; pos < seq_len; ++pos) {
    if (starts_sample[pos] != 0) {
      ++sample;
      start = pos;
    }
    sample_ids[pos] = sample;
    block_ids[pos] = (pos - start) / static_cast<std::size_t>(block_len);
  }
  return AttentionMask::from_ids(block_ids, sample_ids);
}

}  // namespace blockdiff
