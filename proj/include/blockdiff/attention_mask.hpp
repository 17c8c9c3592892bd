#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace blockdiff {

/// Boolean [L x L] attention pattern; allowed(q, k) means query q may read key k.
///
/// Block-causal masks are derived from a block id and a sample id per
/// position: q reads k iff both sit in the same packed sample and
/// block(k) <= block(q).
class AttentionMask {
 public:
  AttentionMask() = default;
  AttentionMask(std::size_t seq_len, std::vector<std::uint8_t> allowed);

  /// Generic constructor from per-position block and sample ids.
  static AttentionMask from_ids(std::span<const std::size_t> block_ids,
                                std::span<const std::size_t> sample_ids);

  std::size_t size() const { return seq_len_; }
  bool allowed(std::size_t q, std::size_t k) const { return allowed_[q * seq_len_ + k] != 0; }
  std::span<const std::uint8_t> row(std::size_t q) const {
    return {allowed_.data() + q * seq_len_, seq_len_};
  }

  friend bool operator==(const AttentionMask&, const AttentionMask&) = default;

 private:
  std::size_t seq_len_ = 0;
  std::vector<std::uint8_t> allowed_;
};

/// Block-causal mask over `seq_len` positions. `sample_boundaries` lists the
/// start offsets of packed samples after the first (0 and seq_len may also be
/// included). Blocks of `block_len` restart at each sample start; the final
/// block of a sample may be shorter.
AttentionMask build_block_causal_mask(std::size_t seq_len, std::ptrdiff_t block_len,
                                      std::span<const std::size_t> sample_boundaries = {});

}  // namespace blockdiff
