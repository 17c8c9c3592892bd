#pragma once

#include <cstddef>
#include <vector>

namespace blockdiff {

/// A tokenized training sample: `prompt_len` conditioning tokens followed by
/// the supervised response.
struct TokenSequence {
  enum class Role { kPlain, kCot };

  std::vector<std::size_t> tokens;
  std::size_t prompt_len = 0;
  Role role = Role::kPlain;

  std::size_t size() const { return tokens.size(); }
  friend bool operator==(const TokenSequence&, const TokenSequence&) = default;
};

}  // namespace blockdiff
