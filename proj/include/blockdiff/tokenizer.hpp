#pragma once

// Byte-level tokenizer and corpus reader.
//
// Ids 0..255 are raw bytes; the special ids follow. Corpus lines:
//
//   response                      plain sample, prompt_len = 0
//   prompt<TAB>response           prompt is conditioning only
//   COT<TAB>response              response wrapped in <think> ... </think>
//   COT<TAB>prompt<TAB>response
//   COT<TAB>prompt<TAB>reasoning<TAB>answer
//                                 prompt <think> reasoning </think> answer
//
// Every sample ends with <eos>. Blank lines are skipped; a trailing CR is
// dropped.

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "blockdiff/sequence.hpp"

namespace blockdiff {

struct SpecialTokens {
  std::size_t mask = 256;
  std::size_t think_open = 257;
  std::size_t think_close = 258;
  std::size_t eos = 259;

  std::size_t vocab_size() const;
};

std::vector<std::size_t> encode_bytes(std::string_view text);

/// Bytes verbatim; specials as <mask>, <think>, </think>, <eos>.
std::string decode_tokens(std::span<const std::size_t> tokens, const SpecialTokens& sp = {});

/// Throws FormatError mentioning `line_no` on malformed input.
TokenSequence parse_corpus_line(std::string_view line, std::size_t line_no,
                                const SpecialTokens& sp = {});

std::vector<TokenSequence> ingest_corpus_text(std::string_view text, const SpecialTokens& sp = {});
std::vector<TokenSequence> ingest_corpus(const std::filesystem::path& path,
                                         const SpecialTokens& sp = {});

}  // namespace blockdiff
