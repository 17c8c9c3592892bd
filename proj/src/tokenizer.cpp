#include "blockdiff/tokenizer.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "blockdiff/error.hpp"

namespace blockdiff {

std::size_t SpecialTokens::vocab_size() const {
  return std::max({mask, think_open, think_close, eos}) + 1;
}

std::vector<std::size_t> encode_bytes(std::string_view text) {
  std::vector<std::size_t> out;
  out.reserve(text.size());
  for (char c : text) {
    out.push_back(static_cast<unsigned char>(c));
  }
  return out;
}

std::string decode_tokens(std::span<const std::size_t> tokens, const SpecialTokens& sp) {
  std::string out;
  for (std::size_t t : tokens) {
    if (t < 256) {
      out.push_back(static_cast<char>(t));
    } else if (t == sp.mask) {
      out += "<mask>";
    } else if (t == sp.think_open) {
      out += "<think>";
    } else if (t == sp.think_close) {
      out += "</think>";
    } else if (t == sp.eos) {
      out += "<eos>";
    } else {
      out += "<" + std::to_string(t) + ">";
    }
  }
  return out;
}

namespace {

std::vector<std::string_view> split_tabs(std::string_view s) {
  std::vector<std::string_view> parts;
  std::size_t start = 0;
  while (true) {
    const std::size_t tab = s.find('\t', start);
    if (tab == std::string_view::npos) {
      parts.push_back(s.substr(start));
      return parts;
    }
    parts.push_back(s.substr(start, tab - start));
    start = tab + 1;
  }
}

void append(std::vector<std::size_t>& out, std::string_view text) {
  const auto enc = encode_bytes(text);
  out.insert(out.end(), enc.begin(), enc.end());
}

[[noreturn]] void malformed(std::size_t line_no, const std::string& why) {
  throw FormatError("corpus line " + std::to_string(line_no) + ": " + why);
}

}  // namespace

TokenSequence parse_corpus_line(std::string_view line, std::size_t line_no,
                                const SpecialTokens& sp) {
  if (!line.empty() && line.back() == '\r') {
    line.remove_suffix(1);
  }
  TokenSequence seq;
  auto fields = split_tabs(line);
  const bool cot = fields.size() > 1 && fields.front() == "COT";
  if (cot) {
    fields.erase(fields.begin());
    seq.role = TokenSequence::Role::kCot;
  }
  const std::size_t max_fields = cot ? 3 : 2;
  if (fields.size() > max_fields) {
    malformed(line_no, "expected at most " + std::to_string(max_fields) +
                           " tab-separated fields, found " + std::to_string(fields.size()));
  }
  if (fields.back().empty()) {
    malformed(line_no, "empty response");
  }
  if (fields.size() >= 2) {
    append(seq.tokens, fields.front());
    seq.prompt_len = seq.tokens.size();
  }
  if (cot) {
    seq.tokens.push_back(sp.think_open);
    if (fields.size() == 3) {
      append(seq.tokens, fields[1]);
      seq.tokens.push_back(sp.think_close);
      append(seq.tokens, fields[2]);
    } else {
      append(seq.tokens, fields.back());
      seq.tokens.push_back(sp.think_close);
    }
  } else {
    append(seq.tokens, fields.back());
  }
  seq.tokens.push_back(sp.eos);
  return seq;
}

std::vector<TokenSequence> ingest_corpus_text(std::string_view text, const SpecialTokens& sp) {
  std::vector<TokenSequence> out;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start < text.size()) {
    std::size_t nl = text.find('\n', start);
    if (nl == std::string_view::npos) {
      nl = text.size();
    }
    ++line_no;
    std::string_view line = text.substr(start, nl - start);
    start = nl + 1;
    if (line.empty() || line == "\r") {
      continue;
    }
    out.push_back(parse_corpus_line(line, line_no, sp));
  }
  if (out.empty()) {
    throw FormatError("corpus is empty");
  }
  return out;
}

std::vector<TokenSequence> ingest_corpus(const std::filesystem::path& path,
                                         const SpecialTokens& sp) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw FormatError("cannot open corpus " + path.string());
  }
  std::ostringstream buf;
  buf << in.rdbuf();
  return ingest_corpus_text(buf.str(), sp);
}

}  // namespace blockdiff
