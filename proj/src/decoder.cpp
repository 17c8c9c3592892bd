#include "blockdiff/decoder.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "blockdiff/error.hpp"
#include "blockdiff/ops.hpp"
#include "blockdiff/tokenizer.hpp"

namespace blockdiff {

void DecodeConfig::validate() const {
  if (block_len == 0 || steps == 0 || steps > block_len || block_len % steps != 0) {
    throw ContractError("decode needs 1 <= steps <= block_len with block_len divisible by steps (K=" +
                        std::to_string(block_len) + ", S=" + std::to_string(steps) + ")");
  }
}

nlohmann::json to_json(const DecodeTrace& trace) {
  nlohmann::json steps = nlohmann::json::array();
  for (const DecodeStep& s : trace.steps) {
    steps.push_back({{"block", s.block},
                     {"step", s.step},
                     {"positions", s.positions},
                     {"tokens", s.tokens},
                     {"confidences", s.confidences}});
  }
  return {{"block_len", trace.block_len},
          {"steps_per_block", trace.steps_per_block},
          {"steps", steps},
          {"output", trace.output},
          {"text", trace.text}};
}

AttentionMask decode_mask(std::size_t context_len, std::size_t block_len) {
  const std::size_t len = context_len + block_len;
  std::vector<std::size_t> blocks(len), samples(len, 0);
  for (std::size_t i = 0; i < context_len; ++i) {
    blocks[i] = i / block_len;
  }
  const std::size_t fresh = (context_len + block_len - 1) / block_len;
  std::fill(blocks.begin() + static_cast<std::ptrdiff_t>(context_len), blocks.end(), fresh);
  return AttentionMask::from_ids(blocks, samples);
}

namespace {

struct Prediction {
  std::size_t token;
  double confidence;
};

Prediction predict_row(std::span<const double> row) {
  std::size_t best = 0;
  for (std::size_t j = 1; j < row.size(); ++j) {
    if (row[j] > row[best]) {
      best = j;
    }
  }
  double z = 0.0;
  for (double v : row) {
    z += std::exp(v - row[best]);
  }
  return {best, 1.0 / z};
}

}  // namespace

std::vector<std::size_t> decode_block(const ModelConfig& cfg, const ModelParams& params,
                                      std::span<const std::size_t> context,
                                      const DecodeConfig& dc, DecodeTrace* trace,
                                      std::size_t block_number) {
  dc.validate();
  const std::size_t k = dc.block_len;
  if (context.size() + k > cfg.max_seq_len) {
    throw ContractError("context of " + std::to_string(context.size()) + " tokens plus a block of " +
                        std::to_string(k) + " exceeds max_seq_len " +
                        std::to_string(cfg.max_seq_len));
  }
  const AttentionMask mask = decode_mask(context.size(), k);
  std::vector<std::size_t> tokens(context.begin(), context.end());
  tokens.resize(context.size() + k, cfg.mask_token_id);
  std::vector<bool> open(k, true);
  const std::size_t per_step = k / dc.steps;
  const std::size_t vocab = cfg.vocab_size;

  for (std::size_t step = 0; step < dc.steps; ++step) {
    const Tensor logits = forward(cfg, params, tokens, mask);
    const auto lv = logits.values();
    std::vector<std::pair<std::size_t, Prediction>> cands;
    for (std::size_t j = 0; j < k; ++j) {
      if (open[j]) {
        const std::size_t pos = context.size() + j;
        cands.emplace_back(j, predict_row(lv.subspan(pos * vocab, vocab)));
      }
    }
    std::stable_sort(cands.begin(), cands.end(), [](const auto& a, const auto& b) {
      return a.second.confidence > b.second.confidence;
    });
    DecodeStep rec;
    rec.block = block_number;
    rec.step = step;
    for (std::size_t c = 0; c < per_step; ++c) {
      const auto& [j, pred] = cands[c];
      open[j] = false;
      tokens[context.size() + j] = pred.token;
      rec.positions.push_back(context.size() + j);
      rec.tokens.push_back(pred.token);
      rec.confidences.push_back(pred.confidence);
    }
    if (trace != nullptr) {
      trace->steps.push_back(std::move(rec));
    }
  }
  return {tokens.begin() + static_cast<std::ptrdiff_t>(context.size()), tokens.end()};
}

DecodeTrace decode_sequence(const ModelConfig& cfg, const ModelParams& params,
                            std::span<const std::size_t> prompt, const DecodeConfig& dc) {
  dc.validate();
  if (prompt.size() > cfg.max_seq_len) {
    throw ContractError("prompt of " + std::to_string(prompt.size()) +
                        " tokens exceeds max_seq_len " + std::to_string(cfg.max_seq_len));
  }
  DecodeTrace trace;
  trace.block_len = dc.block_len;
  trace.steps_per_block = dc.steps;
  trace.output.assign(prompt.begin(), prompt.end());
  for (std::size_t b = 0; b < dc.max_new_blocks; ++b) {
    if (trace.output.size() + dc.block_len > cfg.max_seq_len) {
      break;
    }
    const auto block = decode_block(cfg, params, trace.output, dc, &trace, b);
    const auto eos = std::find(block.begin(), block.end(), cfg.eos_id);
    if (dc.stop_at_eos && eos != block.end()) {
      trace.output.insert(trace.output.end(), block.begin(), eos + 1);
      break;
    }
    trace.output.insert(trace.output.end(), block.begin(), block.end());
  }
  SpecialTokens sp{cfg.mask_token_id, cfg.think_open_id, cfg.think_close_id, cfg.eos_id};
  trace.text = decode_tokens(trace.output, sp);
  return trace;
}

std::vector<std::size_t> reference_greedy_decode(const ModelConfig& cfg, const ModelParams& params,
                                                 std::span<const std::size_t> prompt,
                                                 std::size_t max_new_tokens, bool stop_at_eos) {
  std::vector<std::size_t> out(prompt.begin(), prompt.end());
  for (std::size_t n = 0; n < max_new_tokens && out.size() < cfg.max_seq_len; ++n) {
    const std::size_t len = out.size() + 1;
    std::vector<std::uint8_t> causal(len * len, 0);
    for (std::size_t q = 0; q < len; ++q) {
      for (std::size_t k = 0; k <= q; ++k) {
        causal[q * len + k] = 1;
      }
    }
    std::vector<std::size_t> input = out;
    input.push_back(cfg.mask_token_id);
    const Tensor logits = forward(cfg, params, input, AttentionMask(len, std::move(causal)));
    const auto row = logits.values().subspan((len - 1) * cfg.vocab_size, cfg.vocab_size);
    const std::size_t next = static_cast<std::size_t>(
        std::distance(row.begin(), std::max_element(row.begin(), row.end())));
    out.push_back(next);
    if (stop_at_eos && next == cfg.eos_id) {
      break;
    }
  }
  return out;
}

}  // namespace blockdiff
