#include "blockdiff/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <string>

#include "blockdiff/error.hpp"
#include "blockdiff/ops.hpp"
#include "blockdiff/rng.hpp"

namespace blockdiff {

void ModelConfig::validate() const {
  if (embed_dim == 0 || num_heads == 0 || embed_dim % num_heads != 0) {
    throw ContractError("embed_dim must be a positive multiple of num_heads");
  }
  if (block_len == 0 || max_seq_len == 0 || num_layers == 0) {
    throw ContractError("block_len, max_seq_len and num_layers must be positive");
  }
  const std::set<std::size_t> specials{mask_token_id, think_open_id, think_close_id, eos_id};
  if (specials.size() != 4) {
    throw ContractError("mask, think-open, think-close and eos ids must be distinct");
  }
  if (*specials.rbegin() >= vocab_size) {
    throw ContractError("special token ids must be below vocab_size");
  }
}

std::vector<std::pair<std::string, Tensor>> ModelParams::named() const {
  std::vector<std::pair<std::string, Tensor>> out;
  out.emplace_back("token_embedding", token_embedding);
  out.emplace_back("position_embedding", position_embedding);
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const LayerParams& l = layers[i];
    const std::string p = "layer" + std::to_string(i) + ".";
    out.emplace_back(p + "ln1_gamma", l.ln1_gamma);
    out.emplace_back(p + "ln1_beta", l.ln1_beta);
    out.emplace_back(p + "wq", l.wq);
    out.emplace_back(p + "wk", l.wk);
    out.emplace_back(p + "wv", l.wv);
    out.emplace_back(p + "wo", l.wo);
    out.emplace_back(p + "ln2_gamma", l.ln2_gamma);
    out.emplace_back(p + "ln2_beta", l.ln2_beta);
    out.emplace_back(p + "w1", l.w1);
    out.emplace_back(p + "b1", l.b1);
    out.emplace_back(p + "w2", l.w2);
    out.emplace_back(p + "b2", l.b2);
  }
  out.emplace_back("final_gamma", final_gamma);
  out.emplace_back("final_beta", final_beta);
  out.emplace_back("out_weight", out_weight);
  out.emplace_back("out_bias", out_bias);
  return out;
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : named()) {
    n += t.numel();
  }
  return n;
}

void ModelParams::zero_grad() {
  for (auto& [name, t] : named()) {
    t.zero_grad();
  }
}

bool ModelParams::all_finite() const {
  for (const auto& [name, t] : named()) {
    for (double v : t.values()) {
      if (!std::isfinite(v)) {
        return false;
      }
    }
  }
  return true;
}

namespace {
Tensor copy_leaf(const Tensor& t) {
  return Tensor::from_values(t.shape(), {t.values().begin(), t.values().end()}, true);
}
}  // namespace

ModelParams ModelParams::clone() const {
  ModelParams out;
  out.token_embedding = copy_leaf(token_embedding);
  out.position_embedding = copy_leaf(position_embedding);
  for (const LayerParams& l : layers) {
    out.layers.push_back({copy_leaf(l.ln1_gamma), copy_leaf(l.ln1_beta), copy_leaf(l.wq),
                          copy_leaf(l.wk), copy_leaf(l.wv), copy_leaf(l.wo),
                          copy_leaf(l.ln2_gamma), copy_leaf(l.ln2_beta), copy_leaf(l.w1),
                          copy_leaf(l.b1), copy_leaf(l.w2), copy_leaf(l.b2)});
  }
  out.final_gamma = copy_leaf(final_gamma);
  out.final_beta = copy_leaf(final_beta);
  out.out_weight = copy_leaf(out_weight);
  out.out_bias = copy_leaf(out_bias);
  return out;
}

std::size_t parameter_count(const ModelConfig& cfg) {
  const std::size_t d = cfg.embed_dim;
  const std::size_t ff = 4 * d;
  const std::size_t per_layer = 4 * d + 4 * d * d + d * ff + ff + ff * d + d;
  return cfg.vocab_size * d + cfg.max_seq_len * d + cfg.num_layers * per_layer + 2 * d +
         d * cfg.vocab_size + cfg.vocab_size;
}

ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(derive_seed(seed, {stream::kInit}));
  const auto gaussian = [&](Shape shape) {
    std::vector<double> v(shape_numel(shape));
    for (double& x : v) {
      x = cfg.init_std * rng.normal();
    }
    return Tensor::from_values(std::move(shape), std::move(v), true);
  };
  const auto constant = [](std::size_t n, double value) {
    return Tensor::from_values({n}, std::vector<double>(n, value), true);
  };
  const std::size_t d = cfg.embed_dim;
  const std::size_t ff = 4 * d;
  ModelParams p;
  p.token_embedding = gaussian({cfg.vocab_size, d});
  p.position_embedding = gaussian({cfg.max_seq_len, d});
  for (std::size_t i = 0; i < cfg.num_layers; ++i) {
    LayerParams l;
    l.ln1_gamma = constant(d, 1.0);
    l.ln1_beta = constant(d, 0.0);
    l.wq = gaussian({d, d});
    l.wk = gaussian({d, d});
    l.wv = gaussian({d, d});
    l.wo = gaussian({d, d});
    l.ln2_gamma = constant(d, 1.0);
    l.ln2_beta = constant(d, 0.0);
    l.w1 = gaussian({d, ff});
    l.b1 = constant(ff, 0.0);
    l.w2 = gaussian({ff, d});
    l.b2 = constant(d, 0.0);
    p.layers.push_back(std::move(l));
  }
  p.final_gamma = constant(d, 1.0);
  p.final_beta = constant(d, 0.0);
  p.out_weight = gaussian({d, cfg.vocab_size});
  p.out_bias = constant(cfg.vocab_size, 0.0);
  return p;
}

Tensor forward(const ModelConfig& cfg, const ModelParams& params,
               std::span<const std::size_t> tokens, std::span<const std::size_t> positions,
               const AttentionMask& mask) {
  const std::size_t len = tokens.size();
  if (positions.size() != len) {
    throw DimensionError("forward: " + std::to_string(positions.size()) + " positions for " +
                         std::to_string(len) + " tokens");
  }
  for (std::size_t p : positions) {
    if (p >= cfg.max_seq_len) {
      throw ContractError("sequence of length " + std::to_string(p + 1) +
                          " exceeds max_seq_len " + std::to_string(cfg.max_seq_len));
    }
  }
  if (mask.size() != len) {
    throw DimensionError("forward: attention mask of size " + std::to_string(mask.size()) +
                         " for " + std::to_string(len) + " tokens");
  }
  for (std::size_t i = 0; i < len; ++i) {
    if (tokens[i] >= cfg.vocab_size) {
      throw IndexError("token " + std::to_string(tokens[i]) + " at position " +
                       std::to_string(i) + " outside vocabulary of " +
                       std::to_string(cfg.vocab_size));
    }
  }
  Tensor x = ops::add(ops::embedding(params.token_embedding, tokens),
                      ops::embedding(params.position_embedding, positions));
  for (const LayerParams& l : params.layers) {
    const Tensor h = ops::layer_norm(x, l.ln1_gamma, l.ln1_beta);
    const Tensor attn = ops::masked_attention(ops::matmul(h, l.wq), ops::matmul(h, l.wk),
                                              ops::matmul(h, l.wv), mask, cfg.num_heads);
    x = ops::add(x, ops::matmul(attn, l.wo));
    const Tensor h2 = ops::layer_norm(x, l.ln2_gamma, l.ln2_beta);
    const Tensor hidden = ops::gelu(ops::add_row_bias(ops::matmul(h2, l.w1), l.b1));
    x = ops::add(x, ops::add_row_bias(ops::matmul(hidden, l.w2), l.b2));
  }
  const Tensor out = ops::layer_norm(x, params.final_gamma, params.final_beta);
  return ops::add_row_bias(ops::matmul(out, params.out_weight), params.out_bias);
}

Tensor forward(const ModelConfig& cfg, const ModelParams& params,
               std::span<const std::size_t> tokens, const AttentionMask& mask) {
  std::vector<std::size_t> positions(tokens.size());
  std::iota(positions.begin(), positions.end(), std::size_t{0});
  return forward(cfg, params, tokens, positions, mask);
}

TeacherForcedInput teacher_forced_input(std::span<const std::size_t> clean,
                                        std::span<const std::size_t> corrupted,
                                        std::span<const std::size_t> sample_starts,
                                        std::size_t block_len) {
  if (clean.size() != corrupted.size()) {
    throw DimensionError("teacher_forced_input: " + std::to_string(clean.size()) +
                         " clean tokens vs " + std::to_string(corrupted.size()) + " corrupted");
  }
  if (block_len == 0) {
    throw ContractError("block_len must be at least 1");
  }
  if (sample_starts.empty() || sample_starts.front() != 0 ||
      !std::is_sorted(sample_starts.begin(), sample_starts.end()) ||
      sample_starts.back() > clean.size()) {
    throw ContractError("teacher_forced_input: sample starts must be sorted from 0");
  }
  const std::size_t total = 2 * clean.size();
  TeacherForcedInput in;
  in.tokens.reserve(total);
  in.positions.reserve(total);
  std::vector<std::size_t> block(total), sample(total);
  std::vector<std::uint8_t> is_clean(total);
  for (std::size_t s = 0; s < sample_starts.size(); ++s) {
    const std::size_t begin = sample_starts[s];
    const std::size_t end = s + 1 < sample_starts.size() ? sample_starts[s + 1] : clean.size();
    const std::size_t base = in.tokens.size();
    in.corrupted_rows.emplace_back(base, base + (end - begin));
    for (int copy = 0; copy < 2; ++copy) {
      const auto src = copy == 0 ? corrupted : clean;
      for (std::size_t i = begin; i < end; ++i) {
        const std::size_t at = in.tokens.size();
        in.tokens.push_back(src[i]);
        in.positions.push_back(i - begin);
        block[at] = (i - begin) / block_len;
        sample[at] = s;
        is_clean[at] = static_cast<std::uint8_t>(copy);
      }
    }
  }
  std::vector<std::uint8_t> allowed(total * total, 0);
  for (std::size_t q = 0; q < total; ++q) {
    for (std::size_t k = 0; k < total; ++k) {
      if (sample[q] != sample[k]) {
        continue;
      }
      const bool ok = is_clean[q] ? (is_clean[k] && block[k] <= block[q])
                                  : (is_clean[k] ? block[k] < block[q] : block[k] == block[q]);
      allowed[q * total + k] = ok ? 1 : 0;
    }
  }
  in.mask = AttentionMask(total, std::move(allowed));
  return in;
}

Tensor forward_teacher_forced(const ModelConfig& cfg, const ModelParams& params,
                              const TeacherForcedInput& input) {
  const Tensor logits = forward(cfg, params, input.tokens, input.positions, input.mask);
  if (input.corrupted_rows.size() == 1) {
    return ops::slice_rows(logits, input.corrupted_rows[0].first, input.corrupted_rows[0].second);
  }
  std::vector<Tensor> parts;
  parts.reserve(input.corrupted_rows.size());
  for (const auto& [b, e] : input.corrupted_rows) {
    parts.push_back(ops::slice_rows(logits, b, e));
  }
  return ops::concat_rows(parts);
}

}  // namespace blockdiff
