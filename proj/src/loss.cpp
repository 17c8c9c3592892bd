#include "blockdiff/loss.hpp"

#include <algorithm>
#include <numeric>

#include "blockdiff/error.hpp"
#include "blockdiff/ops.hpp"

namespace blockdiff {

bool SupervisionMask::always_masked(std::size_t token) const {
  return std::find(always_mask_ids.begin(), always_mask_ids.end(), token) != always_mask_ids.end();
}

SupervisionMask supervision_for(const TokenSequence& seq,
                                std::vector<std::size_t> always_mask_ids) {
  if (seq.prompt_len > seq.size()) {
    throw ContractError("prompt_len exceeds sequence length");
  }
  SupervisionMask sup;
  sup.always_mask_ids = std::move(always_mask_ids);
  sup.loss_weight.resize(seq.size());
  for (std::size_t i = 0; i < seq.size(); ++i) {
    sup.loss_weight[i] = (i >= seq.prompt_len || sup.always_masked(seq.tokens[i])) ? 1.0 : 0.0;
  }
  return sup;
}

namespace {

void append_sample(PackedRow& row, const TokenSequence& s, std::size_t index,
                   const std::vector<std::size_t>& always_mask_ids) {
  row.sample_starts.push_back(row.tokens.size());
  row.members.push_back(index);
  const SupervisionMask sup = supervision_for(s, always_mask_ids);
  for (std::size_t i = 0; i < s.size(); ++i) {
    row.tokens.push_back(s.tokens[i]);
    row.positions.push_back(i);
    row.supervision.loss_weight.push_back(sup.loss_weight[i]);
  }
}

}  // namespace

std::vector<PackedRow> pack_samples(std::span<const TokenSequence> samples, std::size_t capacity,
                                    const std::vector<std::size_t>& always_mask_ids) {
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].size() > capacity) {
      throw ContractError("sample " + std::to_string(i) + " has length " +
                          std::to_string(samples[i].size()) + ", exceeding pack capacity " +
                          std::to_string(capacity));
    }
  }
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return samples[a].size() > samples[b].size();
  });
  std::vector<PackedRow> rows;
  for (std::size_t idx : order) {
    const TokenSequence& s = samples[idx];
    auto fit = std::find_if(rows.begin(), rows.end(), [&](const PackedRow& r) {
      return r.size() + s.size() <= capacity;
    });
    if (fit == rows.end()) {
      rows.emplace_back();
      rows.back().supervision.always_mask_ids = always_mask_ids;
      fit = std::prev(rows.end());
    }
    append_sample(*fit, s, idx, always_mask_ids);
  }
  return rows;
}

PackedRow single_row(const TokenSequence& sample, const std::vector<std::size_t>& always_mask_ids) {
  PackedRow row;
  row.supervision.always_mask_ids = always_mask_ids;
  append_sample(row, sample, 0, always_mask_ids);
  return row;
}

std::vector<BlockSpan> supervised_blocks(const PackedRow& row, std::size_t block_len) {
  if (block_len == 0) {
    throw ContractError("block_len must be at least 1");
  }
  std::vector<BlockSpan> out;
  std::size_t running = 0;
  for (std::size_t s = 0; s < row.sample_starts.size(); ++s) {
    const std::size_t start = row.sample_starts[s];
    const std::size_t stop = s + 1 < row.sample_starts.size() ? row.sample_starts[s + 1] : row.size();
    for (std::size_t b = start; b < stop; b += block_len) {
      BlockSpan span{running, s, b, std::min(b + block_len, stop), {}};
      for (std::size_t p = span.begin; p < span.end; ++p) {
        if (row.supervision.loss_weight[p] > 0.0) {
          span.eligible.push_back(p);
        }
      }
      if (!span.eligible.empty()) {
        out.push_back(std::move(span));
        ++running;
      }
    }
  }
  return out;
}

std::vector<NoiseDraw> draw_block_masks(const PackedRow& row, std::span<const BlockSpan> blocks,
                                        std::span<const double> ratios, BlockStreams& mask_streams,
                                        std::size_t stream_offset) {
  if (ratios.size() != blocks.size()) {
    throw DimensionError(std::to_string(ratios.size()) + " ratios for " +
                         std::to_string(blocks.size()) + " blocks");
  }
  std::vector<NoiseDraw> draws;
  draws.reserve(blocks.size());
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const BlockSpan& b = blocks[i];
    NoiseDraw d = realize_mask(mask_streams.stream(stream_offset + b.block_index), ratios[i],
                               b.eligible.size(), b.block_index);
    d.positions = b.eligible;
    d.sample_index = b.sample_index;
    for (std::size_t j = 0; j < b.eligible.size(); ++j) {
      if (row.supervision.always_masked(row.tokens[b.eligible[j]])) {
        d.mask[j] = 1;
      }
    }
    d.refresh_ratio();
    draws.push_back(std::move(d));
  }
  return draws;
}

std::vector<std::size_t> apply_corruption(std::span<const std::size_t> tokens,
                                          std::span<const NoiseDraw> draws,
                                          const SupervisionMask& sup, std::size_t mask_token_id) {
  std::vector<std::size_t> out(tokens.begin(), tokens.end());
  for (const NoiseDraw& d : draws) {
    if (d.positions.size() != d.mask.size()) {
      throw ContractError("noise draw for block " + std::to_string(d.block_index) +
                          " has no position map");
    }
    for (std::size_t j = 0; j < d.mask.size(); ++j) {
      if (d.mask[j] != 0) {
        out.at(d.positions[j]) = mask_token_id;
      }
    }
  }
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (sup.always_masked(tokens[i])) {
      out[i] = mask_token_id;
    }
  }
  return out;
}

std::string to_string(ScalingRule rule) {
  return rule == ScalingRule::kSampledRatio ? "sampled-ratio" : "effective-ratio";
}

std::string to_string(Aggregation agg) {
  switch (agg) {
    case Aggregation::kBlockMean:
      return "block-mean";
    case Aggregation::kBlockSum:
      return "block-sum";
    case Aggregation::kTokenMean:
      return "token-mean";
  }
  return "?";
}

ScalingRule parse_scaling_rule(const std::string& s) {
  if (s == "sampled-ratio" || s == "sampled") {
    return ScalingRule::kSampledRatio;
  }
  if (s == "effective-ratio" || s == "effective") {
    return ScalingRule::kEffectiveRatio;
  }
  throw FormatError("unknown loss rule '" + s + "' (sampled-ratio | effective-ratio)");
}

Aggregation parse_aggregation(const std::string& s) {
  if (s == "block-mean") {
    return Aggregation::kBlockMean;
  }
  if (s == "block-sum") {
    return Aggregation::kBlockSum;
  }
  if (s == "token-mean") {
    return Aggregation::kTokenMean;
  }
  throw FormatError("unknown loss aggregation '" + s + "' (block-mean | block-sum | token-mean)");
}

namespace {

double aggregation_divisor(const LossBreakdown& b, Aggregation agg, bool skip) {
  switch (agg) {
    case Aggregation::kBlockMean:
      return static_cast<double>(b.num_supervised_blocks + (skip ? 0 : b.num_skipped));
    case Aggregation::kBlockSum:
      return 1.0;
    case Aggregation::kTokenMean:
      return static_cast<double>(b.num_supervised_tokens);
  }
  return 1.0;
}

}  // namespace

LossResult bd3_loss_from_nll(const Tensor& nll, std::span<const NoiseDraw> draws,
                             const SupervisionMask& sup, ScalingRule rule, Aggregation aggregation,
                             bool skip_zero_mask_blocks) {
  const auto nv = nll.values();
  if (sup.loss_weight.size() != nv.size()) {
    throw DimensionError("supervision mask covers " + std::to_string(sup.loss_weight.size()) +
                         " positions, NLL has " + std::to_string(nv.size()));
  }
  LossResult res;
  LossBreakdown& bd = res.breakdown;
  bd.rule = rule;

  // Per-sample partial sums of scaled block losses, folded in block order.
  std::vector<double> sample_sums;
  std::vector<double> coef(draws.size(), 0.0);  // d(sum of scaled)/d(ell_b)
  for (std::size_t i = 0; i < draws.size(); ++i) {
    const NoiseDraw& d = draws[i];
    if (d.positions.size() != d.mask.size()) {
      throw ContractError("noise draw for block " + std::to_string(d.block_index) +
                          " has no position map");
    }
    BlockLoss bl{d.block_index, d.sample_index, 0.0, d.t, d.t_prime, 0, d.mask.size(), {}};
    for (std::size_t j = 0; j < d.mask.size(); ++j) {
      const std::size_t p = d.positions[j];
      const double w = sup.loss_weight.at(p);
      if (d.mask[j] != 0 && w > 0.0) {
        bl.ell += w * nv[p];
        ++bl.masked_count;
      }
    }
    if (bl.masked_count == 0) {
      if (bl.ell != 0.0) {
        throw ContractError("block " + std::to_string(d.block_index) +
                            " has loss without masked positions");
      }
      ++bd.num_skipped;
    } else {
      const double denom = rule == ScalingRule::kSampledRatio ? d.t : d.t_prime;
      if (!(denom > 0.0)) {
        throw ContractError("block " + std::to_string(d.block_index) +
                            " has masked positions but a zero scaling ratio");
      }
      bl.scaled = bl.ell / denom;
      coef[i] = 1.0 / denom;
      ++bd.num_supervised_blocks;
      bd.num_supervised_tokens += bl.eligible_count;
      bd.num_masked_tokens += bl.masked_count;
      if (sample_sums.size() <= d.sample_index) {
        sample_sums.resize(d.sample_index + 1, 0.0);
      }
      sample_sums[d.sample_index] += *bl.scaled;
    }
    bd.per_block.push_back(std::move(bl));
  }

  double total = 0.0;
  for (double s : sample_sums) {
    total += s;
  }
  if (bd.num_supervised_blocks == 0) {
    res.loss = Tensor::scalar(0.0);
    return res;
  }
  const double divisor = aggregation_divisor(bd, aggregation, skip_zero_mask_blocks);
  bd.batch_loss = total / divisor;

  std::vector<NoiseDraw> kept(draws.begin(), draws.end());
  std::vector<double> weights = sup.loss_weight;
  res.loss = Tensor::make_result(
      {}, {bd.batch_loss}, {nll},
      [nll, kept = std::move(kept), coef = std::move(coef), weights = std::move(weights),
       divisor](std::span<const double> g) mutable {
        if (!nll.requires_grad()) {
          return;
        }
        auto dn = nll.grad_buffer();
        for (std::size_t i = 0; i < kept.size(); ++i) {
          if (coef[i] == 0.0) {
            continue;
          }
          const NoiseDraw& d = kept[i];
          for (std::size_t j = 0; j < d.mask.size(); ++j) {
            const std::size_t p = d.positions[j];
            if (d.mask[j] != 0 && weights[p] > 0.0) {
              dn[p] += g[0] * weights[p] * coef[i] / divisor;
            }
          }
        }
      });
  return res;
}

LossResult bd3_loss(const Tensor& logits, std::span<const std::size_t> targets,
                    std::span<const NoiseDraw> draws, const SupervisionMask& sup, ScalingRule rule,
                    Aggregation aggregation, bool skip_zero_mask_blocks) {
  return bd3_loss_from_nll(ops::token_nll(logits, targets), draws, sup, rule, aggregation,
                           skip_zero_mask_blocks);
}

LossResult combine_rows(std::span<const LossResult> rows, Aggregation aggregation,
                        bool skip_zero_mask_blocks) {
  LossResult res;
  LossBreakdown& bd = res.breakdown;
  double total = 0.0;
  std::vector<Tensor> parents;
  std::vector<double> parent_divisors;
  std::size_t offset = 0;
  for (const LossResult& r : rows) {
    const LossBreakdown& rb = r.breakdown;
    bd.rule = rb.rule;
    for (BlockLoss bl : rb.per_block) {
      bl.block_index += offset;
      bd.per_block.push_back(bl);
    }
    offset += rb.per_block.size();
    bd.num_skipped += rb.num_skipped;
    bd.num_supervised_blocks += rb.num_supervised_blocks;
    bd.num_supervised_tokens += rb.num_supervised_tokens;
    bd.num_masked_tokens += rb.num_masked_tokens;
    if (rb.num_supervised_blocks > 0) {
      // Row values are un-normalized sums when built with block-sum.
      const double row_divisor = aggregation_divisor(rb, Aggregation::kBlockSum, true);
      total += r.loss.item() * row_divisor;
      parents.push_back(r.loss);
      parent_divisors.push_back(row_divisor);
    }
  }
  if (bd.num_supervised_blocks == 0) {
    res.loss = Tensor::scalar(0.0);
    return res;
  }
  const double divisor = aggregation_divisor(bd, aggregation, skip_zero_mask_blocks);
  bd.batch_loss = total / divisor;
  res.loss = Tensor::make_result({}, {bd.batch_loss}, parents,
                                 [parents, divisor](std::span<const double> g) mutable {
                                   for (Tensor& p : parents) {
                                     if (p.requires_grad()) {
                                       p.grad_buffer()[0] += g[0] / divisor;
                                     }
                                   }
                                 });
  return res;
}

}  // namespace blockdiff
