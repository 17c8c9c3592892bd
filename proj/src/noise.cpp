#include "blockdiff/noise.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "blockdiff/error.hpp"

namespace blockdiff {

void BetaSchedule::validate() const {
  const auto in_unit = [](double x) { return x > 0.0 && x < 1.0; };
  if (!in_unit(mu_start) || !in_unit(mu_final)) {
    throw ContractError("beta schedule means must lie in (0, 1)");
  }
  if (!(c_start > 0.0) || !(c_final > 0.0)) {
    throw ContractError("beta schedule concentrations must be positive");
  }
  if (warmup_steps == 0) {
    throw ContractError("beta schedule warmup_steps must be at least 1");
  }
}

BetaParams beta_params_at(const BetaSchedule& sched, std::size_t step) {
  const double u = std::min(static_cast<double>(step) / static_cast<double>(sched.warmup_steps), 1.0);
  const double mu = sched.mu_start + u * (sched.mu_final - sched.mu_start);
  const double c = sched.c_start + u * (sched.c_final - sched.c_start);
  return {mu * c, (1.0 - mu) * c, mu, c};
}

SchedulerKind SchedulerKind::async_clamp(double lo, double hi) {
  SchedulerKind k = with_tag(Tag::kAsyncClamp);
  k.clamp_lo = lo;
  k.clamp_hi = hi;
  k.validate();
  return k;
}

SchedulerKind SchedulerKind::async_beta(const BetaSchedule& sched) {
  SchedulerKind k = with_tag(Tag::kAsyncBeta);
  k.beta = sched;
  k.validate();
  return k;
}

void SchedulerKind::validate() const {
  if (tag == Tag::kAsyncClamp && !(clamp_lo > 0.0 && clamp_lo < clamp_hi && clamp_hi <= 1.0)) {
    throw ContractError("clamp bounds must satisfy 0 < lo < hi <= 1");
  }
  if (tag == Tag::kAsyncBeta) {
    beta.validate();
  }
}

std::string SchedulerKind::describe() const {
  std::ostringstream os;
  switch (tag) {
    case Tag::kSyncUniform:
      os << "sns";
      break;
    case Tag::kAsyncUniform:
      os << "abns";
      break;
    case Tag::kAsyncClamp:
      os << "abns-clamp(" << clamp_lo << "," << clamp_hi << ")";
      break;
    case Tag::kAsyncBeta:
      os << "abns-beta(mu " << beta.mu_start << "->" << beta.mu_final << ", c " << beta.c_start
         << "->" << beta.c_final << ", warmup " << beta.warmup_steps << ")";
      break;
  }
  return os.str();
}

double draw_ratio(Rng& rng, const SchedulerKind& kind, std::size_t step) {
  switch (kind.tag) {
    case SchedulerKind::Tag::kSyncUniform:
    case SchedulerKind::Tag::kAsyncUniform:
      return rng.uniform_open0();
    case SchedulerKind::Tag::kAsyncClamp:
      return kind.clamp_lo + (kind.clamp_hi - kind.clamp_lo) * rng.uniform01();
    case SchedulerKind::Tag::kAsyncBeta: {
      const BetaParams p = beta_params_at(kind.beta, step);
      for (;;) {
        const double t = rng.beta(p.alpha, p.beta);
        if (t > 0.0) {
          return t;
        }
      }
    }
  }
  throw ContractError("unknown scheduler kind");
}

std::vector<double> sample_sync(Rng& rng, std::size_t num_blocks) {
  if (num_blocks == 0) {
    throw ContractError("sample_sync needs at least one block");
  }
  return std::vector<double>(num_blocks, rng.uniform_open0());
}

std::vector<double> sample_async(Rng& rng, std::size_t num_blocks, const SchedulerKind& kind,
                                 std::size_t step) {
  if (num_blocks == 0) {
    throw ContractError("sample_async needs at least one block");
  }
  if (kind.synchronous()) {
    return sample_sync(rng, num_blocks);
  }
  std::vector<double> out(num_blocks);
  for (double& t : out) {
    t = draw_ratio(rng, kind, step);
  }
  return out;
}

std::size_t NoiseDraw::masked_count() const {
  return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), std::uint8_t{1}));
}

void NoiseDraw::refresh_ratio() {
  t_prime = mask.empty() ? 0.0
                         : static_cast<double>(masked_count()) / static_cast<double>(mask.size());
}

NoiseDraw realize_mask(Rng& rng, double t, std::size_t block_len, std::size_t block_index) {
  if (!(t > 0.0 && t <= 1.0)) {
    throw ContractError("mask ratio must lie in (0, 1]");
  }
  if (block_len == 0) {
    throw ContractError("block_len must be at least 1");
  }
  std::vector<std::uint8_t> mask(block_len);
  for (auto& m : mask) {
    m = rng.bernoulli(t) ? 1 : 0;
  }
  return draw_from_mask(t, std::move(mask), block_index);
}

NoiseDraw draw_from_mask(double t, std::vector<std::uint8_t> mask, std::size_t block_index) {
  NoiseDraw d;
  d.t = t;
  d.mask = std::move(mask);
  d.block_index = block_index;
  d.refresh_ratio();
  return d;
}

Rng& BlockStreams::stream(std::size_t block) {
  while (streams_.size() <= block) {
    streams_.emplace_back(derive_seed(master_, {tag_, streams_.size()}));
  }
  return streams_[block];
}

}  // namespace blockdiff
