#include "blockdiff/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>

#include "blockdiff/error.hpp"

namespace blockdiff {

std::size_t RunConfig::warmup_steps() const {
  const double w = std::round(train.warmup_frac * static_cast<double>(train.steps));
  return std::max<std::size_t>(1, static_cast<std::size_t>(w));
}

SchedulerKind RunConfig::resolved_scheduler() const {
  SchedulerKind k = scheduler;
  k.beta.warmup_steps = warmup_steps();
  return k;
}

void RunConfig::validate() const {
  model.validate();
  resolved_scheduler().validate();
  decode.validate();
  if (!(optimizer.lr > 0.0) || !(optimizer.beta2 >= 0.0 && optimizer.beta2 < 1.0) ||
      !(optimizer.eps > 0.0) || optimizer.grad_clip < 0.0) {
    throw ContractError("optimizer needs lr > 0, 0 <= beta2 < 1, eps > 0, grad_clip >= 0");
  }
  if (train.batch_size == 0) {
    throw ContractError("train.batch_size must be positive");
  }
  if (train.pack_capacity > model.max_seq_len) {
    throw ContractError("train.pack_capacity exceeds model.max_seq_len");
  }
  if (train.variance_window < 2) {
    throw ContractError("train.variance_window must be at least 2");
  }
  if (!(train.warmup_frac >= 0.0) || !(train.cot_start_frac >= 0.0 && train.cot_start_frac <= 1.0) ||
      !(train.eval_fraction >= 0.0 && train.eval_fraction < 1.0)) {
    throw ContractError("train fractions out of range");
  }
  if (train.eval_grid_points == 0) {
    throw ContractError("train.eval_grid_points must be positive");
  }
}

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) {
    return {};
  }
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

bool valid_key(std::string_view key) {
  const auto dot = key.find('.');
  if (dot == std::string_view::npos || dot == 0 || dot + 1 == key.size()) {
    return false;
  }
  for (char c : key) {
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '.')) {
      return false;
    }
  }
  return true;
}

}  // namespace

ConfigMap parse_config_text(std::string_view text, const std::string& source) {
  ConfigMap map;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t nl = text.find('\n', start);
    if (nl == std::string_view::npos) {
      nl = text.size();
    }
    ++line_no;
    std::string_view line = text.substr(start, nl - start);
    start = nl + 1;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) {
      line = line.substr(0, hash);
    }
    line = trim(line);
    if (line.empty()) {
      continue;
    }
    const auto eq = line.find('=');
    const std::string where = source + ":" + std::to_string(line_no);
    if (eq == std::string_view::npos) {
      throw FormatError(where + ": expected 'section.key = value'");
    }
    const std::string key(trim(line.substr(0, eq)));
    const std::string value(trim(line.substr(eq + 1)));
    if (!valid_key(key)) {
      throw FormatError(where + ": malformed key '" + key + "'");
    }
    if (!map.emplace(key, value).second) {
      throw FormatError(where + ": duplicate key '" + key + "'");
    }
  }
  return map;
}

ConfigMap load_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw FormatError("cannot open config " + path.string());
  }
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str(), path.string());
}

void apply_override(ConfigMap& map, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos) {
    throw FormatError("override '" + std::string(assignment) + "' is not section.key=value");
  }
  const std::string key(trim(assignment.substr(0, eq)));
  if (!valid_key(key)) {
    throw FormatError("override has malformed key '" + key + "'");
  }
  map[key] = std::string(trim(assignment.substr(eq + 1)));
}

namespace {

std::size_t to_count(const std::string& key, const std::string& v) {
  std::size_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw FormatError("config " + key + ": expected a non-negative integer, got '" + v + "'");
  }
  return out;
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw FormatError("config " + key + ": expected an unsigned integer, got '" + v + "'");
  }
  return out;
}

double to_real(const std::string& key, const std::string& v) {
  char* end = nullptr;
  const double out = std::strtod(v.c_str(), &end);
  if (v.empty() || end != v.c_str() + v.size() || !std::isfinite(out)) {
    throw FormatError("config " + key + ": expected a finite number, got '" + v + "'");
  }
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") {
    return true;
  }
  if (v == "false" || v == "0" || v == "no") {
    return false;
  }
  throw FormatError("config " + key + ": expected true or false, got '" + v + "'");
}

SchedulerKind::Tag to_scheduler(const std::string& key, const std::string& v) {
  if (v == "sns") return SchedulerKind::Tag::kSyncUniform;
  if (v == "abns") return SchedulerKind::Tag::kAsyncUniform;
  if (v == "abns-clamp") return SchedulerKind::Tag::kAsyncClamp;
  if (v == "abns-beta") return SchedulerKind::Tag::kAsyncBeta;
  throw FormatError("config " + key + ": expected sns | abns | abns-clamp | abns-beta, got '" + v +
                    "'");
}

std::string scheduler_name(SchedulerKind::Tag t) {
  switch (t) {
    case SchedulerKind::Tag::kSyncUniform:
      return "sns";
    case SchedulerKind::Tag::kAsyncUniform:
      return "abns";
    case SchedulerKind::Tag::kAsyncClamp:
      return "abns-clamp";
    case SchedulerKind::Tag::kAsyncBeta:
      return "abns-beta";
  }
  return "?";
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

using Setter = std::function<void(RunConfig&, const std::string& key, const std::string& v)>;
using Getter = std::function<std::string(const RunConfig&)>;

struct Field {
  Setter set;
  Getter get;
};

#define COUNT_FIELD(k, member)                                                        \
  {                                                                                   \
    k, {[](RunConfig& c, const std::string& key, const std::string& v) {              \
          c.member = to_count(key, v);                                                \
        },                                                                            \
        [](const RunConfig& c) { return std::to_string(c.member); }}                  \
  }
#define REAL_FIELD(k, member)                                                         \
  {                                                                                   \
    k, {[](RunConfig& c, const std::string& key, const std::string& v) {              \
          c.member = to_real(key, v);                                                 \
        },                                                                            \
        [](const RunConfig& c) { return fmt(c.member); }}                             \
  }
#define BOOL_FIELD(k, member)                                                         \
  {                                                                                   \
    k, {[](RunConfig& c, const std::string& key, const std::string& v) {              \
          c.member = to_bool(key, v);                                                 \
        },                                                                            \
        [](const RunConfig& c) { return std::string(c.member ? "true" : "false"); }}  \
  }

const std::map<std::string, Field>& fields() {
  static const std::map<std::string, Field> table = {
      COUNT_FIELD("model.vocab_size", model.vocab_size),
      COUNT_FIELD("model.embed_dim", model.embed_dim),
      COUNT_FIELD("model.num_layers", model.num_layers),
      COUNT_FIELD("model.num_heads", model.num_heads),
      COUNT_FIELD("model.max_seq_len", model.max_seq_len),
      COUNT_FIELD("model.block_len", model.block_len),
      REAL_FIELD("model.init_std", model.init_std),
      {"scheduler.kind",
       {[](RunConfig& c, const std::string& key, const std::string& v) {
          c.scheduler.tag = to_scheduler(key, v);
        },
        [](const RunConfig& c) { return scheduler_name(c.scheduler.tag); }}},
      {"scheduler.sync_scope",
       {[](RunConfig& c, const std::string& key, const std::string& v) {
          if (v == "step") {
            c.sync_scope = SyncScope::kStep;
          } else if (v == "sample") {
            c.sync_scope = SyncScope::kSample;
          } else {
            throw FormatError("config " + key + ": expected step or sample, got '" + v + "'");
          }
        },
        [](const RunConfig& c) {
          return std::string(c.sync_scope == SyncScope::kStep ? "step" : "sample");
        }}},
      REAL_FIELD("scheduler.clamp_lo", scheduler.clamp_lo),
      REAL_FIELD("scheduler.clamp_hi", scheduler.clamp_hi),
      REAL_FIELD("scheduler.mu_start", scheduler.beta.mu_start),
      REAL_FIELD("scheduler.mu_final", scheduler.beta.mu_final),
      REAL_FIELD("scheduler.c_start", scheduler.beta.c_start),
      REAL_FIELD("scheduler.c_final", scheduler.beta.c_final),
      REAL_FIELD("scheduler.warmup_frac", train.warmup_frac),
      {"loss.rule",
       {[](RunConfig& c, const std::string&, const std::string& v) {
          c.loss.rule = parse_scaling_rule(v);
        },
        [](const RunConfig& c) { return to_string(c.loss.rule); }}},
      {"loss.aggregation",
       {[](RunConfig& c, const std::string&, const std::string& v) {
          c.loss.aggregation = parse_aggregation(v);
        },
        [](const RunConfig& c) { return to_string(c.loss.aggregation); }}},
      BOOL_FIELD("loss.skip_zero_mask_blocks", loss.skip_zero_mask_blocks),
      COUNT_FIELD("decode.block_len", decode.block_len),
      COUNT_FIELD("decode.steps", decode.steps),
      COUNT_FIELD("decode.max_blocks", decode.max_new_blocks),
      BOOL_FIELD("decode.stop_at_eos", decode.stop_at_eos),
      REAL_FIELD("optimizer.lr", optimizer.lr),
      REAL_FIELD("optimizer.beta2", optimizer.beta2),
      REAL_FIELD("optimizer.eps", optimizer.eps),
      REAL_FIELD("optimizer.grad_clip", optimizer.grad_clip),
      COUNT_FIELD("train.steps", train.steps),
      COUNT_FIELD("train.batch_size", train.batch_size),
      COUNT_FIELD("train.pack_capacity", train.pack_capacity),
      COUNT_FIELD("train.checkpoint_every", train.checkpoint_every),
      COUNT_FIELD("train.variance_window", train.variance_window),
      REAL_FIELD("train.cot_start_frac", train.cot_start_frac),
      REAL_FIELD("train.eval_fraction", train.eval_fraction),
      COUNT_FIELD("train.eval_max_samples", train.eval_max_samples),
      COUNT_FIELD("train.eval_grid_points", train.eval_grid_points),
      COUNT_FIELD("train.threads", train.threads),
      BOOL_FIELD("train.record_wall_clock", train.record_wall_clock),
      {"run.seed",
       {[](RunConfig& c, const std::string& key, const std::string& v) { c.seed = to_u64(key, v); },
        [](const RunConfig& c) { return std::to_string(c.seed); }}},
      {"run.corpus",
       {[](RunConfig& c, const std::string&, const std::string& v) { c.corpus = v; },
        [](const RunConfig& c) { return c.corpus.string(); }}},
      {"run.output_dir",
       {[](RunConfig& c, const std::string&, const std::string& v) { c.output_dir = v; },
        [](const RunConfig& c) { return c.output_dir.string(); }}},
  };
  return table;
}

#undef COUNT_FIELD
#undef REAL_FIELD
#undef BOOL_FIELD

}  // namespace

RunConfig run_config_from(const ConfigMap& map) {
  RunConfig cfg;
  const auto& table = fields();
  for (const auto& [key, value] : map) {
    const auto it = table.find(key);
    if (it == table.end()) {
      throw FormatError("unknown config key '" + key + "'");
    }
    it->second.set(cfg, key, value);
  }
  return cfg;
}

ConfigMap to_config_map(const RunConfig& cfg) {
  ConfigMap out;
  for (const auto& [key, f] : fields()) {
    out[key] = f.get(cfg);
  }
  return out;
}

std::string render_config(const RunConfig& cfg) {
  std::string out;
  for (const auto& [key, value] : to_config_map(cfg)) {
    out += key + " = " + value + "\n";
  }
  return out;
}

void apply_seed_environment(RunConfig& cfg) {
  if (const char* env = std::getenv("BLOCKDIFF_SEED"); env != nullptr) {
    cfg.seed = to_u64("BLOCKDIFF_SEED", env);
  }
}

}  // namespace blockdiff
