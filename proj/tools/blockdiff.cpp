// Command-line entry point: train, ablate, sweep-loss-vs-t, verify-theory,
// decode.

#include <algorithm>
#include <cmath>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "blockdiff/checkpoint.hpp"
#include "blockdiff/config.hpp"
#include "blockdiff/decoder.hpp"
#include "blockdiff/error.hpp"
#include "blockdiff/theory.hpp"
#include "blockdiff/tokenizer.hpp"
#include "blockdiff/trainer.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using namespace blockdiff;

namespace {

struct ConfigArgs {
  std::string path;
  std::vector<std::string> overrides;

  void attach(CLI::App* cmd) {
    cmd->add_option("-c,--config", path, "Config file (section.key = value)")->check(CLI::ExistingFile);
    cmd->add_option("--set", overrides, "Override, e.g. --set train.steps=500");
  }

  RunConfig resolve() const {
    ConfigMap map = path.empty() ? ConfigMap{} : load_config_file(path);
    for (const auto& o : overrides) {
      apply_override(map, o);
    }
    RunConfig cfg = run_config_from(map);
    apply_seed_environment(cfg);
    cfg.validate();
    return cfg;
  }
};

SpecialTokens specials(const ModelConfig& m) {
  return {m.mask_token_id, m.think_open_id, m.think_close_id, m.eos_id};
}

CorpusSplit load_split(const RunConfig& cfg) {
  if (cfg.corpus.empty()) {
    throw ContractError("no corpus given (set run.corpus)");
  }
  if (!fs::exists(cfg.corpus)) {
    throw ContractError("corpus not found: " + cfg.corpus.string());
  }
  return split_corpus(ingest_corpus(cfg.corpus, specials(cfg.model)), cfg);
}

void write_text(const fs::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::trunc);
  if (!out) {
    throw FormatError("cannot write " + p.string());
  }
  out << s;
}

int cmd_train(const ConfigArgs& ca) {
  const RunConfig cfg = ca.resolve();
  const CorpusSplit data = load_split(cfg);
  fs::create_directories(cfg.output_dir);
  write_text(cfg.output_dir / "config.txt", render_config(cfg));
  const ArmSpec arm = arm_from_config(cfg);
  const TrainResult res = train(cfg, data, arm, cfg.output_dir);
  const EvalResult ev = evaluate_nll(cfg.model, res.params, data.eval, cfg.train.eval_grid_points,
                                     cfg.seed);
  nlohmann::json report = {{"arm", arm.name},
                           {"scheduler", arm.scheduler.describe()},
                           {"rule", to_string(arm.rule)},
                           {"steps", res.metrics.size()},
                           {"final_batch_loss", res.metrics.empty() ? 0.0 : res.metrics.back().batch_loss},
                           {"held_out_nll", ev.mean_nll},
                           {"held_out_tokens", ev.masked_tokens}};
  write_text(cfg.output_dir / "report.json", report.dump(2) + "\n");
  std::cout << "trained " << res.metrics.size() << " steps; held-out NLL " << ev.mean_nll
            << " nats/token; outputs in " << cfg.output_dir.string() << "\n";
  return 0;
}

int cmd_ablate(const ConfigArgs& ca, const std::vector<std::string>& only) {
  const RunConfig cfg = ca.resolve();
  const CorpusSplit data = load_split(cfg);
  std::vector<ArmSpec> arms;
  for (const ArmSpec& a : standard_arms(cfg)) {
    if (only.empty() || std::find(only.begin(), only.end(), a.name) != only.end()) {
      arms.push_back(a);
    }
  }
  if (arms.empty()) {
    throw ContractError("no arm matched --arm");
  }
  fs::create_directories(cfg.output_dir);
  write_text(cfg.output_dir / "config.txt", render_config(cfg));
  const AblationReport rep = run_ablation(cfg, data, arms, cfg.output_dir);
  std::cout << rep.to_csv();
  return 0;
}

Checkpoint checkpoint_or_init(const std::string& path, const RunConfig& cfg) {
  if (!path.empty()) {
    return load_checkpoint(path);
  }
  return {cfg.model, init_params(cfg.model, cfg.seed)};
}

int cmd_sweep(const ConfigArgs& ca, const std::string& ckpt, std::size_t points, std::size_t masks,
              std::size_t max_samples, const std::string& out) {
  const RunConfig cfg = ca.resolve();
  const Checkpoint ck = checkpoint_or_init(ckpt, cfg);
  CorpusSplit data = load_split(cfg);
  std::vector<TokenSequence> slice(data.eval.begin(),
                                   data.eval.begin() + static_cast<std::ptrdiff_t>(
                                                           std::min(max_samples, data.eval.size())));
  const SweepResult sw =
      sweep_loss_vs_t(ck.config, ck.params, slice, uniform_grid(points), masks, cfg.seed);
  for (std::size_t i = 0; i < sw.t.size(); ++i) {
    std::cout << sw.t[i] << "\t" << sw.mean_loss[i] << "\n";
  }
  std::cout << "spearman " << sw.spearman << "\n";
  if (!out.empty()) {
    write_text(out, to_json(sw).dump(2) + "\n");
  }
  return 0;
}

nlohmann::json theory_suite(std::uint64_t seed, std::size_t replicates, bool& all_passed) {
  nlohmann::json reports = nlohmann::json::array();
  auto record = [&](const EstimatorReport& r) {
    all_passed = all_passed && r.passed;
    reports.push_back(to_json(r));
  };
  const auto tdist = RatioDistribution::uniform(0.0, 1.0);
  const auto linear = SyntheticLossModel::gaussian([](double t) { return 1.0 + 2.0 * t; },
                                                   [](double) { return 0.25; });
  const auto flat = SyntheticLossModel::gaussian([](double) { return 1.0; },
                                                 [](double) { return 0.25; });
  for (const auto* model : {&linear, &flat}) {
    Rng rs(derive_seed(seed, {stream::kTheory, 1, model == &flat ? 1u : 0u}));
    Rng ra(derive_seed(seed, {stream::kTheory, 2, model == &flat ? 1u : 0u}));
    const auto s = estimate_batch_mean_variance(*model, 4, Scheme::kSync, replicates, tdist, rs);
    const auto a = estimate_batch_mean_variance(*model, 4, Scheme::kAsync, replicates, tdist, ra);
    record(s.mean);
    record(a.mean);
    record(mean_equality_report("sync vs async mean", s.samples, a.samples));
    record(variance_gap_report(s, a, *model, 4, tdist));
  }
  for (auto rule : {RatioRule::kSampledRatio, RatioRule::kEffectiveRatio}) {
    Rng r(derive_seed(seed, {stream::kTheory, 3, static_cast<std::uint64_t>(rule)}));
    const auto rep = estimate_scaling_bias(SyntheticLossModel::stylized([](double x) { return x; }),
                                           2, RatioDistribution::fixed(0.5), rule, replicates, r);
    record(rep.estimator);
  }
  nlohmann::json bias = nlohmann::json::array();
  double prev = INFINITY;
  for (std::size_t len : {2, 4, 8, 16}) {
    const auto o = enumerate_scaling_oracle([](double x) { return x * x; }, len,
                                            RatioDistribution::uniform(0.2, 0.8));
    const double per_token = (o.sampled - o.ideal) / static_cast<double>(len);
    all_passed = all_passed && std::abs(o.sampled - o.ideal) < prev;
    prev = std::abs(o.sampled - o.ideal);
    bias.push_back({{"block_len", len},
                    {"sampled_bias", o.sampled - o.ideal},
                    {"sampled_bias_per_token", per_token},
                    {"effective_bias", o.effective - o.ideal}});
  }
  for (auto [len, t] : {std::pair<std::size_t, double>{4, 0.5}, {4, 1.0}, {16, 0.3}}) {
    Rng r(derive_seed(seed, {stream::kTheory, 4, len, static_cast<std::uint64_t>(t * 1000)}));
    record(mask_ratio_deviation_variance(len, t, replicates, r));
  }
  return {{"seed", seed}, {"replicates", replicates}, {"reports", reports}, {"bias_by_block_len", bias}};
}

int cmd_verify(std::uint64_t seed, std::size_t replicates, const std::string& out,
               const std::string& e2e_ckpt, const std::string& corpus, bool e2e) {
  bool ok = true;
  nlohmann::json j = theory_suite(seed, replicates, ok);
  if (e2e) {
    RunConfig defaults;
    ModelConfig mc = defaults.model;
    mc.embed_dim = 64;
    mc.num_layers = 2;
    mc.block_len = 16;  // long blocks: Var_t of the block mean grows faster than its noise
    Checkpoint ck = e2e_ckpt.empty() ? Checkpoint{mc, init_params(mc, seed)} : load_checkpoint(e2e_ckpt);
    auto slice = ingest_corpus(corpus, specials(ck.config));
    slice.resize(std::min<std::size_t>(slice.size(), 200));
    EndToEndConfig ec;
    ec.seed = seed;
    const EndToEndResult r = end_to_end_lemma_check(ck.config, ck.params, slice, ec);
    ok = ok && r.variance_reduced && r.mean_equality.passed;
    j["end_to_end"] = to_json(r);
  }
  j["all_passed"] = ok;
  const std::string text = j.dump(2) + "\n";
  if (out.empty()) {
    std::cout << text;
  } else {
    write_text(out, text);
    std::cout << (ok ? "all checks passed" : "some checks failed") << "; report in " << out << "\n";
  }
  return ok ? 0 : 3;
}

int cmd_decode(const std::string& ckpt, DecodeConfig dc, const std::string& prompt,
               const std::string& trace_out) {
  const Checkpoint ck = load_checkpoint(ckpt);
  const auto tokens = encode_bytes(prompt);
  const DecodeTrace trace = decode_sequence(ck.config, ck.params, tokens, dc);
  std::cout << trace.text << "\n";
  if (!trace_out.empty()) {
    write_text(trace_out, to_json(trace).dump(2) + "\n");
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Block diffusion language-model lab"};
  app.require_subcommand(1);

  ConfigArgs train_args;
  auto* train_cmd = app.add_subcommand("train", "Train one arm from a config");
  train_args.attach(train_cmd);

  ConfigArgs ablate_args;
  std::vector<std::string> only_arms;
  auto* ablate_cmd = app.add_subcommand("ablate", "Train and compare the standard arms");
  ablate_args.attach(ablate_cmd);
  ablate_cmd->add_option("--arm", only_arms, "Restrict to the named arms");

  ConfigArgs sweep_args;
  std::string sweep_ckpt, sweep_out;
  std::size_t sweep_points = 20, sweep_masks = 4, sweep_samples = 32;
  auto* sweep_cmd = app.add_subcommand("sweep-loss-vs-t", "Mean masked NLL per ratio and Spearman rho");
  sweep_args.attach(sweep_cmd);
  sweep_cmd->add_option("--checkpoint", sweep_ckpt, "Checkpoint (default: random init)");
  sweep_cmd->add_option("--points", sweep_points, "Grid points t = j/points")->check(CLI::PositiveNumber);
  sweep_cmd->add_option("--masks", sweep_masks, "Masks per sample and ratio")->check(CLI::PositiveNumber);
  sweep_cmd->add_option("--samples", sweep_samples, "Held-out samples used")->check(CLI::PositiveNumber);
  sweep_cmd->add_option("--out", sweep_out, "JSON output path");

  std::uint64_t theory_seed = 0;
  std::size_t theory_reps = 100000;
  std::string theory_out, theory_ckpt, theory_corpus = "data/corpus.txt";
  bool theory_e2e = false;
  auto* verify_cmd = app.add_subcommand("verify-theory", "Monte Carlo lemma checks");
  verify_cmd->add_option("--seed", theory_seed, "Master seed");
  verify_cmd->add_option("--replicates", theory_reps, "Replicates per estimator")->check(CLI::Range(10, 100000000));
  verify_cmd->add_option("--out", theory_out, "JSON report path (default stdout)");
  verify_cmd->add_flag("--end-to-end", theory_e2e, "Also run the gradient-projection check");
  verify_cmd->add_option("--checkpoint", theory_ckpt, "Model for --end-to-end (default: random init)");
  verify_cmd->add_option("--corpus", theory_corpus, "Block pool for --end-to-end")->check(CLI::ExistingFile);

  std::string decode_ckpt, decode_prompt, decode_trace;
  DecodeConfig dc;
  bool no_stop = false;
  auto* decode_cmd = app.add_subcommand("decode", "Block-wise greedy generation");
  decode_cmd->add_option("--checkpoint", decode_ckpt, "Model checkpoint")->required()->check(CLI::ExistingFile);
  decode_cmd->add_option("--block-len", dc.block_len, "Block length K");
  decode_cmd->add_option("--steps", dc.steps, "Denoising steps S per block");
  decode_cmd->add_option("--max-blocks", dc.max_new_blocks, "Blocks to generate");
  decode_cmd->add_option("--prompt", decode_prompt, "Prompt text");
  decode_cmd->add_option("--trace-out", decode_trace, "Write the JSON decode trace here");
  decode_cmd->add_flag("--fixed-length", no_stop, "Do not stop at an eos block");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*train_cmd) return cmd_train(train_args);
    if (*ablate_cmd) return cmd_ablate(ablate_args, only_arms);
    if (*sweep_cmd) {
      return cmd_sweep(sweep_args, sweep_ckpt, sweep_points, sweep_masks, sweep_samples, sweep_out);
    }
    if (*verify_cmd) return cmd_verify(theory_seed, theory_reps, theory_out, theory_ckpt, theory_corpus, theory_e2e);
    if (*decode_cmd) {
      dc.stop_at_eos = !no_stop;
      return cmd_decode(decode_ckpt, dc, decode_prompt, decode_trace);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
