#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "hybridlab/checkpoint.hpp"
#include "hybridlab/cost.hpp"
#include "hybridlab/csv.hpp"
#include "hybridlab/decode.hpp"
#include "hybridlab/harness.hpp"
#include "hybridlab/layout.hpp"
#include "hybridlab/runconfig.hpp"
#include "hybridlab/verify.hpp"

using namespace hybridlab;

namespace {

/// Flag values keyed by config key; only flags given on the command line override the file.
struct Overrides {
  std::string config_path;
  std::map<std::string, std::string> values;
  std::map<std::string, CLI::Option*> options;

  void add(CLI::App* app, const std::string& key, const std::string& flag) {
    options[key] = app->add_option(flag, values[key], run_config_keys().at(key));
  }

  RunConfig resolve() const {
    RunConfig rc = config_path.empty() ? RunConfig{} : RunConfig::from_ini(config_path);
    for (const auto& [key, opt] : options) {
      if (opt->count() > 0) rc.set(key, values.at(key));
    }
    return rc;
  }
};

void add_model_flags(CLI::App* app, Overrides& o) {
  app->add_option("--config", o.config_path, "INI file with [model] [layout] [fusion] [train] sections")
      ->check(CLI::ExistingFile);
  o.add(app, "model.preset", "--preset");
  for (const char* k : {"vocab", "d_model", "d_ffn", "n_head", "n_kv", "d_head", "d_ssm", "d_head_ssm", "d_state",
                        "n_conv", "chunk", "window", "sink", "rope_base"}) {
    std::string flag = std::string("--") + k;
    std::replace(flag.begin() + 2, flag.end(), '_', '-');
    o.add(app, std::string("model.") + k, flag);
  }
  o.add(app, "fusion.norm", "--norm");
  o.add(app, "fusion.scalar", "--scalar");
  o.add(app, "fusion.fusion", "--fusion");
  o.add(app, "fusion.out_proj", "--out-proj");
  o.add(app, "fusion.dim_ratio", "--dim-ratio");
}

void add_layout_flags(CLI::App* app, Overrides& o) {
  o.add(app, "layout.file", "--layout");
  o.add(app, "layout.depth", "--depth");
  o.add(app, "layout.ratio", "--ratio");
  o.add(app, "layout.counts", "--counts");
  o.add(app, "layout.kind", "--kind");
  o.add(app, "layout.pos", "--pos");
  o.add(app, "layout.moe", "--moe");
}

void add_train_flags(CLI::App* app, Overrides& o) {
  o.add(app, "train.task", "--task");
  o.add(app, "train.data", "--data");
  o.add(app, "train.seq_len", "--seq-len");
  o.add(app, "train.steps", "--steps");
  o.add(app, "train.batch", "--batch");
  o.add(app, "train.lr", "--lr");
  o.add(app, "train.warmup", "--warmup");
  o.add(app, "train.cooldown", "--cooldown");
  o.add(app, "train.clip", "--clip");
  o.add(app, "train.weight_decay", "--weight-decay");
  o.add(app, "train.seed", "--seed");
  o.add(app, "train.stop_accuracy", "--stop-accuracy");
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep)) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

template <typename Fn>
void with_output(const std::string& path, Fn&& fn) {
  if (path.empty() || path == "-") {
    fn(std::cout);
    return;
  }
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path);
  fn(f);
}

int cmd_plan(const Overrides& o, const std::string& out) {
  const RunConfig rc = o.resolve();
  if (!rc.has("layout.file") && !rc.has("layout.counts") && !rc.has("layout.ratio")) {
    throw CLI::ValidationError("plan", "one of --ratio, --counts or --layout is required");
  }
  LayoutSpec l;
  if (rc.has("layout.ratio") && !rc.has("layout.depth") && !rc.has("model.preset") && !rc.has("layout.counts") &&
      !rc.has("layout.file")) {
    throw CLI::ValidationError("plan", "--ratio needs --depth (or a --preset to take the depth from)");
  }
  l = rc.layout();
  std::cout << "# config=" << nlohmann::json{{"settings", nlohmann::json(rc.values())}, {"layout", to_json(l)}}.dump()
            << '\n';
  with_output(out, [&](std::ostream& os) { os << write_layout(l); });
  if (!out.empty() && out != "-") std::cout << write_layout(l);
  std::cout << "specials:";
  for (auto i : l.special_indices()) std::cout << ' ' << i;
  std::cout << '\n';
  for (const auto& m : lint_layout(l)) {
    std::cerr << (m.level == LintMessage::Level::kWarning ? "warning: " : "info: ") << m.text << '\n';
  }
  return 0;
}

struct GoldenRow {
  const char* preset;
  double cache_mib, cache_tol, flops, flops_rel_tol;
};

int run_golden_table2() {
  const GoldenRow rows[] = {{"llama-1b", 256.0, 0.0, 4.5e20, 0.03},
                            {"mamba-1b", 13.4, 0.1, 3.7e20, 0.03},
                            {"swa-1b", 63.0, 1.0, 3.8e20, 0.03},
                            {"inter-1b", 43.0, 1.0, 3.7e20, 0.03},
                            {"intra-1b", 38.0, 2.0, 3.7e20, 0.03}};
  int failures = 0;
  std::printf("%-10s %12s %12s %8s %12s %12s %8s\n", "preset", "cache_MiB", "target", "status", "flops", "target",
              "status");
  for (const auto& g : rows) {
    const Preset p = preset(g.preset);
    const CostReport r = cost_report(p.layout, p.model, 8192, 60e9, g.preset);
    const double mib = static_cast<double>(r.cache_bytes) / kMiB;
    const bool cache_ok = g.cache_tol == 0.0 ? r.cache_bytes == static_cast<std::int64_t>(g.cache_mib * kMiB)
                                             : std::abs(mib - g.cache_mib) <= g.cache_tol;
    const bool flops_ok = std::abs(r.train_flops - g.flops) <= g.flops_rel_tol * g.flops;
    failures += !cache_ok + !flops_ok;
    std::printf("%-10s %12s %12s %8s %12s %12s %8s\n", g.preset, fmt_sig3(mib).c_str(), fmt_sig3(g.cache_mib).c_str(),
                cache_ok ? "ok" : "DRIFT", fmt_sig3(r.train_flops).c_str(), fmt_sig3(g.flops).c_str(),
                flops_ok ? "ok" : "DRIFT");
  }
  if (failures) std::cerr << failures << " golden value(s) outside tolerance\n";
  return failures ? 1 : 0;
}

int cmd_cost(const Overrides& o, const std::vector<std::int64_t>& ctx, double tokens, const std::string& golden,
             const std::string& sweep, bool csv, const std::string& out) {
  if (!golden.empty()) {
    if (golden != "table2") throw CLI::ValidationError("--golden", "only 'table2' is available");
    return run_golden_table2();
  }
  const RunConfig rc = o.resolve();
  const std::string fallback = sweep.empty() ? "llama-1b" : "inter-1b";
  const ModelConfig cfg = rc.model(fallback);
  std::vector<std::pair<LayoutSpec, std::string>> layouts;
  if (!sweep.empty()) {
    const std::int64_t depth = rc.has("layout.depth") ? std::stoll(*rc.get("layout.depth"))
                                                      : preset(rc.get("model.preset").value_or(fallback)).layout.depth();
    const BlockKind kind = parse_block_kind(rc.get("layout.kind").value_or("attn"));
    const Positioning pos = parse_positioning(rc.get("layout.pos").value_or("scatter"));
    for (const auto& r : split(sweep, ',')) {
      layouts.emplace_back(plan_layout(depth, parse_ratio(r), kind, pos), std::string(to_string(kind)) + "-" + r);
    }
  } else {
    layouts.emplace_back(rc.layout(fallback), rc.get("model.preset").value_or(fallback));
  }
  std::vector<CostReport> reports;
  for (const auto& [l, id] : layouts) {
    for (std::int64_t c : ctx) reports.push_back(cost_report(l, cfg, c, tokens, id));
  }
  nlohmann::json resolved{{"settings", nlohmann::json(rc.values())},
                          {"model", to_json(cfg)},
                          {"tokens", tokens},
                          {"ctx", ctx}};
  if (sweep.empty()) resolved["layout"] = to_json(layouts[0].first);
  else resolved["sweep"] = sweep;
  with_output(out, [&](std::ostream& os) {
    if (csv) {
      write_cost_csv(os, reports, resolved.dump());
    } else {
      os << "# config=" << resolved.dump() << '\n';
      write_cost_table(os, reports);
    }
  });
  return 0;
}

int cmd_verify(const std::vector<std::string>& suites, const std::string& chaos, std::uint64_t seed) {
  VerifyOptions opts;
  opts.suites = suites;
  opts.seed = seed;
  if (!chaos.empty()) {
    if (chaos != "flip-sign") throw CLI::ValidationError("--chaos", "only 'flip-sign' is available");
    opts.chaos_flip_sign = true;
  }
  const auto results = run_verify(opts);
  std::map<std::string, std::pair<int, int>> per_suite;
  int failed = 0;
  for (const auto& r : results) {
    std::cout << (r.passed ? "PASS " : "FAIL ") << r.suite << ": " << r.name;
    if (!r.detail.empty()) std::cout << " (" << r.detail << ")";
    std::cout << '\n';
    auto& s = per_suite[r.suite];
    ++s.first;
    s.second += !r.passed;
    failed += !r.passed;
  }
  for (const auto& [name, s] : per_suite) {
    std::cout << "suite " << name << ": " << s.first - s.second << "/" << s.first << " passed\n";
  }
  std::cout << results.size() << " properties executed, " << failed << " failed\n";
  return failed || results.empty() ? 1 : 0;
}

BatchSource make_source(const RunConfig& rc, const ModelConfig& cfg, const TrainConfig& tc) {
  const std::string task = rc.get("train.task").value_or("copy");
  const std::int64_t len = std::stoll(rc.get("train.seq_len").value_or("64"));
  if (task == "copy") return copy_source(cfg.vocab, len, tc.batch, tc.seed);
  if (task == "needle") return niah_training_source(cfg.vocab, len, tc.batch, tc.seed);
  if (task == "ids" || task == "bytes") {
    const auto data = rc.get("train.data");
    if (!data) throw CLI::ValidationError("--data", "task '" + task + "' needs a dataset file");
    auto corpus = task == "ids" ? read_token_ids(*data) : read_token_bytes(*data);
    for (auto t : corpus) {
      if (t >= cfg.vocab) {
        throw CLI::ValidationError("--data", "token " + std::to_string(t) + " exceeds vocab " + std::to_string(cfg.vocab));
      }
    }
    return stream_source(std::move(corpus), len, tc.batch, tc.seed);
  }
  throw CLI::ValidationError("--task", "expected copy, needle, ids or bytes, got '" + task + "'");
}

int cmd_train(const Overrides& o, const std::string& ckpt, const std::string& trace_path) {
  const RunConfig rc = o.resolve();
  const ModelConfig cfg = rc.model();
  const LayoutSpec layout = rc.layout();
  const TrainConfig tc = rc.train();
  nlohmann::json resolved = rc.resolved();
  resolved["train"] = {{"steps", tc.steps},           {"batch", tc.batch},     {"lr", tc.peak_lr},
                       {"warmup", tc.warmup_frac},    {"cooldown", tc.cooldown_frac}, {"clip", tc.clip_norm},
                       {"weight_decay", tc.weight_decay}, {"seed", tc.seed}, {"stop_accuracy", tc.stop_accuracy},
                       {"task", rc.get("train.task").value_or("copy")}, {"seq_len", rc.get("train.seq_len").value_or("64")}};
  std::cout << "# config=" << resolved.dump() << '\n';
  HybridModel model = HybridModel::build(cfg, layout, tc.seed);
  const auto trace = train(model, make_source(rc, cfg, tc), tc, [](const TrainStep& s) {
    if (s.step % 100 == 0) {
      std::cout << "step " << s.step << " lr " << fmt_sig3(s.lr) << " loss " << fmt_sig3(s.loss) << " acc "
                << fmt_sig3(s.accuracy) << '\n';
    }
  });
  const auto& last = trace.back();
  std::cout << "finished " << trace.size() << " steps, loss " << fmt_sig3(last.loss) << " acc " << fmt_sig3(last.accuracy)
            << '\n';
  if (!trace_path.empty()) with_output(trace_path, [&](std::ostream& os) { write_train_csv(os, trace, resolved.dump()); });
  save_checkpoint(ckpt, model, resolved);
  std::cout << "checkpoint written to " << ckpt << '\n';
  return 0;
}

std::vector<double> parse_doubles(const std::string& s) {
  std::vector<double> out;
  for (const auto& x : split(s, ',')) out.push_back(std::stod(x));
  return out;
}

std::vector<std::int64_t> parse_ints(const std::string& s) {
  std::vector<std::int64_t> out;
  for (const auto& x : split(s, ',')) out.push_back(std::stoll(x));
  return out;
}

int cmd_eval(const std::string& what, const std::string& ckpt, const std::string& depths, const std::string& lengths,
             std::int64_t trials, std::uint64_t seed, const std::string& data, std::int64_t bucket,
             std::int64_t train_len, const std::string& out) {
  LoadedCheckpoint lc = load_checkpoint(ckpt);
  const HybridModel& m = lc.model;
  nlohmann::json resolved{{"checkpoint", ckpt}, {"trained_with", lc.meta}, {"eval", what}, {"seed", seed}};
  if (what == "niah") {
    resolved["depths"] = depths;
    resolved["lengths"] = lengths;
    resolved["trials"] = trials;
    const NiahGrid g = niah_eval(m, parse_doubles(depths), parse_ints(lengths), trials, seed);
    with_output(out, [&](std::ostream& os) { write_niah_csv(os, g, resolved.dump()); });
    return 0;
  }
  if (what == "copy") {
    const std::int64_t len = std::stoll(lengths.empty() ? "64" : split(lengths, ',').front());
    const double acc = token_accuracy(m, copy_batch(m.cfg.vocab, len, trials, seed));
    std::cout << "# config=" << resolved.dump() << '\n' << "copy accuracy " << fmt_full(acc) << '\n';
    return 0;
  }
  if (what == "nll") {
    if (data.empty()) throw CLI::ValidationError("--data", "nll evaluation needs a token id file");
    const auto stream = read_token_ids(data);
    const auto buckets = positionwise_nll(m, stream, bucket, train_len);
    with_output(out, [&](std::ostream& os) {
      write_csv_preamble(os, resolved.dump());
      write_csv_row(os, {"bucket_start", "mean_nll", "extrapolated"});
      for (const auto& b : buckets) {
        write_csv_row(os, {std::to_string(b.start), fmt_full(b.mean_nll), b.extrapolated ? "1" : "0"});
      }
    });
    return 0;
  }
  throw CLI::ValidationError("eval", "expected niah, copy or nll, got '" + what + "'");
}

int cmd_decode(const Overrides& o, const std::string& ckpt, std::int64_t prompt_len, std::int64_t gen_len,
               std::uint64_t seed, const std::string& out) {
  if (prompt_len < 1 || gen_len < 1) throw CLI::ValidationError("decode", "lengths must be >= 1");
  if (!ckpt.empty()) {
    LoadedCheckpoint lc = load_checkpoint(ckpt);
    const auto rows = measure_decode(lc.model, prompt_len, gen_len, seed);
    const nlohmann::json resolved{{"checkpoint", ckpt}, {"prompt_len", prompt_len}, {"gen_len", gen_len}, {"seed", seed},
                                  {"mode", "measured"}};
    with_output(out, [&](std::ostream& os) { write_decode_csv(os, rows, resolved.dump()); });
    return 0;
  }
  const RunConfig rc = o.resolve();
  nlohmann::json resolved = rc.resolved("llama-1b");
  resolved["prompt_len"] = prompt_len;
  resolved["gen_len"] = gen_len;
  resolved["mode"] = "analytic";
  const auto rows = decode_trace(rc.layout("llama-1b"), rc.model("llama-1b"), prompt_len, gen_len);
  with_output(out, [&](std::ostream& os) { write_decode_csv(os, rows, resolved.dump()); });
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hybridlab: hybrid attention/SSM language model toolkit"};
  app.require_subcommand(1);

  Overrides plan_o;
  std::string plan_out;
  auto* plan = app.add_subcommand("plan", "Plan a block layout and lint it");
  add_model_flags(plan, plan_o);
  add_layout_flags(plan, plan_o);
  plan->add_option("-o,--out", plan_out, "layout file to write (default: stdout)");

  Overrides cost_o;
  std::vector<std::int64_t> ctx{8192};
  double tokens = 60e9;
  std::string golden, sweep, cost_out;
  bool csv = false;
  auto* cost = app.add_subcommand("cost", "Parameter, FLOPs and cache accounting");
  add_model_flags(cost, cost_o);
  add_layout_flags(cost, cost_o);
  cost->add_option("--ctx", ctx, "context length(s)")->delimiter(',');
  cost->add_option("--tokens", tokens, "training token budget");
  cost->add_option("--golden", golden, "reproduce a published table (table2)");
  cost->add_option("--sweep", sweep, "comma-separated ratios, e.g. 1:0,1:1,1:5,0:1");
  cost->add_flag("--csv", csv, "full-precision CSV instead of a table");
  cost->add_option("-o,--out", cost_out, "output file (default: stdout)");

  std::vector<std::string> suites;
  std::string chaos;
  std::uint64_t verify_seed = 0;
  auto* verify = app.add_subcommand("verify", "Run property suites");
  verify->add_option("--suite", suites, "suite(s) to run")->check(CLI::IsMember(verify_suite_names()));
  verify->add_option("--chaos", chaos, "fault injection mode (flip-sign)");
  verify->add_option("--seed", verify_seed, "seed");

  Overrides train_o;
  std::string ckpt_out = "model.ckpt", trace_out;
  auto* trainc = app.add_subcommand("train", "Train a toy model");
  add_model_flags(trainc, train_o);
  add_layout_flags(trainc, train_o);
  add_train_flags(trainc, train_o);
  trainc->add_option("--ckpt", ckpt_out, "checkpoint path");
  trainc->add_option("--trace", trace_out, "loss trace CSV path");

  std::string eval_what, eval_ckpt, depths = "0,0.25,0.5,0.75,1", lengths = "32,64", eval_data, eval_out;
  std::int64_t trials = 20, bucket = 16, train_len = 0;
  std::uint64_t eval_seed = 0;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint (niah, copy, nll)");
  eval->add_option("what", eval_what, "niah | copy | nll")->required();
  eval->add_option("--ckpt", eval_ckpt, "checkpoint path")->required()->check(CLI::ExistingFile);
  eval->add_option("--depths", depths, "needle depth fractions");
  eval->add_option("--lengths", lengths, "context lengths");
  eval->add_option("--trials", trials, "trials per cell");
  eval->add_option("--seed", eval_seed, "seed");
  eval->add_option("--data", eval_data, "token id file for nll");
  eval->add_option("--bucket", bucket, "positions per nll bucket");
  eval->add_option("--train-len", train_len, "training length (flags extrapolation buckets)");
  eval->add_option("-o,--out", eval_out, "output file (default: stdout)");

  Overrides dec_o;
  std::string dec_ckpt, dec_out;
  std::int64_t prompt_len = 512, gen_len = 128;
  std::uint64_t dec_seed = 0;
  auto* dec = app.add_subcommand("decode", "Per-step decode cost trace");
  add_model_flags(dec, dec_o);
  add_layout_flags(dec, dec_o);
  dec->add_option("--ckpt", dec_ckpt, "measure a real decode of this checkpoint");
  dec->add_option("--prompt-len", prompt_len, "prompt length");
  dec->add_option("--gen-len", gen_len, "generated tokens");
  dec->add_option("--seed", dec_seed, "seed for random prompt tokens");
  dec->add_option("-o,--out", dec_out, "output file (default: stdout)");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*plan) return cmd_plan(plan_o, plan_out);
    if (*cost) return cmd_cost(cost_o, ctx, tokens, golden, sweep, csv, cost_out);
    if (*verify) return cmd_verify(suites, chaos, verify_seed);
    if (*trainc) return cmd_train(train_o, ckpt_out, trace_out);
    if (*eval) {
      return cmd_eval(eval_what, eval_ckpt, depths, lengths, trials, eval_seed, eval_data, bucket, train_len, eval_out);
    }
    if (*dec) return cmd_decode(dec_o, dec_ckpt, prompt_len, gen_len, dec_seed, dec_out);
  } catch (const CLI::Error& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
