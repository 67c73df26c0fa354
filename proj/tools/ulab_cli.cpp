// ulab: command-line driver for the unlearning lab.
//
// Exit codes: 0 ok, 1 usage or configuration, 2 data/format, 3 numeric.

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "ulab/analysis/attack.hpp"
#include "ulab/analysis/connectivity.hpp"
#include "ulab/analysis/relearn.hpp"
#include "ulab/databench/io.hpp"
#include "ulab/error.hpp"
#include "ulab/evalsuite/metrics.hpp"
#include "ulab/model/checkpoint.hpp"
#include "ulab/runner/config.hpp"
#include "ulab/runner/manifest.hpp"
#include "ulab/runner/pipeline.hpp"
#include "ulab/runner/report.hpp"
#include "ulab/runner/sweep.hpp"
#include "ulab/unlearn/training.hpp"

namespace {

using namespace ulab;
using namespace ulab::runner;
using Params = model::LMParams<float>;
using model::Tokens;

enum Exit { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3 };

/// Options every subcommand shares, plus flag-to-key overrides collected
/// during parsing. A key may contain "{method}", filled in once the method
/// is known.
struct Common {
  std::optional<std::string> config;
  std::vector<std::string> sets;
  std::vector<std::pair<std::string, std::string>> flags;
  json args = json::object();

  json resolve(const std::string& method = "") const {
    auto all = sets;
    for (auto [key, value] : flags) {
      if (auto pos = key.find("{method}"); pos != std::string::npos) {
        if (method.empty()) throw ConfigError("flag for " + key + " needs a method");
        key.replace(pos, 8, method);
      }
      all.push_back(key + "=" + value);
    }
    std::optional<fs::path> file;
    if (config) file = *config;
    return resolve_config(file, all);
  }
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config, "JSON config file (keys must exist in the defaults)");
  sub->add_option("--set", c.sets, "Override one config key: section.key=value (repeatable)");
}

/// Adds a flag that overrides one config key and is echoed in the manifest.
void map_flag(CLI::App* sub, Common& c, const std::string& flag, const std::string& key, const std::string& help) {
  sub->add_option_function<std::string>(
      flag, [&c, key, flag](const std::string& v) {
        c.flags.emplace_back(key, v);
        c.args[flag.substr(2)] = v;
      },
      help);
}

void echo_arg(Common& c, const std::string& name, const json& v) { c.args[name] = v; }

json seeds_of(const json& cfg) {
  return {{"benchmark", cfg["benchmark"]["seed"]},
          {"model", cfg["model"]["seed"]},
          {"pretrain", cfg["pretrain"]["seed"]},
          {"npo_control", cfg["unlearn"]["npo"]["control_seed"]},
          {"npo_order", cfg["unlearn"]["npo"]["order_seed"]},
          {"rmu_control", cfg["unlearn"]["rmu"]["control_seed"]},
          {"rmu_order", cfg["unlearn"]["rmu"]["order_seed"]},
          {"select_random", cfg["select"]["random_seed"]},
          {"select_moderate", cfg["select"]["moderate_seed"]},
          {"attack", cfg["attack"]["seed"]},
          {"relearn", cfg["relearn"]["seeds"]}};
}

RunManifest start_manifest(const std::string& command, const Common& c, const json& cfg) {
  RunManifest m;
  m.command = command;
  m.args = c.args;
  m.config = cfg;
  m.seeds = seeds_of(cfg);
  return m;
}

fs::path beside(const fs::path& out, const std::string& suffix) {
  fs::path p = out;
  p += suffix;
  return p;
}

/// The benchmark file itself, for hashing; directories hold benchmark.json.
fs::path bench_file(const fs::path& p) { return fs::is_directory(p) ? p / "benchmark.json" : p; }

Params load_params(const fs::path& p) { return model::load_checkpoint<float>(p); }

void check_vocab(const Params& p, const data::SyntheticBenchmark& b, const std::string& what) {
  if (p.config.vocab_size != b.vocab_size())
    throw DataError(what + " has vocab " + std::to_string(p.config.vocab_size) + " but the benchmark has " +
                    std::to_string(b.vocab_size()));
}

void print_report(const eval::EvalReport& r) {
  std::printf("UE %.2f  UT %.2f  VerbMem %.2f  KnowMem %.2f  PrivLeak %s\n", r.ue, r.ut, r.verbmem, r.knowmem,
              fmt_opt(r.privleak).c_str());
}

// ------------------------------------------------------------------ gen-data

struct GenData {
  Common c;
  std::string out;
};

int run_gen_data(GenData& o) {
  const json cfg = o.c.resolve();
  const auto gen = gen_config(cfg);
  const fs::path dir = resolve_output(o.out);
  auto m = start_manifest("gen-data", o.c, cfg);
  fs::create_directories(dir);
  write_manifest(m, dir / "manifest.json");
  const auto b = data::generate_benchmark(gen);
  write_text_atomic(dir / "benchmark.json", data::benchmark_text(b));
  std::printf("benchmark: vocab %u, %zu forget / %zu retain records, %zu + %zu MCQ items -> %s\n", b.vocab_size(),
              b.forget_records.size(), b.retain_records.size(), b.forget_eval.size(), b.utility_eval.size(),
              (dir / "benchmark.json").c_str());
  return kOk;
}

// --------------------------------------------------------------------- train

struct Train {
  Common c;
  std::string bench, out;
  bool retrain = false;
};

int run_train(Train& o) {
  const json cfg = o.c.resolve();
  auto m = start_manifest("train", o.c, cfg);
  m.add_input("bench", bench_file(o.bench));
  const auto b = data::load_benchmark(o.bench);
  const auto mc = model_config(cfg, b.vocab_size());
  const auto tc = pretrain_config(cfg);
  const fs::path out = resolve_output(o.out);
  m.extra = {{"retrain_baseline", o.retrain}};
  write_manifest(m, beside(out, ".manifest.json"));
  const auto corpus = pretrain_corpus(b, o.retrain);
  const auto r = unlearn::train_lm<float>(mc, std::span<const Tokens>(corpus), tc);
  model::save_checkpoint(r.params, out);
  std::printf("trained %ld epochs on %zu records, final loss %.4f\n", tc.epochs, corpus.size(),
              r.epoch_loss.empty() ? 0.0 : r.epoch_loss.back());
  std::printf("forget MCQ acc %.2f  utility MCQ acc %.2f -> %s\n",
              eval::mcq_accuracy(r.params, std::span<const data::MCQItem>(b.forget_eval)),
              eval::mcq_accuracy(r.params, std::span<const data::MCQItem>(b.utility_eval)), out.c_str());
  return kOk;
}

// -------------------------------------------------------------------- select

struct Select {
  Common c;
  std::string method = "random", bench, ckpt, out, unlearn_method = "rmu";
  double ratio = 0.05;
  std::uint64_t trial = 0;
};

int run_select(Select& o) {
  const json cfg = o.c.resolve(o.unlearn_method);
  const auto sel = parse_selector(o.method);
  const auto um = unlearn::parse_method(o.unlearn_method);
  const auto ucfg = unlearn_config(cfg, um);
  if (!(o.ratio > 0 && o.ratio <= 1)) throw ConfigError("--ratio must lie in (0, 1]");
  auto m = start_manifest("select", o.c, cfg);
  m.add_input("bench", bench_file(o.bench));
  m.add_input("ckpt", o.ckpt);
  const fs::path out = resolve_output(o.out);
  write_manifest(m, beside(out, ".manifest.json"));
  const auto b = data::load_benchmark(o.bench);
  const auto theta = load_params(o.ckpt);
  check_vocab(theta, b, "checkpoint");
  const auto f = data::record_tokens(b.forget_records), r = data::record_tokens(b.retain_records);
  const auto s = select_coreset(sel, theta, std::span<const Tokens>(f), std::span<const Tokens>(r), o.ratio,
                                select_settings(cfg), ucfg, o.trial);
  write_text_atomic(out, selection_to_json(s).dump(2) + "\n");
  std::printf("%s selected %zu of %zu records -> %s\n", s.method.c_str(), s.indices.size(), f.size(), out.c_str());
  return kOk;
}

// ------------------------------------------------------------------- unlearn

struct Unlearn {
  Common c;
  std::string method = "rmu", select = "random", bench, ckpt_in, ckpt_out;
  std::optional<std::string> selection;
  double ratio = 1.0;
  std::uint64_t trial = 0;
};

int run_unlearn(Unlearn& o) {
  const json cfg = o.c.resolve(o.method);
  const auto method = unlearn::parse_method(o.method);
  auto ucfg = unlearn_config(cfg, method, o.ratio);
  auto m = start_manifest("unlearn", o.c, cfg);
  m.add_input("bench", bench_file(o.bench));
  m.add_input("ckpt", o.ckpt_in);
  if (o.selection) m.add_input("selection", *o.selection);
  const long epochs = unlearn::epochs_for_ratio(ucfg.base_epochs, ucfg.ratio);
  m.extra = {{"ratio", o.ratio}, {"base_epochs", ucfg.base_epochs}, {"epochs", epochs}};
  const fs::path out = resolve_output(o.ckpt_out);
  write_manifest(m, beside(out, ".manifest.json"));

  const auto b = data::load_benchmark(o.bench);
  const auto theta0 = load_params(o.ckpt_in);
  check_vocab(theta0, b, "checkpoint");
  const auto f = data::record_tokens(b.forget_records), r = data::record_tokens(b.retain_records);
  coreset::Selection s;
  if (o.selection) {
    s = selection_from_json(json::parse(read_text(*o.selection)));
    if (s.ratio != o.ratio) throw ConfigError("selection file ratio differs from --ratio");
  } else {
    s = select_coreset(parse_selector(o.select), theta0, std::span<const Tokens>(f), std::span<const Tokens>(r), o.ratio,
                       select_settings(cfg), ucfg, o.trial);
  }
  const auto core = gather(std::span<const Tokens>(f), s.indices);
  ucfg.order_seed += o.trial;
  const auto res = unlearn::unlearn(theta0, std::span<const Tokens>(core), std::span<const Tokens>(r), ucfg);
  model::save_checkpoint(res.params, out);
  std::printf("%s on %zu records for %ld epochs (%ld steps) -> %s\n", unlearn::method_name(method), core.size(),
              res.epochs, res.steps, out.c_str());
  std::printf("UE %.2f  UT %.2f\n",
              eval::unlearning_effectiveness(res.params, std::span<const data::MCQItem>(b.forget_eval)),
              eval::utility(res.params, std::span<const data::MCQItem>(b.utility_eval)));
  return kOk;
}

// ---------------------------------------------------------------------- eval

struct Eval {
  Common c;
  std::string ckpt, bench, out;
  std::optional<std::string> retrain;
};

json eval_document(const std::string& label, const eval::EvalReport& r, const json& cfg) {
  return {{"label", label}, {"metrics", report_to_json(r)}, {"config", cfg.at("eval")}};
}

int run_eval(Eval& o) {
  const json cfg = o.c.resolve();
  auto m = start_manifest("eval", o.c, cfg);
  m.add_input("bench", bench_file(o.bench));
  m.add_input("ckpt", o.ckpt);
  if (o.retrain) m.add_input("retrain", *o.retrain);
  const fs::path out = resolve_output(o.out);
  write_manifest(m, beside(out, ".manifest.json"));
  const auto b = data::load_benchmark(o.bench);
  const auto theta = load_params(o.ckpt);
  check_vocab(theta, b, "checkpoint");
  std::optional<Params> rt;
  if (o.retrain) {
    rt = load_params(*o.retrain);
    check_vocab(*rt, b, "retrain checkpoint");
  }
  const auto r = eval::evaluate(theta, b, rt ? &*rt : nullptr, eval_options(cfg));
  write_text_atomic(out, eval_document(fs::path(o.ckpt).stem().string(), r, cfg).dump(2) + "\n");
  print_report(r);
  return kOk;
}

// --------------------------------------------------------------------- sweep

struct Sweep {
  Common c;
  std::string bench, ckpt, out;
  std::optional<std::string> retrain, replay;
};

int run_sweep_cmd(Sweep& o) {
  json cfg;
  std::string bench = o.bench, ckpt = o.ckpt;
  std::optional<std::string> retrain = o.retrain;
  RunManifest m;
  if (o.replay) {
    const auto prev = load_manifest(*o.replay);
    if (prev.command != "sweep") throw DataError("manifest is for '" + prev.command + "', not sweep");
    prev.verify_inputs();
    cfg = prev.config;
    bench = prev.input("bench")->path.string();
    ckpt = prev.input("ckpt")->path.string();
    if (const auto* rt = prev.input("retrain")) retrain = rt->path.string();
    m = prev;
    m.started_utc = utc_now();
    m.extra["replay_of"] = fs::absolute(*o.replay).string();
  } else {
    if (bench.empty() || ckpt.empty()) throw ConfigError("sweep needs --bench and --ckpt (or --replay)");
    cfg = o.c.resolve();
    m = start_manifest("sweep", o.c, cfg);
    m.add_input("bench", bench_file(bench));
    m.add_input("ckpt", ckpt);
    if (retrain) m.add_input("retrain", *retrain);
  }
  const auto spec = sweep_spec(cfg);
  m.extra["epoch_schedule"] = epoch_schedule(spec, cfg);
  m.extra["cells"] = spec.cells();
  const fs::path dir = resolve_output(o.out);
  fs::create_directories(dir);
  write_manifest(m, dir / "manifest.json");

  const auto b = data::load_benchmark(bench);
  const auto theta0 = load_params(ckpt);
  check_vocab(theta0, b, "checkpoint");
  std::optional<Params> rt;
  if (retrain) {
    rt = load_params(*retrain);
    check_vocab(*rt, b, "retrain checkpoint");
  }
  const auto rows = run_sweep(spec, cfg, b, theta0, rt ? &*rt : nullptr);
  write_text_atomic(dir / "sweep.csv", sweep_csv(rows));
  write_text_atomic(dir / "summary.csv", sweep_summary_csv(rows));
  std::size_t failed = 0;
  for (const auto& r : rows) failed += !r.error.empty();
  std::printf("%zu cells (%zu failed) -> %s\n", rows.size(), failed, (dir / "sweep.csv").c_str());
  std::cout << sweep_summary_csv(rows);
  return kOk;
}

// -------------------------------------------------------------- connectivity

struct Connectivity {
  Common c;
  std::string ckpt_a, ckpt_b, bench, out, grid = "0:1:0.1";
};

int run_connectivity(Connectivity& o) {
  const json cfg = o.c.resolve();
  const auto grid = analysis::parse_grid(o.grid);
  auto m = start_manifest("connectivity", o.c, cfg);
  m.add_input("bench", bench_file(o.bench));
  m.add_input("ckpt_a", o.ckpt_a);
  m.add_input("ckpt_b", o.ckpt_b);
  const fs::path dir = resolve_output(o.out);
  fs::create_directories(dir);
  write_manifest(m, dir / "manifest.json");
  const auto b = data::load_benchmark(o.bench);
  const auto a = load_params(o.ckpt_a), bb = load_params(o.ckpt_b);
  check_vocab(a, b, "checkpoint a");
  check_vocab(bb, b, "checkpoint b");
  if (!(a.config == bb.config)) throw DataError("checkpoints have different architectures");
  const auto s = analysis::lmc_sweep(a, bb, grid, b);
  std::string csv = "alpha,UE,UT\n";
  for (std::size_t i = 0; i < s.alpha.size(); ++i) csv += fmt_g(s.alpha[i]) + "," + fmt4(s.ue[i]) + "," + fmt4(s.ut[i]) + "\n";
  write_text_atomic(dir / "connectivity.csv", csv);
  const json summary = {{"grid", o.grid}, {"alpha", s.alpha}, {"UE", s.ue}, {"UT", s.ut},
                        {"max_ue_deviation", s.max_ue_deviation()}};
  write_text_atomic(dir / "connectivity.json", summary.dump(2) + "\n");
  std::cout << csv;
  std::printf("max |UE(alpha) - endpoint mean| = %.2f\n", s.max_ue_deviation());
  return kOk;
}

// -------------------------------------------------------------------- attack

struct Attack {
  Common c;
  std::string ckpt, bench, out;
};

int run_attack(Attack& o) {
  const json cfg = o.c.resolve();
  const auto ac = attack_config(cfg);
  auto m = start_manifest("attack", o.c, cfg);
  m.add_input("bench", bench_file(o.bench));
  m.add_input("ckpt", o.ckpt);
  const fs::path dir = resolve_output(o.out);
  fs::create_directories(dir);
  write_manifest(m, dir / "manifest.json");
  const auto b = data::load_benchmark(o.bench);
  const auto theta = load_params(o.ckpt);
  check_vocab(theta, b, "checkpoint");
  const int init = analysis::most_frequent_filler(b);
  const auto r = analysis::prefix_attack(theta, std::span<const data::MCQItem>(b.forget_eval), init, ac);
  std::string csv = "step,objective\n";
  for (std::size_t i = 0; i < r.objective.size(); ++i) csv += std::to_string(i) + "," + fmt4(r.objective[i]) + "\n";
  write_text_atomic(dir / "attack.csv", csv);
  std::vector<std::string> words;
  for (int t : r.prefix) words.push_back(b.vocab.at(static_cast<std::size_t>(t)));
  const json summary = {{"init_token", init},           {"ue_before", r.ue_before}, {"ue_init_prefix", r.ue_init_prefix},
                        {"ue_after", r.ue_after},       {"prefix", r.prefix},       {"prefix_words", words},
                        {"iterations_run", r.iterations_run}, {"objective", r.objective}};
  write_text_atomic(dir / "attack.json", summary.dump(2) + "\n");
  std::printf("UE before %.2f  with initial prefix %.2f  after attack %.2f  (%zu iterations)\n", r.ue_before,
              r.ue_init_prefix, r.ue_after, r.iterations_run);
  return kOk;
}

// ------------------------------------------------------------------- relearn

struct Relearn {
  Common c;
  std::string ckpt, bench, out;
};

int run_relearn(Relearn& o) {
  const json cfg = o.c.resolve();
  const auto rs = relearn_settings(cfg);
  auto m = start_manifest("relearn", o.c, cfg);
  m.add_input("bench", bench_file(o.bench));
  m.add_input("ckpt", o.ckpt);
  const fs::path dir = resolve_output(o.out);
  fs::create_directories(dir);
  write_manifest(m, dir / "manifest.json");
  const auto b = data::load_benchmark(o.bench);
  const auto theta = load_params(o.ckpt);
  check_vocab(theta, b, "checkpoint");
  const auto pool = data::record_tokens(b.finetune_records);
  const auto c = analysis::relearn_curve(theta, std::span<const Tokens>(pool), rs.counts, rs.finetune, b, rs.seeds);
  std::string csv = "count,UE_mean,UE_std\n";
  for (std::size_t i = 0; i < c.counts.size(); ++i) {
    std::vector<double> col;
    for (const auto& row : c.ue_per_seed) col.push_back(row[i]);
    const auto ms = mean_std(col);
    csv += std::to_string(c.counts[i]) + "," + fmt4(ms.mean) + "," + fmt4(ms.std) + "\n";
  }
  write_text_atomic(dir / "relearn.csv", csv);
  const json summary = {{"counts", c.counts}, {"seeds", c.seeds}, {"UE", c.ue}, {"UE_per_seed", c.ue_per_seed},
                        {"mean_spearman", c.mean_spearman()}};
  write_text_atomic(dir / "relearn.json", summary.dump(2) + "\n");
  std::cout << csv;
  std::printf("mean Spearman(count, UE) = %.3f\n", c.mean_spearman());
  return kOk;
}

// -------------------------------------------------------------------- report

struct Report {
  Common c;
  std::vector<std::string> inputs;
  std::string format = "csv", out;
};

int run_report(Report& o) {
  const auto fmt = parse_format(o.format);
  std::vector<NamedReport> rs;
  for (const auto& in : o.inputs) {
    json j;
    try {
      j = json::parse(read_text(in));
    } catch (const json::parse_error& e) {
      throw DataError(in + " is not valid JSON: " + e.what());
    }
    if (!j.is_object() || !j.contains("metrics")) throw DataError(in + " is not an eval report");
    rs.push_back({j.value("label", fs::path(in).stem().string()), report_from_json(j.at("metrics"))});
  }
  const fs::path out = resolve_output(o.out);
  RunManifest m;
  m.command = "report";
  m.args = o.c.args;
  for (const auto& in : o.inputs) m.add_input("report", in);
  write_manifest(m, beside(out, ".manifest.json"));
  emit_report(rs, fmt, out);
  std::printf("%zu reports -> %s\n", rs.size(), out.c_str());
  return kOk;
}

int classify(const std::exception& e) {
  if (dynamic_cast<const NumericError*>(&e)) return kNumeric;
  if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const ContractViolation*>(&e)) return kUsage;
  return kData;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ulab: coreset unlearning lab on a synthetic benchmark"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kToolVersion));
  const std::string out_help = std::string("Output path (relative paths go under $") + kOutRootEnv + " when set)";

  GenData gd;
  auto* s_gen = app.add_subcommand("gen-data", "Generate the synthetic benchmark");
  add_common(s_gen, gd.c);
  s_gen->add_option("--out", gd.out, out_help + "; a directory")->required();
  map_flag(s_gen, gd.c, "--seed", "benchmark.seed", "Generator seed");
  map_flag(s_gen, gd.c, "--n-records", "benchmark.n_records", "Forget record count");
  map_flag(s_gen, gd.c, "--record-len", "benchmark.record_len", "Tokens per record");

  Train tr;
  auto* s_train = app.add_subcommand("train", "Pretrain a model (or the retrain baseline)");
  add_common(s_train, tr.c);
  s_train->add_option("--bench", tr.bench, "Benchmark directory or file")->required();
  s_train->add_option("--out", tr.out, out_help)->required();
  s_train->add_flag("--retrain", tr.retrain, "Train on the retain records only");
  map_flag(s_train, tr.c, "--epochs", "pretrain.epochs", "Training epochs");
  map_flag(s_train, tr.c, "--lr", "pretrain.lr", "Adam learning rate");
  map_flag(s_train, tr.c, "--batch-size", "pretrain.batch_size", "Records per step");
  map_flag(s_train, tr.c, "--seed", "pretrain.seed", "Data order seed");
  map_flag(s_train, tr.c, "--model-seed", "model.seed", "Initialization seed");

  Select se;
  auto* s_sel = app.add_subcommand("select", "Choose a coreset of the forget set");
  add_common(s_sel, se.c);
  s_sel->add_option("--method", se.method, "random | grand | moderate | mink")->capture_default_str();
  s_sel->add_option("--ratio", se.ratio, "Fraction p of the forget set")->capture_default_str();
  s_sel->add_option("--bench", se.bench, "Benchmark directory or file")->required();
  s_sel->add_option("--ckpt", se.ckpt, "Pretrained checkpoint")->required();
  s_sel->add_option("--out", se.out, out_help)->required();
  s_sel->add_option("--trial", se.trial, "Offset added to the selection seed")->capture_default_str();
  s_sel->add_option("--unlearn-method", se.unlearn_method, "Objective whose trajectory GraNd scores")->capture_default_str();

  Unlearn ul;
  auto* s_ul = app.add_subcommand("unlearn", "Unlearn a coreset of the forget set");
  add_common(s_ul, ul.c);
  s_ul->add_option("--method", ul.method, "npo | rmu")->capture_default_str();
  s_ul->add_option("--ratio", ul.ratio, "Coreset fraction p")->capture_default_str();
  s_ul->add_option("--select", ul.select, "random | grand | moderate | mink")->capture_default_str();
  s_ul->add_option("--selection", ul.selection, "Use a selection file instead of selecting");
  s_ul->add_option("--trial", ul.trial, "Offset added to the selection and order seeds")->capture_default_str();
  s_ul->add_option("--bench", ul.bench, "Benchmark directory or file")->required();
  s_ul->add_option("--ckpt-in", ul.ckpt_in, "Starting checkpoint")->required();
  s_ul->add_option("--ckpt-out", ul.ckpt_out, out_help)->required();
  map_flag(s_ul, ul.c, "--lr", "unlearn.{method}.lr", "Adam learning rate");
  map_flag(s_ul, ul.c, "--base-epochs", "unlearn.{method}.base_epochs", "Epochs at p = 1");
  map_flag(s_ul, ul.c, "--lambda", "unlearn.{method}.lambda", "Retain weight");
  map_flag(s_ul, ul.c, "--beta", "unlearn.npo.beta", "NPO temperature");
  map_flag(s_ul, ul.c, "--c", "unlearn.rmu.c", "RMU control scale");
  map_flag(s_ul, ul.c, "--layer", "unlearn.rmu.layer", "RMU layer");
  map_flag(s_ul, ul.c, "--batch-size", "unlearn.{method}.batch_size", "Records per step");
  map_flag(s_ul, ul.c, "--control-seed", "unlearn.{method}.control_seed", "RMU control vector seed");
  map_flag(s_ul, ul.c, "--order-seed", "unlearn.{method}.order_seed", "Batch order seed");
  map_flag(s_ul, ul.c, "--max-steps", "unlearn.{method}.max_steps", "Cap on optimizer steps");

  Eval ev;
  auto* s_ev = app.add_subcommand("eval", "Evaluate a checkpoint");
  add_common(s_ev, ev.c);
  s_ev->add_option("--ckpt", ev.ckpt, "Checkpoint")->required();
  s_ev->add_option("--bench", ev.bench, "Benchmark directory or file")->required();
  s_ev->add_option("--retrain-ckpt", ev.retrain, "Retrain baseline, enables PrivLeak");
  s_ev->add_option("--out", ev.out, out_help)->required();
  map_flag(s_ev, ev.c, "--verbmem", "eval.verbmem", "Compute VerbMem (true/false)");
  map_flag(s_ev, ev.c, "--prompt-len", "eval.prompt_len", "VerbMem prompt tokens (0 = half the record)");

  Sweep sw;
  auto* s_sw = app.add_subcommand("sweep", "Coreset-ratio sweep: select, unlearn and evaluate every cell");
  add_common(s_sw, sw.c);
  s_sw->add_option("--bench", sw.bench, "Benchmark directory or file");
  s_sw->add_option("--ckpt", sw.ckpt, "Pretrained checkpoint");
  s_sw->add_option("--retrain-ckpt", sw.retrain, "Retrain baseline, enables PrivLeak");
  s_sw->add_option("--replay", sw.replay, "Re-run from a sweep manifest");
  s_sw->add_option("--out", sw.out, out_help + "; a directory")->required();
  map_flag(s_sw, sw.c, "--ratios", "sweep.ratios", "JSON list, e.g. [0.05,1]");
  map_flag(s_sw, sw.c, "--selectors", "sweep.selectors", "JSON list, e.g. [\"random\",\"mink\"]");
  map_flag(s_sw, sw.c, "--methods", "sweep.methods", "JSON list, e.g. [\"rmu\"]");
  map_flag(s_sw, sw.c, "--trials", "sweep.trials", "Trials per cell");
  map_flag(s_sw, sw.c, "--workers", "sweep.workers", "Worker threads");

  Connectivity cn;
  auto* s_cn = app.add_subcommand("connectivity", "UE/UT along the line between two checkpoints");
  add_common(s_cn, cn.c);
  s_cn->add_option("--ckpt-a", cn.ckpt_a, "Checkpoint at alpha = 1")->required();
  s_cn->add_option("--ckpt-b", cn.ckpt_b, "Checkpoint at alpha = 0")->required();
  s_cn->add_option("--bench", cn.bench, "Benchmark directory or file")->required();
  s_cn->add_option("--grid", cn.grid, "start:stop:step")->capture_default_str();
  s_cn->add_option("--out", cn.out, out_help + "; a directory")->required();

  Attack at;
  auto* s_at = app.add_subcommand("attack", "Prefix attack on the forget-domain questions");
  add_common(s_at, at.c);
  s_at->add_option("--ckpt", at.ckpt, "Checkpoint")->required();
  s_at->add_option("--bench", at.bench, "Benchmark directory or file")->required();
  s_at->add_option("--out", at.out, out_help + "; a directory")->required();
  map_flag(s_at, at.c, "--m", "attack.prefix_len", "Prefix length");
  map_flag(s_at, at.c, "--iters", "attack.iterations", "Search iterations");
  map_flag(s_at, at.c, "--topk", "attack.top_k", "Candidates per position");
  map_flag(s_at, at.c, "--seed", "attack.seed", "Candidate order seed");

  Relearn rl;
  auto* s_rl = app.add_subcommand("relearn", "UE after fine-tuning on unrelated records");
  add_common(s_rl, rl.c);
  s_rl->add_option("--ckpt", rl.ckpt, "Checkpoint")->required();
  s_rl->add_option("--bench", rl.bench, "Benchmark directory or file")->required();
  s_rl->add_option("--out", rl.out, out_help + "; a directory")->required();
  s_rl->add_option_function<std::vector<std::size_t>>(
          "--counts", [&](const std::vector<std::size_t>& v) { rl.c.flags.emplace_back("relearn.counts", json(v).dump()); },
          "Fine-tuning sample counts, comma separated")
      ->delimiter(',');
  s_rl->add_option_function<std::vector<std::uint64_t>>(
          "--seeds", [&](const std::vector<std::uint64_t>& v) { rl.c.flags.emplace_back("relearn.seeds", json(v).dump()); },
          "Fine-tuning seeds, comma separated")
      ->delimiter(',');
  map_flag(s_rl, rl.c, "--epochs", "relearn.epochs", "Fine-tuning epochs");
  map_flag(s_rl, rl.c, "--lr", "relearn.lr", "Fine-tuning learning rate");

  Report rp;
  auto* s_rp = app.add_subcommand("report", "Collect eval reports into one table");
  s_rp->add_option("--inputs", rp.inputs, "Eval report files")->required();
  s_rp->add_option("--format", rp.format, "csv | json")->capture_default_str();
  s_rp->add_option("--out", rp.out, out_help)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    // Echo the raw command line so the manifest records how the run started.
    std::vector<std::string> raw(argv + 1, argv + argc);
    for (auto* c : {&gd.c, &tr.c, &se.c, &ul.c, &ev.c, &sw.c, &cn.c, &at.c, &rl.c, &rp.c}) echo_arg(*c, "argv", raw);
    if (s_gen->parsed()) return run_gen_data(gd);
    if (s_train->parsed()) return run_train(tr);
    if (s_sel->parsed()) return run_select(se);
    if (s_ul->parsed()) return run_unlearn(ul);
    if (s_ev->parsed()) return run_eval(ev);
    if (s_sw->parsed()) return run_sweep_cmd(sw);
    if (s_cn->parsed()) return run_connectivity(cn);
    if (s_at->parsed()) return run_attack(at);
    if (s_rl->parsed()) return run_relearn(rl);
    if (s_rp->parsed()) return run_report(rp);
  } catch (const json::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kData;
  } catch (const std::filesystem::filesystem_error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kData;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return classify(e);
  }
  return kUsage;
}
