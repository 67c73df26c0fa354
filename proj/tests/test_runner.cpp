#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "ulab/model/checkpoint.hpp"
#include "ulab/runner/config.hpp"
#include "ulab/runner/manifest.hpp"
#include "ulab/runner/pipeline.hpp"
#include "ulab/runner/report.hpp"
#include "ulab/runner/sweep.hpp"

using namespace ulab;
using namespace ulab::runner;
using model::Tokens;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("ulab_runner_" + std::to_string(::getpid()) + "_" +
                                        std::to_string(reinterpret_cast<std::uintptr_t>(this)));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

// Small enough that a 60-cell sweep finishes in seconds.
json tiny_config() {
  json cfg = default_config_json();
  for (const char* s :
       {"benchmark.n_forget_facts=8", "benchmark.n_retain_facts=8", "benchmark.record_len=16", "benchmark.n_records=0",
        "benchmark.n_finetune_records=4", "model.d_model=8", "model.n_layers=2", "model.n_heads=2",
        "model.max_seq_len=16", "unlearn.npo.max_steps=2", "unlearn.rmu.max_steps=2", "eval.verbmem=false",
        "select.grand_snapshots=1"})
    apply_override(cfg, s);
  return cfg;
}

struct Fixture {
  json cfg = tiny_config();
  data::SyntheticBenchmark bench = data::generate_benchmark(gen_config(cfg));
  model::LMParams<float> theta0 =
      model::init_params<float>(model_config(cfg, static_cast<std::uint32_t>(bench.vocab_size())));
};

eval::EvalReport sample_report(double base) { return {base, base + 1, base + 2, base + 3, std::nullopt}; }

}  // namespace

TEST(Config, DefaultsAreStrict) {
  EXPECT_THROW(resolve_config(std::nullopt, {"pretrain.epoch=3"}), ConfigError);
  EXPECT_THROW(resolve_config(std::nullopt, {"pretrain=3"}), ConfigError);
  EXPECT_THROW(resolve_config(std::nullopt, {"no_equals_sign"}), ConfigError);
  const auto cfg = resolve_config(std::nullopt, {"pretrain.epochs=4", "sweep.selectors=[\"mink\",\"grand\"]"});
  EXPECT_EQ(cfg["pretrain"]["epochs"], 4);
  EXPECT_EQ(sweep_spec(cfg).selectors, (std::vector<Selector>{Selector::mink, Selector::grand}));
  EXPECT_EQ(default_config_json()["pretrain"]["epochs"], 30);
}

TEST(Config, FileMergeRejectsUnknownKeys) {
  TempDir d;
  const auto good = d.path / "good.json", bad = d.path / "bad.json", broken = d.path / "broken.json";
  std::ofstream(good) << R"({"unlearn": {"rmu": {"c": 7}}})";
  std::ofstream(bad) << R"({"unlearn": {"rmu": {"steer": 7}}})";
  std::ofstream(broken) << "{";
  const auto cfg = resolve_config(good, {"unlearn.rmu.lr=0.5"});
  const auto u = unlearn_config(cfg, unlearn::Method::rmu, 0.1);
  EXPECT_DOUBLE_EQ(u.c, 7);
  EXPECT_DOUBLE_EQ(u.lr, 0.5);
  EXPECT_DOUBLE_EQ(u.ratio, 0.1);
  EXPECT_THROW(resolve_config(bad, {}), ConfigError);
  EXPECT_THROW(resolve_config(broken, {}), DataError);
  EXPECT_THROW(resolve_config(d.path / "missing.json", {}), DataError);
}

TEST(Config, WrongTypeIsConfigError) {
  auto cfg = default_config_json();
  apply_override(cfg, "sweep.trials=many");
  EXPECT_THROW(sweep_spec(cfg), ConfigError);
  cfg = default_config_json();
  apply_override(cfg, "sweep.ratios=[0.5, 2]");
  EXPECT_THROW(sweep_spec(cfg), ConfigError);
}

TEST(Manifest, GitBlobHash) {
  EXPECT_EQ(blob_sha1(""), "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391");
  // `printf 'hello\n' | git hash-object --stdin`
  EXPECT_EQ(blob_sha1("hello\n"), "ce013625030ba8dba906f756967f9e9ca394464a");
}

TEST(Manifest, CheckpointHashIsStableAcrossSaves) {
  TempDir d;
  const Fixture f;
  model::save_checkpoint(f.theta0, d.path / "a.ulck");
  model::save_checkpoint(f.theta0, d.path / "b.ulck");
  EXPECT_EQ(file_sha1(d.path / "a.ulck"), file_sha1(d.path / "b.ulck"));
  EXPECT_EQ(model::load_checkpoint<float>(d.path / "a.ulck"), f.theta0);
}

TEST(Manifest, RoundTripAndInputVerification) {
  TempDir d;
  const auto in = d.path / "input.txt";
  std::ofstream(in) << "abc";
  RunManifest m;
  m.command = "sweep";
  m.args = {{"trials", 2}};
  m.config = default_config_json();
  m.add_input("bench", in);
  write_manifest(m, d.path / "manifest.json");
  const auto back = load_manifest(d.path / "manifest.json");
  EXPECT_EQ(back.to_json(), m.to_json());
  EXPECT_NO_THROW(back.verify_inputs());
  ASSERT_NE(back.input("bench"), nullptr);
  EXPECT_EQ(back.input("ckpt"), nullptr);
  std::ofstream(in) << "abd";
  EXPECT_THROW(back.verify_inputs(), DataError);
  std::ofstream(d.path / "bad.json") << "[1,";
  EXPECT_THROW(load_manifest(d.path / "bad.json"), DataError);
  std::ofstream(d.path / "partial.json") << R"({"command": "x"})";
  EXPECT_THROW(load_manifest(d.path / "partial.json"), DataError);
}

TEST(Manifest, OutputRootPrefixesRelativePaths) {
  const char* old = std::getenv(kOutRootEnv);
  const std::string saved = old ? old : "";
  ::setenv(kOutRootEnv, "/tmp/ulab_root", 1);
  EXPECT_EQ(resolve_output("runs/a.csv"), fs::path("/tmp/ulab_root/runs/a.csv"));
  EXPECT_EQ(resolve_output("/abs/a.csv"), fs::path("/abs/a.csv"));
  ::unsetenv(kOutRootEnv);
  EXPECT_EQ(resolve_output("runs/a.csv"), fs::path("runs/a.csv"));
  if (old) ::setenv(kOutRootEnv, saved.c_str(), 1);
}

TEST(Report, EmptyListGivesHeaderOnly) {
  TempDir d;
  emit_report({}, ReportFormat::csv, d.path / "r.csv");
  EXPECT_EQ(read_text(d.path / "r.csv"), std::string(kReportHeader) + "\n");
  emit_report({}, ReportFormat::json, d.path / "r.json");
  EXPECT_EQ(json::parse(read_text(d.path / "r.json")), json::array());
}

TEST(Report, CsvAndJsonAgree) {
  TempDir d;
  auto r2 = sample_report(10);
  r2.privleak = -12.5;
  const std::vector<NamedReport> rs{{"one", sample_report(1)}, {"two,b", r2}};
  emit_report(rs, ReportFormat::csv, d.path / "r.csv");
  emit_report(rs, ReportFormat::json, d.path / "r.json");
  std::istringstream csv(read_text(d.path / "r.csv"));
  std::string line;
  std::getline(csv, line);
  EXPECT_EQ(line, kReportHeader);
  const auto j = json::parse(read_text(d.path / "r.json"));
  ASSERT_EQ(j.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    ASSERT_TRUE(std::getline(csv, line));
    std::vector<std::string> cells;
    std::stringstream ls(line);
    for (std::string c; std::getline(ls, c, ',');) cells.push_back(c);
    ASSERT_EQ(cells.size(), 6u) << line;
    const auto& row = j[i];
    EXPECT_EQ(cells[0], csv_safe(row["label"].get<std::string>()));
    const char* keys[] = {"UE", "UT", "VerbMem", "KnowMem"};
    for (int k = 0; k < 4; ++k) EXPECT_DOUBLE_EQ(std::stod(cells[1 + k]), row[keys[k]].get<double>());
    if (row["PrivLeak"].is_null())
      EXPECT_EQ(cells[5], "NA");
    else
      EXPECT_DOUBLE_EQ(std::stod(cells[5]), row["PrivLeak"].get<double>());
    EXPECT_EQ(report_from_json(row).ue, rs[i].report.ue);
  }
  EXPECT_FALSE(std::getline(csv, line));
  EXPECT_THROW(parse_format("xml"), ConfigError);
}

TEST(Pipeline, RetrainCorpusExcludesForgetRecords) {
  const Fixture f;
  EXPECT_EQ(pretrain_corpus(f.bench, true).size(), f.bench.retain_records.size());
  EXPECT_EQ(pretrain_corpus(f.bench, false).size(), f.bench.retain_records.size() + f.bench.forget_records.size());
}

TEST(Pipeline, SelectionJsonRoundTripAndTrialSeeds) {
  const Fixture f;
  const auto forget = data::record_tokens(f.bench.forget_records);
  const auto retain = data::record_tokens(f.bench.retain_records);
  const auto ss = select_settings(f.cfg);
  const auto u = unlearn_config(f.cfg, unlearn::Method::rmu);
  const std::span<const Tokens> fs(forget), rs(retain);
  const auto s0 = select_coreset(Selector::random, f.theta0, fs, rs, 0.25, ss, u, 0);
  const auto s1 = select_coreset(Selector::random, f.theta0, fs, rs, 0.25, ss, u, 1);
  EXPECT_EQ(s0.indices, coreset::random_select(forget.size(), 0.25, ss.random_seed).indices);
  EXPECT_EQ(s1.indices, coreset::random_select(forget.size(), 0.25, ss.random_seed + 1).indices);
  const auto back = selection_from_json(selection_to_json(s0));
  EXPECT_EQ(back.indices, s0.indices);
  EXPECT_EQ(back.method, "random");
  for (auto sel : {Selector::mink, Selector::grand, Selector::moderate}) {
    const auto s = select_coreset(sel, f.theta0, fs, rs, 0.25, ss, u, 0);
    EXPECT_EQ(s.indices.size(), coreset::coreset_size(forget.size(), 0.25)) << selector_name(sel);
    EXPECT_EQ(parse_selector(selector_name(sel)), sel);
  }
  EXPECT_THROW(selection_from_json(json::object()), DataError);
  EXPECT_THROW(gather(fs, {forget.size()}), ContractViolation);
}

TEST(Sweep, SingleCell) {
  const Fixture f;
  SweepSpec spec;
  spec.ratios = {0.5};
  spec.methods = {unlearn::Method::rmu};
  spec.trials = 1;
  const auto rows = run_sweep(spec, f.cfg, f.bench, f.theta0);
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_TRUE(rows[0].error.empty()) << rows[0].error;
  const auto csv = sweep_csv(rows);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 2);
}

TEST(Sweep, FullGridRowCountOrderAndThreadIndependence) {
  const Fixture f;
  SweepSpec spec;
  spec.ratios = {0.25, 0.5, 1.0};
  spec.selectors = {Selector::random, Selector::mink};
  spec.methods = {unlearn::Method::npo, unlearn::Method::rmu};
  spec.trials = 5;
  const auto rows = run_sweep(spec, f.cfg, f.bench, f.theta0, &f.theta0);
  ASSERT_EQ(rows.size(), 60u);
  EXPECT_EQ(spec.cells(), 60u);
  std::size_t i = 0;
  for (auto m : spec.methods)
    for (auto s : spec.selectors)
      for (double p : spec.ratios)
        for (std::size_t t = 0; t < 5; ++t, ++i) {
          EXPECT_EQ(rows[i].method, m);
          EXPECT_EQ(rows[i].selector, s);
          EXPECT_EQ(rows[i].ratio, p);
          EXPECT_EQ(rows[i].trial, t);
          EXPECT_TRUE(rows[i].error.empty()) << rows[i].error;
          EXPECT_TRUE(rows[i].report.privleak.has_value());
        }
  spec.workers = 3;
  EXPECT_EQ(sweep_csv(run_sweep(spec, f.cfg, f.bench, f.theta0, &f.theta0)), sweep_csv(rows));
  const auto summary = sweep_summary_csv(rows);
  EXPECT_EQ(std::count(summary.begin(), summary.end(), '\n'), 1 + 12);
}

TEST(Sweep, FailedCellsAreMarkedNotFatal) {
  Fixture f;
  apply_override(f.cfg, "unlearn.npo.lr=1e30");
  apply_override(f.cfg, "unlearn.npo.max_steps=null");
  SweepSpec spec;
  spec.ratios = {1.0};
  spec.methods = {unlearn::Method::npo};
  spec.trials = 1;
  const auto rows = run_sweep(spec, f.cfg, f.bench, f.theta0);
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_EQ(rows[0].error.rfind("numeric:", 0), 0u) << rows[0].error;
  EXPECT_NE(sweep_csv(rows).find("NA,NA,NA,NA,NA,numeric"), std::string::npos);
  EXPECT_NE(sweep_summary_csv(rows).find(",0,1,NA,NA"), std::string::npos);
}

TEST(Sweep, MeanAndSampleStd) {
  const auto m = mean_std({1, 2, 3, 4});
  EXPECT_DOUBLE_EQ(m.mean, 2.5);
  EXPECT_NEAR(m.std, std::sqrt(5.0 / 3.0), 1e-12);
  EXPECT_DOUBLE_EQ(mean_std({7}).std, 0.0);
  const auto sched = epoch_schedule(sweep_spec(default_config_json()), default_config_json());
  EXPECT_EQ(sched["rmu"]["epochs"]["0.01"], 1000);
  EXPECT_EQ(sched["npo"]["epochs"]["1"], 5);
}
