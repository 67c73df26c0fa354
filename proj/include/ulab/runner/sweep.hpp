#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <map>
#include <span>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include "ulab/error.hpp"
#include "ulab/evalsuite/metrics.hpp"
#include "ulab/runner/config.hpp"
#include "ulab/runner/pipeline.hpp"
#include "ulab/runner/report.hpp"
#include "ulab/unlearn/training.hpp"

namespace ulab::runner {

struct SweepSpec {
  std::vector<double> ratios{0.01, 0.05, 0.1, 1.0};
  std::vector<Selector> selectors{Selector::random};
  std::vector<unlearn::Method> methods{unlearn::Method::npo, unlearn::Method::rmu};
  std::size_t trials = 5;
  std::size_t workers = 1;

  void validate() const {
    if (ratios.empty() || selectors.empty() || methods.empty()) throw ConfigError("sweep needs ratios, selectors and methods");
    for (double p : ratios)
      if (!(p > 0 && p <= 1)) throw ConfigError("sweep ratios must lie in (0, 1]");
    if (trials < 1) throw ConfigError("sweep trials must be >= 1");
    if (workers < 1) throw ConfigError("sweep workers must be >= 1");
  }

  std::size_t cells() const { return methods.size() * selectors.size() * ratios.size() * trials; }
};

inline SweepSpec sweep_spec(const json& cfg) {
  const auto& s = cfg.at("sweep");
  SweepSpec spec;
  spec.ratios = get_as<std::vector<double>>(s, "ratios", "sweep");
  spec.selectors.clear();
  for (const auto& n : get_as<std::vector<std::string>>(s, "selectors", "sweep")) spec.selectors.push_back(parse_selector(n));
  spec.methods.clear();
  for (const auto& n : get_as<std::vector<std::string>>(s, "methods", "sweep")) spec.methods.push_back(unlearn::parse_method(n));
  spec.trials = get_as<std::size_t>(s, "trials", "sweep");
  spec.workers = get_as<std::size_t>(s, "workers", "sweep");
  spec.validate();
  return spec;
}

struct SweepRow {
  unlearn::Method method{};
  Selector selector{};
  double ratio = 1;
  std::size_t trial = 0;
  long epochs = 0;
  eval::EvalReport report;
  std::string error;  // empty on success
};

namespace detail {

inline std::string error_tag(const std::exception& e) {
  if (dynamic_cast<const NumericError*>(&e)) return std::string("numeric: ") + e.what();
  if (dynamic_cast<const ConfigError*>(&e)) return std::string("config: ") + e.what();
  if (dynamic_cast<const DataError*>(&e)) return std::string("data: ") + e.what();
  return std::string("error: ") + e.what();
}

}  // namespace detail

/// Cell order is method, selector, ratio, trial (outermost first). Trial t
/// uses selection seed random_seed + t (moderate_seed + t) and unlearning
/// order seed order_seed + t; the control vector seed is shared.
template <std::floating_point T>
std::vector<SweepRow> run_sweep(const SweepSpec& spec, const json& cfg, const data::SyntheticBenchmark& bench,
                                const LMParams<T>& theta0, const std::type_identity_t<LMParams<T>>* retrain = nullptr) {
  spec.validate();
  const auto forget = data::record_tokens(bench.forget_records);
  const auto retain = data::record_tokens(bench.retain_records);
  const std::span<const Tokens> fs(forget), rs(retain);
  const SelectSettings ss = select_settings(cfg);
  const eval::EvalOptions eo = eval_options(cfg);

  std::vector<SweepRow> rows;
  for (auto m : spec.methods)
    for (auto s : spec.selectors)
      for (double p : spec.ratios)
        for (std::size_t t = 0; t < spec.trials; ++t) rows.push_back({m, s, p, t, 0, {}, {}});

  // Score-based selectors do not depend on the trial; fill their caches up
  // front so workers only read them.
  std::map<unlearn::Method, ScoreCache> caches;
  for (auto m : spec.methods) {
    auto& c = caches[m];
    for (auto s : spec.selectors) {
      if (s != Selector::grand && s != Selector::mink) continue;
      try {
        select_coreset(s, theta0, fs, rs, 1.0, ss, unlearn_config(cfg, m), 0, &c);
      } catch (const NumericError&) {
        // Reported per cell below.
      }
    }
  }

  auto run_cell = [&](SweepRow& row) {
    try {
      auto ucfg = unlearn_config(cfg, row.method, row.ratio);
      ScoreCache cache = caches.at(row.method);
      const auto sel = select_coreset(row.selector, theta0, fs, rs, row.ratio, ss, ucfg, row.trial, &cache);
      ucfg.order_seed += row.trial;
      const auto core = gather(fs, sel.indices);
      auto res = unlearn::unlearn(theta0, std::span<const Tokens>(core), rs, ucfg);
      row.epochs = res.epochs;
      row.report = eval::evaluate(res.params, bench, retrain, eo);
    } catch (const std::exception& e) {
      row.error = detail::error_tag(e);
    }
  };

  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < rows.size(); i = next++) run_cell(rows[i]);
  };
  const std::size_t n_threads = std::min(spec.workers, rows.size());
  if (n_threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < n_threads; ++w) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  return rows;
}

inline const char* kSweepHeader = "method,selector,ratio,trial,UE,UT,VerbMem,KnowMem,PrivLeak,error";

inline std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::string out = std::string(kSweepHeader) + "\n";
  for (const auto& r : rows) {
    out += std::string(unlearn::method_name(r.method)) + "," + selector_name(r.selector) + "," + fmt_g(r.ratio) + "," +
           std::to_string(r.trial) + ",";
    if (r.error.empty()) {
      out += fmt4(r.report.ue) + "," + fmt4(r.report.ut) + "," + fmt4(r.report.verbmem) + "," + fmt4(r.report.knowmem) +
             "," + fmt_opt(r.report.privleak) + ",\n";
    } else {
      out += "NA,NA,NA,NA,NA," + csv_safe(r.error) + "\n";
    }
  }
  return out;
}

struct MeanStd {
  double mean = 0;
  double std = 0;  // sample std, 0 for a single value
  std::size_t n = 0;
};

inline MeanStd mean_std(const std::vector<double>& x) {
  MeanStd m;
  m.n = x.size();
  if (x.empty()) return m;
  for (double v : x) m.mean += v;
  m.mean /= static_cast<double>(x.size());
  if (x.size() > 1) {
    double ss = 0;
    for (double v : x) ss += (v - m.mean) * (v - m.mean);
    m.std = std::sqrt(ss / static_cast<double>(x.size() - 1));
  }
  return m;
}

inline const char* kSummaryHeader =
    "method,selector,ratio,n_ok,n_failed,UE_mean,UE_std,UT_mean,UT_std,VerbMem_mean,VerbMem_std,KnowMem_mean,KnowMem_std,"
    "PrivLeak_mean,PrivLeak_std";

/// Mean ± sample std per (method, selector, ratio) over successful trials,
/// in first-appearance order.
inline std::string sweep_summary_csv(const std::vector<SweepRow>& rows) {
  using Key = std::tuple<unlearn::Method, Selector, double>;
  std::vector<Key> order;
  std::map<Key, std::vector<const SweepRow*>> groups;
  for (const auto& r : rows) {
    Key k{r.method, r.selector, r.ratio};
    if (!groups.count(k)) order.push_back(k);
    groups[k].push_back(&r);
  }
  std::string out = std::string(kSummaryHeader) + "\n";
  for (const auto& k : order) {
    std::vector<double> ue, ut, vm, km, pl;
    std::size_t failed = 0;
    for (const auto* r : groups[k]) {
      if (!r->error.empty()) {
        ++failed;
        continue;
      }
      ue.push_back(r->report.ue);
      ut.push_back(r->report.ut);
      vm.push_back(r->report.verbmem);
      km.push_back(r->report.knowmem);
      if (r->report.privleak) pl.push_back(*r->report.privleak);
    }
    out += std::string(unlearn::method_name(std::get<0>(k))) + "," + selector_name(std::get<1>(k)) + "," +
           fmt_g(std::get<2>(k)) + "," + std::to_string(ue.size()) + "," + std::to_string(failed);
    for (const auto* v : {&ue, &ut, &vm, &km, &pl}) {
      const auto ms = mean_std(*v);
      out += ms.n ? "," + fmt4(ms.mean) + "," + fmt4(ms.std) : std::string(",NA,NA");
    }
    out += "\n";
  }
  return out;
}

/// Epochs each (method, ratio) cell runs; 1.0 keeps base_epochs as is.
inline json epoch_schedule(const SweepSpec& spec, const json& cfg) {
  json j = json::object();
  for (auto m : spec.methods) {
    const auto u = unlearn_config(cfg, m);
    json per = json::object();
    for (double p : spec.ratios) per[fmt_g(p)] = unlearn::epochs_for_ratio(u.base_epochs, p);
    j[unlearn::method_name(m)] = {{"base_epochs", u.base_epochs}, {"epochs", per}};
  }
  return j;
}

}  // namespace ulab::runner
