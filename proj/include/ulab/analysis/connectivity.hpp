#pragma once

#include <algorithm>
#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "ulab/databench/benchmark.hpp"
#include "ulab/error.hpp"
#include "ulab/evalsuite/metrics.hpp"
#include "ulab/model/transformer.hpp"

namespace ulab::analysis {

using model::LMParams;

/// α·a + (1−α)·b per tensor. The endpoints return exact copies so that
/// signed zeros survive.
template <std::floating_point T>
LMParams<T> interpolate(const LMParams<T>& a, const LMParams<T>& b, double alpha) {
  require(a.config == b.config, "interpolation needs identical architectures");
  require(alpha >= 0 && alpha <= 1, "alpha must lie in [0, 1]");
  if (alpha == 0) return b;
  if (alpha == 1) return a;
  LMParams<T> out = b;
  const T wa = static_cast<T>(alpha), wb = static_cast<T>(1.0 - alpha);
  for (auto& [name, t] : out.tensors) {
    const auto it = a.tensors.find(name);
    require(it != a.tensors.end() && it->second.shape == t.shape, "parameter mismatch for tensor " + name);
    for (std::size_t i = 0; i < t.data.size(); ++i) t.data[i] = wa * it->second.data[i] + wb * t.data[i];
  }
  return out;
}

/// Parses "start:stop:step" into an ascending grid that ends exactly at stop.
inline std::vector<double> parse_grid(const std::string& spec) {
  double lo = 0, hi = 0, step = 0;
  char c1 = 0, c2 = 0;
  std::istringstream in(spec);
  if (!(in >> lo >> c1 >> hi >> c2 >> step) || c1 != ':' || c2 != ':' || !in.eof())
    throw ConfigError("grid must look like start:stop:step, got '" + spec + "'");
  if (!(step > 0) || hi < lo) throw ConfigError("grid needs step > 0 and stop >= start");
  const auto n = static_cast<std::size_t>(std::llround((hi - lo) / step));
  std::vector<double> g;
  for (std::size_t i = 0; i <= n; ++i) g.push_back(i == n ? hi : lo + static_cast<double>(i) * step);
  return g;
}

struct InterpolationSweep {
  std::vector<double> alpha;
  std::vector<double> ue;
  std::vector<double> ut;

  /// max |UE(α) − mean(UE(0), UE(1))|.
  double max_ue_deviation() const {
    require(!ue.empty(), "empty sweep");
    const double mid = 0.5 * (ue.front() + ue.back());
    double m = 0;
    for (double x : ue) m = std::max(m, std::abs(x - mid));
    return m;
  }
};

/// UE and UT along θ(α) = α·θ_cu + (1−α)·θ_fu.
template <std::floating_point T>
InterpolationSweep lmc_sweep(const LMParams<T>& coreset_unlearned, const LMParams<T>& full_unlearned,
                             const std::vector<double>& grid, const data::SyntheticBenchmark& bench) {
  require(!grid.empty() && grid.front() == 0.0 && grid.back() == 1.0, "grid must include both endpoints");
  require(std::is_sorted(grid.begin(), grid.end()), "grid must be ascending");
  InterpolationSweep s;
  for (double a : grid) {
    const auto p = interpolate(coreset_unlearned, full_unlearned, a);
    s.alpha.push_back(a);
    s.ue.push_back(eval::unlearning_effectiveness(p, std::span<const data::MCQItem>(bench.forget_eval)));
    s.ut.push_back(eval::utility(p, std::span<const data::MCQItem>(bench.utility_eval)));
  }
  return s;
}

}  // namespace ulab::analysis
