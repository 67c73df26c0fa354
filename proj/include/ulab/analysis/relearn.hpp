#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <vector>

#include "ulab/databench/benchmark.hpp"
#include "ulab/error.hpp"
#include "ulab/evalsuite/metrics.hpp"
#include "ulab/unlearn/training.hpp"

namespace ulab::analysis {

using model::LMParams;

/// Average ranks (1-based), ties share the mean of their positions.
inline std::vector<double> average_ranks(std::span<const double> x) {
  std::vector<std::size_t> idx(x.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> rank(x.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j < idx.size() && x[idx[j]] == x[idx[i]]) ++j;
    for (std::size_t t = i; t < j; ++t) rank[idx[t]] = 0.5 * static_cast<double>(i + 1 + j);
    i = j;
  }
  return rank;
}

/// Spearman rank correlation; 0 when either side has no spread.
inline double spearman(std::span<const double> x, std::span<const double> y) {
  require(x.size() == y.size() && x.size() >= 2, "spearman needs two equal-length series of length >= 2");
  const auto rx = average_ranks(x), ry = average_ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0 || syy == 0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

struct FinetuneConfig {
  long epochs = 3;
  double lr = 1e-3;
  std::size_t batch_size = 8;
};

struct RelearnCurve {
  std::vector<std::size_t> counts;
  std::vector<std::uint64_t> seeds;
  std::vector<std::vector<double>> ue_per_seed;  // seeds x counts
  std::vector<double> ue;                        // mean over seeds

  /// Spearman(count, UE) per seed, averaged.
  double mean_spearman() const {
    std::vector<double> c(counts.begin(), counts.end());
    double s = 0;
    for (const auto& row : ue_per_seed) s += spearman(c, row);
    return s / static_cast<double>(ue_per_seed.size());
  }
};

/// UE after fine-tuning fresh copies of θ_u on the first n records of a
/// seeded permutation of the fine-tuning pool, for every n in `counts`.
template <std::floating_point T>
RelearnCurve relearn_curve(const LMParams<T>& theta_u, std::span<const model::Tokens> pool,
                           const std::vector<std::size_t>& counts, const FinetuneConfig& ft,
                           const data::SyntheticBenchmark& bench, const std::vector<std::uint64_t>& seeds) {
  require(!counts.empty() && !seeds.empty(), "relearn curve needs counts and seeds");
  for (std::size_t i = 1; i < counts.size(); ++i) require(counts[i - 1] < counts[i], "counts must be ascending");
  require(counts.back() <= pool.size(), "count exceeds the fine-tuning pool");
  RelearnCurve c{counts, seeds, {}, std::vector<double>(counts.size(), 0.0)};
  for (auto seed : seeds) {
    std::vector<double> row;
    for (auto n : counts) {
      const auto p = unlearn::finetune(theta_u, pool, n, ft.epochs, ft.lr, seed, ft.batch_size);
      row.push_back(eval::unlearning_effectiveness(p, std::span<const data::MCQItem>(bench.forget_eval)));
    }
    for (std::size_t i = 0; i < row.size(); ++i) c.ue[i] += row[i] / static_cast<double>(seeds.size());
    c.ue_per_seed.push_back(std::move(row));
  }
  return c;
}

}  // namespace ulab::analysis
