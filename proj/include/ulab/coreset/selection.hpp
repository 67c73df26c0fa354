#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ulab/error.hpp"
#include "ulab/model/transformer.hpp"
#include "ulab/rng.hpp"
#include "ulab/unlearn/training.hpp"

namespace ulab::coreset {

using model::LMParams;
using model::Tokens;

struct Selection {
  std::string method;
  double ratio = 1.0;
  std::vector<std::size_t> indices;  // sorted, unique
  std::vector<double> scores;        // empty for random selection
  std::uint64_t seed = 0;
};

/// max(1, floor(pN)); the epsilon keeps p = 0.05, N = 60 from flooring to 2.
inline std::size_t coreset_size(std::size_t n, double p) {
  require(n >= 1, "selection needs N >= 1");
  require(p > 0 && p <= 1, "ratio must lie in (0, 1]");
  const auto k = static_cast<std::size_t>(std::floor(p * static_cast<double>(n) + 1e-9));
  return std::clamp<std::size_t>(k, 1, n);
}

inline Selection random_select(std::size_t n, double p, std::uint64_t seed) {
  const std::size_t k = coreset_size(n, p);
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng(mix_seed(seed, 0x5E1));
  // Partial Fisher-Yates: the first k slots form a uniform sample.
  for (std::size_t i = 0; i < k; ++i) std::swap(idx[i], idx[i + uniform_index(rng, n - i)]);
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  return Selection{"random", p, std::move(idx), {}, seed};
}

/// Indices of the max(1, floor(pN)) highest scores, ties to the lower index.
inline Selection top_p_select(std::span<const double> scores, double p, std::string method = "top") {
  const std::size_t k = coreset_size(scores.size(), p);
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(),
                    [&](std::size_t a, std::size_t b) { return scores[a] > scores[b] || (scores[a] == scores[b] && a < b); });
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  return Selection{std::move(method), p, std::move(idx), std::vector<double>(scores.begin(), scores.end()), 0};
}

// ------------------------------------------------------------ Min-K% Prob

/// Mean of the max(1, floor(K/100 · n)) lowest token log-probs.
template <class T>
double min_k_score(std::span<const T> logprobs, double k_percent) {
  require(k_percent > 0 && k_percent <= 100, "K percent must lie in (0, 100]");
  require(!logprobs.empty(), "Min-K% needs at least one scored token");
  std::vector<double> v(logprobs.begin(), logprobs.end());
  const auto m = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::floor(k_percent / 100.0 * static_cast<double>(v.size()) + 1e-9)));
  std::partial_sort(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(m), v.end());
  double s = 0;
  for (std::size_t i = 0; i < m; ++i) s += v[i];
  return s / static_cast<double>(m);
}

template <std::floating_point T>
std::vector<double> mink_prob_scores(const LMParams<T>& theta, std::span<const Tokens> records, double k_percent = 40) {
  std::vector<double> out;
  for (const auto& lp : model::batch_sequence_logprobs(theta, records))
    out.push_back(min_k_score(std::span<const T>(lp), k_percent));
  return out;
}

// ------------------------------------------------------------------ GraNd

struct ScoreTrace {
  std::vector<std::vector<double>> snapshots;  // epochs x N
  std::vector<double> mean() const {
    require(!snapshots.empty(), "score trace has no snapshots");
    std::vector<double> m(snapshots.front().size(), 0.0);
    for (const auto& row : snapshots)
      for (std::size_t i = 0; i < m.size(); ++i) m[i] += row[i];
    for (auto& x : m) x /= static_cast<double>(snapshots.size());
    return m;
  }
};

struct GrandResult {
  ScoreTrace trace;
  std::vector<double> scores;  // χ per record
};

/// Thrown when the trajectory diverges; carries the snapshots taken so far.
class GrandDiverged : public NumericError {
 public:
  GrandDiverged(const std::string& what, ScoreTrace partial) : NumericError(what), partial_(std::move(partial)) {}
  const ScoreTrace& partial() const { return partial_; }

 private:
  ScoreTrace partial_;
};

/// Expected per-record gradient norm along a trajectory. `run` drives the
/// trajectory and calls `snapshot()` once per checkpoint; `grad_norm(i)` is
/// evaluated at the current point for every record.
inline GrandResult expected_grad_norms(std::size_t n_records,
                                       const std::function<void(const std::function<void()>&)>& run,
                                       const std::function<double(std::size_t)>& grad_norm) {
  GrandResult r;
  auto snapshot = [&] {
    std::vector<double> row(n_records);
    for (std::size_t i = 0; i < n_records; ++i) {
      row[i] = grad_norm(i);
      if (!std::isfinite(row[i]))
        throw GrandDiverged("non-finite gradient norm for record " + std::to_string(i), r.trace);
    }
    r.trace.snapshots.push_back(std::move(row));
  };
  try {
    run(snapshot);
  } catch (const GrandDiverged&) {
    throw;
  } catch (const NumericError& e) {
    throw GrandDiverged(std::string("GraNd trajectory diverged: ") + e.what(), r.trace);
  }
  r.scores = r.trace.mean();
  return r;
}

/// ‖∇θ [ℓ_f(z) + λ ℓ_r(z_r)]‖₂ for one forget record and its paired retain record.
template <std::floating_point T>
double record_grad_norm(const LMParams<T>& theta, const LMParams<T>& ref, const Tokens& forget, const Tokens* retain,
                        const unlearn::UnlearnConfig& cfg, const unlearn::ControlVector& u) {
  using num::Graph;
  std::span<const Tokens> fs(&forget, 1);
  std::span<const Tokens> rs = retain ? std::span<const Tokens>(retain, 1) : std::span<const Tokens>();
  Graph<T> g;
  const auto b = model::bind(g, theta, true);
  num::Var total;
  if (cfg.method == unlearn::Method::npo) {
    auto fv = model::forward(g, theta, b, fs);
    num::Var f = unlearn::npo_forget_term(g, *fv.logits, fs, unlearn::sequence_logliks(ref, fs), cfg.beta);
    total = f;
    if (retain) {
      auto rv = model::forward(g, theta, b, rs);
      total = g.add(f, g.scale(unlearn::cross_entropy_term(g, *rv.logits, rs), static_cast<T>(cfg.lambda)));
    }
  } else {
    const std::size_t layer = cfg.rmu_layer(theta.config);
    auto ref_h = retain ? unlearn::layer_activations(ref, rs, layer) : std::vector<num::Tensor<T>>{};
    total = unlearn::rmu_terms(g, theta, b, fs, rs, ref_h, u, cfg.c, layer, cfg.lambda).total;
  }
  const double lv = g.value(total).item();
  if (!std::isfinite(lv)) throw NumericError("non-finite loss while scoring GraNd");
  return num::grad_l2_norm(g.backward(total));
}

/// GraNd scores: a full-forget-set unlearning run of `snapshots` epochs,
/// scoring every record at the end of each epoch. Forget record i is paired
/// with retain record i mod |D_r|.
template <std::floating_point T>
GrandResult grand_scores(const LMParams<T>& theta0, std::span<const Tokens> forget, std::span<const Tokens> retain,
                         unlearn::UnlearnConfig cfg, long snapshots = 10) {
  require(snapshots >= 1, "GraNd needs at least one snapshot");
  require(!forget.empty(), "GraNd needs a nonempty forget set");
  cfg.ratio = 1.0;
  cfg.epochs_override = snapshots;
  cfg.max_steps.reset();
  const auto u = unlearn::sample_control_vector(theta0.config.d_model, cfg.control_seed);
  const bool paired = !retain.empty() && cfg.lambda != 0;
  const LMParams<T>* current = &theta0;
  auto run = [&](const std::function<void()>& snap) {
    unlearn::unlearn<T>(theta0, forget, retain, cfg, [&](long, const LMParams<T>& p) {
      current = &p;
      snap();
    });
  };
  auto gn = [&](std::size_t i) {
    const Tokens* r = paired ? &retain[i % retain.size()] : nullptr;
    return record_grad_norm(*current, theta0, forget[i], r, cfg, u);
  };
  return expected_grad_norms(forget.size(), run, gn);
}

// --------------------------------------------------------------- Moderate

struct KMeansResult {
  std::vector<std::vector<double>> centroids;
  std::vector<std::size_t> labels;
  std::size_t iterations = 0;
};

namespace detail {

inline double sq_dist(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

inline std::size_t count_distinct(const std::vector<std::vector<double>>& pts) {
  auto sorted = pts;
  std::sort(sorted.begin(), sorted.end());
  return static_cast<std::size_t>(std::unique(sorted.begin(), sorted.end()) - sorted.begin());
}

inline std::vector<std::vector<double>> kmeanspp_init(const std::vector<std::vector<double>>& pts, std::size_t k,
                                                      Rng& rng) {
  std::vector<std::vector<double>> c{pts[uniform_index(rng, pts.size())]};
  std::vector<double> d2(pts.size());
  while (c.size() < k) {
    double total = 0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      d2[i] = std::numeric_limits<double>::infinity();
      for (const auto& cc : c) d2[i] = std::min(d2[i], sq_dist(pts[i], cc));
      total += d2[i];
    }
    std::size_t pick = 0;
    double r = uniform01(rng) * total;
    for (pick = 0; pick + 1 < pts.size(); ++pick) {
      if (d2[pick] > 0 && r < d2[pick]) break;
      r -= d2[pick];
    }
    while (d2[pick] == 0 && pick > 0) --pick;  // rounding at the tail
    c.push_back(pts[pick]);
  }
  return c;
}

inline std::optional<KMeansResult> lloyd(const std::vector<std::vector<double>>& pts, std::size_t k, Rng& rng,
                                         std::size_t max_iter, double tol) {
  KMeansResult r;
  r.centroids = kmeanspp_init(pts, k, rng);
  r.labels.assign(pts.size(), 0);
  const std::size_t dim = pts.front().size();
  for (r.iterations = 1; r.iterations <= max_iter; ++r.iterations) {
    for (std::size_t i = 0; i < pts.size(); ++i) {
      std::size_t best = 0;
      double bd = sq_dist(pts[i], r.centroids[0]);
      for (std::size_t c = 1; c < k; ++c) {
        const double d = sq_dist(pts[i], r.centroids[c]);
        if (d < bd) bd = d, best = c;
      }
      r.labels[i] = best;
    }
    std::vector<std::vector<double>> next(k, std::vector<double>(dim, 0.0));
    std::vector<std::size_t> cnt(k, 0);
    for (std::size_t i = 0; i < pts.size(); ++i) {
      ++cnt[r.labels[i]];
      for (std::size_t j = 0; j < dim; ++j) next[r.labels[i]][j] += pts[i][j];
    }
    double shift = 0;
    for (std::size_t c = 0; c < k; ++c) {
      if (cnt[c] == 0) return std::nullopt;
      for (auto& x : next[c]) x /= static_cast<double>(cnt[c]);
      shift = std::max(shift, std::sqrt(sq_dist(next[c], r.centroids[c])));
    }
    r.centroids = std::move(next);
    if (shift <= tol) break;
  }
  r.iterations = std::min(r.iterations, max_iter);
  return r;
}

}  // namespace detail

/// Lloyd's k-means with k-means++ seeding. k is capped at the number of
/// distinct points. An empty cluster triggers one re-seed, then an error.
inline KMeansResult kmeans(const std::vector<std::vector<double>>& pts, std::size_t k, std::uint64_t seed,
                           std::size_t max_iter = 100, double tol = 1e-6) {
  require(!pts.empty() && k >= 1, "k-means needs points and k >= 1");
  for (const auto& p : pts) require(p.size() == pts.front().size(), "k-means points must share a dimension");
  k = std::min(k, detail::count_distinct(pts));
  Rng rng(mix_seed(seed, 0x4B));
  for (int attempt = 0; attempt < 2; ++attempt)
    if (auto r = detail::lloyd(pts, k, rng, max_iter, tol)) return *r;
  throw NumericError("k-means produced an empty cluster twice");
}

/// Largest-remainder split of `budget` proportional to cluster sizes; ties
/// go to the lower cluster index.
inline std::vector<std::size_t> apportion(const std::vector<std::size_t>& sizes, std::size_t budget) {
  const std::size_t n = std::accumulate(sizes.begin(), sizes.end(), std::size_t{0});
  require(n > 0 && budget <= n, "budget must not exceed the number of points");
  std::vector<std::size_t> q(sizes.size());
  std::vector<std::pair<std::size_t, std::size_t>> rem;  // (remainder numerator, cluster)
  std::size_t used = 0;
  for (std::size_t c = 0; c < sizes.size(); ++c) {
    q[c] = budget * sizes[c] / n;
    used += q[c];
    rem.emplace_back(budget * sizes[c] % n, c);
  }
  std::stable_sort(rem.begin(), rem.end(), [](auto a, auto b) { return a.first > b.first; });
  for (std::size_t i = 0; used < budget; ++i, ++used) ++q[rem[i].second];
  return q;
}

/// Moderate selection on explicit representations.
inline Selection moderate_select_points(const std::vector<std::vector<double>>& pts, double p, std::uint64_t seed,
                                        std::size_t k = 4) {
  const std::size_t budget = coreset_size(pts.size(), p);
  const KMeansResult km = kmeans(pts, k, seed);
  const std::size_t kk = km.centroids.size();
  std::vector<std::vector<std::size_t>> members(kk);
  for (std::size_t i = 0; i < pts.size(); ++i) members[km.labels[i]].push_back(i);
  std::vector<std::size_t> sizes;
  for (const auto& m : members) sizes.push_back(m.size());
  const auto quota = apportion(sizes, budget);

  std::vector<double> dist(pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i) dist[i] = std::sqrt(detail::sq_dist(pts[i], km.centroids[km.labels[i]]));
  Selection s{"moderate", p, {}, std::vector<double>(pts.size()), seed};
  for (std::size_t c = 0; c < kk; ++c) {
    std::vector<double> d;
    for (auto i : members[c]) d.push_back(dist[i]);
    std::sort(d.begin(), d.end());
    const std::size_t m = d.size();
    const double median = m % 2 ? d[m / 2] : 0.5 * (d[m / 2 - 1] + d[m / 2]);
    auto ranked = members[c];
    for (auto i : ranked) s.scores[i] = std::abs(dist[i] - median);
    std::stable_sort(ranked.begin(), ranked.end(), [&](std::size_t a, std::size_t b) { return s.scores[a] < s.scores[b]; });
    s.indices.insert(s.indices.end(), ranked.begin(), ranked.begin() + static_cast<std::ptrdiff_t>(quota[c]));
  }
  std::sort(s.indices.begin(), s.indices.end());
  return s;
}

/// Moderate selection on mean-pooled penultimate-layer representations of
/// the reference model.
template <std::floating_point T>
Selection moderate_select(const LMParams<T>& ref, std::span<const Tokens> forget, double p, std::uint64_t seed = 0) {
  require(forget.size() >= 4, "Moderate selection needs N >= 4");
  std::vector<std::vector<double>> pts;
  for (const auto& r : model::batch_mean_pooled_rep(ref, forget, ref.config.penultimate_layer()))
    pts.emplace_back(r.begin(), r.end());
  return moderate_select_points(pts, p, seed);
}

}  // namespace ulab::coreset
