#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <span>
#include <vector>

#include "ulab/databench/benchmark.hpp"
#include "ulab/error.hpp"
#include "ulab/evalsuite/metrics.hpp"
#include "ulab/model/transformer.hpp"
#include "ulab/rng.hpp"

namespace ulab::analysis {

using data::MCQItem;
using model::LMParams;
using model::Tokens;

struct AttackConfig {
  std::size_t prefix_len = 8;   // m
  std::size_t iterations = 50;
  std::size_t top_k = 16;       // candidates per position
  std::uint64_t seed = 0;       // order in which equal-loss candidates are met

  void validate() const {
    if (prefix_len < 1) throw ConfigError("attack prefix length must be >= 1");
    if (top_k < 1) throw ConfigError("attack top_k must be >= 1");
  }
};

struct AttackResult {
  double ue_before = 0;       // no prefix
  double ue_init_prefix = 0;  // initial prefix, before any search
  double ue_after = 0;        // best prefix found
  Tokens prefix;
  std::vector<double> objective;  // after init, then after each accepted iteration
  std::size_t iterations_run = 0;
};

/// Most frequent filler token in `records`, ties to the lowest id.
inline int most_frequent_filler(const data::SyntheticBenchmark& b) {
  require(!b.filler.empty(), "benchmark has no filler tokens");
  std::map<int, std::size_t> count;
  for (int f : b.filler) count[f] = 0;
  for (const auto* recs : {&b.forget_records, &b.retain_records})
    for (const auto& r : *recs)
      for (int t : r.tokens)
        if (auto it = count.find(t); it != count.end()) ++it->second;
  int best = b.filler.front();
  for (const auto& [tok, n] : count)
    if (n > count[best]) best = tok;
  return best;
}

inline std::vector<MCQItem> with_prefix(std::span<const MCQItem> items, const Tokens& prefix) {
  std::vector<MCQItem> out(items.begin(), items.end());
  for (auto& it : out) it.question.insert(it.question.begin(), prefix.begin(), prefix.end());
  return out;
}

namespace detail {

/// Sum over items of the length-normalized NLL of the correct option.
template <std::floating_point T>
std::vector<double> prefix_objectives(const LMParams<T>& theta, std::span<const MCQItem> items,
                                      const std::vector<Tokens>& prefixes) {
  std::vector<Tokens> seqs;
  for (const auto& p : prefixes)
    for (const auto& it : items) {
      Tokens s = p;
      s.insert(s.end(), it.question.begin(), it.question.end());
      const auto& o = it.options[static_cast<std::size_t>(it.answer)];
      s.insert(s.end(), o.begin(), o.end());
      seqs.push_back(std::move(s));
    }
  const auto lps = model::batch_sequence_logprobs(theta, std::span<const Tokens>(seqs));
  std::vector<double> out(prefixes.size(), 0.0);
  for (std::size_t c = 0; c < prefixes.size(); ++c)
    for (std::size_t i = 0; i < items.size(); ++i) {
      const auto& lp = lps[c * items.size() + i];
      const std::size_t n = items[i].options[static_cast<std::size_t>(items[i].answer)].size();
      double s = 0;
      for (std::size_t t = lp.size() - n; t < lp.size(); ++t) s += lp[t];
      out[c] -= s / static_cast<double>(n);
    }
  return out;
}

/// Gradient of the objective with respect to the one-hot prefix rows,
/// summed over items: [m, V].
template <std::floating_point T>
num::Tensor<T> prefix_onehot_grad(const LMParams<T>& theta, std::span<const MCQItem> items, const Tokens& prefix) {
  const std::size_t V = theta.config.vocab_size, m = prefix.size();
  std::vector<int> ids, targets;
  std::vector<std::size_t> lengths;
  std::vector<T> weights;
  for (const auto& it : items) {
    Tokens s = prefix;
    s.insert(s.end(), it.question.begin(), it.question.end());
    const auto& o = it.options[static_cast<std::size_t>(it.answer)];
    const std::size_t opt_start = s.size();
    s.insert(s.end(), o.begin(), o.end());
    for (std::size_t t = 0; t < s.size(); ++t) {
      ids.push_back(s[t]);
      const bool predicts_option = t + 1 >= opt_start && t + 1 < s.size();
      targets.push_back(predicts_option ? s[t + 1] : -1);
      weights.push_back(predicts_option ? static_cast<T>(-1.0 / static_cast<double>(o.size())) : T{0});
    }
    lengths.push_back(s.size());
  }
  num::Tensor<T> onehot({ids.size(), V});
  for (std::size_t r = 0; r < ids.size(); ++r) onehot.data[r * V + static_cast<std::size_t>(ids[r])] = T{1};
  num::Graph<T> g;
  const auto b = model::bind(g, theta, false);
  num::Var x = g.leaf_owned("onehot", std::move(onehot), true);
  auto fv = model::forward_embedded(g, theta, b, g.matmul(x, b["tok_emb"]), lengths);
  num::Var lp = g.token_logprobs(*fv.logits, std::move(targets));
  num::Var loss = g.sum(g.mul(lp, g.constant(num::Tensor<T>({weights.size()}, weights))));
  const auto grads = g.backward(loss);
  const auto& gx = grads.at("onehot");
  num::Tensor<T> out({m, V});
  std::size_t row = 0;
  for (std::size_t len : lengths) {
    for (std::size_t j = 0; j < m; ++j)
      for (std::size_t v = 0; v < V; ++v) out.data[j * V + v] += gx.data[(row + j) * V + v];
    row += len;
  }
  return out;
}

}  // namespace detail

/// Greedy coordinate-gradient prefix search that tries to make the model
/// answer forget-domain questions correctly again.
template <std::floating_point T>
AttackResult prefix_attack(const LMParams<T>& theta, std::span<const MCQItem> items, int init_token,
                           const AttackConfig& cfg) {
  cfg.validate();
  require(!items.empty(), "attack needs at least one item");
  const std::size_t V = theta.config.vocab_size;
  require(init_token >= 0 && static_cast<std::size_t>(init_token) < V, "attack init token out of range");
  for (const auto& it : items) {
    std::size_t longest = 0;
    for (const auto& o : it.options) longest = std::max(longest, o.size());
    require(cfg.prefix_len + it.question.size() + longest <= theta.config.max_seq_len,
            "prefix + question + option exceeds the context length");
  }
  AttackResult r;
  r.prefix.assign(cfg.prefix_len, init_token);
  r.ue_before = eval::unlearning_effectiveness(theta, items);
  r.ue_init_prefix = eval::unlearning_effectiveness(theta, std::span<const MCQItem>(with_prefix(items, r.prefix)));
  double best = detail::prefix_objectives(theta, items, {r.prefix}).front();
  r.objective.push_back(best);
  Rng rng(mix_seed(cfg.seed, 0xA7));

  for (std::size_t iter = 0; iter < cfg.iterations; ++iter) {
    const auto grad = detail::prefix_onehot_grad(theta, items, r.prefix);
    std::vector<Tokens> cands;
    for (std::size_t j = 0; j < cfg.prefix_len; ++j) {
      std::vector<std::size_t> order(V);
      std::iota(order.begin(), order.end(), std::size_t{0});
      const T* gj = grad.data.data() + j * V;
      std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return gj[a] < gj[b]; });
      std::size_t taken = 0;
      for (std::size_t v : order) {
        if (taken == cfg.top_k) break;
        if (static_cast<int>(v) == r.prefix[j]) continue;
        Tokens c = r.prefix;
        c[j] = static_cast<int>(v);
        cands.push_back(std::move(c));
        ++taken;
      }
    }
    shuffle(cands.begin(), cands.end(), rng);
    const auto obj = detail::prefix_objectives(theta, items, cands);
    ++r.iterations_run;
    std::size_t arg = 0;
    for (std::size_t c = 1; c < obj.size(); ++c)
      if (obj[c] < obj[arg]) arg = c;
    if (obj.empty() || !(obj[arg] < best)) break;  // local optimum under this shortlist
    best = obj[arg];
    r.prefix = cands[arg];
    r.objective.push_back(best);
  }
  r.ue_after = eval::unlearning_effectiveness(theta, std::span<const MCQItem>(with_prefix(items, r.prefix)));
  return r;
}

}  // namespace ulab::analysis
