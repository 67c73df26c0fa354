#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ulab/error.hpp"
#include "ulab/model/transformer.hpp"
#include "ulab/numcore/optim.hpp"
#include "ulab/rng.hpp"
#include "ulab/unlearn/losses.hpp"

namespace ulab::unlearn {

// ------------------------------------------------------------ LM training

struct TrainConfig {
  long epochs = 100;
  double lr = 3e-3;
  std::size_t batch_size = 8;
  std::uint64_t seed = 0;
};

template <std::floating_point T>
struct TrainResult {
  LMParams<T> params;
  std::vector<double> epoch_loss;  // mean batch cross entropy per epoch
};

namespace detail {

template <class T>
void check_loss(T loss, const char* what, long step) {
  if (!std::isfinite(static_cast<double>(loss)))
    throw NumericError(std::string(what) + " diverged (non-finite loss) at step " + std::to_string(step));
}

}  // namespace detail

/// Next-token cross-entropy training of existing params, in place.
template <std::floating_point T>
std::vector<double> fit_cross_entropy(LMParams<T>& params, std::span<const Tokens> corpus, const TrainConfig& cfg) {
  std::vector<double> trace;
  if (cfg.epochs <= 0 || corpus.empty()) return trace;
  require(cfg.batch_size >= 1, "batch_size must be >= 1");
  Rng rng(mix_seed(cfg.seed, 0x7A));
  num::AdamState<T> opt;
  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (long e = 0; e < cfg.epochs; ++e) {
    shuffle(order.begin(), order.end(), rng);
    double sum = 0;
    std::size_t n = 0;
    for (std::size_t b0 = 0; b0 < order.size(); b0 += cfg.batch_size) {
      std::vector<Tokens> batch;
      for (std::size_t i = b0; i < std::min(order.size(), b0 + cfg.batch_size); ++i) batch.push_back(corpus[order[i]]);
      Graph<T> g;
      const Bound b = model::bind(g, params, true);
      auto fv = model::forward(g, params, b, std::span<const Tokens>(batch));
      Var loss = cross_entropy_term(g, *fv.logits, std::span<const Tokens>(batch));
      const T lv = g.value(loss).item();
      detail::check_loss(lv, "training", static_cast<long>(opt.step));
      num::adam_step(params.tensors, g.backward(loss), opt, cfg.lr);
      sum += lv;
      ++n;
    }
    trace.push_back(sum / static_cast<double>(n));
  }
  return trace;
}

/// Trains a fresh model on `corpus`. With only D_r as corpus this is the
/// retrain-from-scratch baseline.
template <std::floating_point T = float>
TrainResult<T> train_lm(const model::LMConfig& cfg, std::span<const Tokens> corpus, const TrainConfig& tc) {
  require(!corpus.empty(), "train_lm needs a nonempty corpus");
  TrainResult<T> r{model::init_params<T>(cfg), {}};
  r.epoch_loss = fit_cross_entropy(r.params, corpus, tc);
  return r;
}

/// Fine-tunes a copy of `theta` on the first n_samples records of `dataset`
/// after a seeded permutation.
template <std::floating_point T>
LMParams<T> finetune(const LMParams<T>& theta, std::span<const Tokens> dataset, std::size_t n_samples, long epochs,
                     double lr, std::uint64_t seed, std::size_t batch_size = 8) {
  require(n_samples <= dataset.size(), "n_samples exceeds the fine-tuning dataset");
  LMParams<T> out = theta;
  if (n_samples == 0) return out;
  std::vector<std::size_t> perm(dataset.size());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  Rng rng(mix_seed(seed, 0xF7));
  shuffle(perm.begin(), perm.end(), rng);
  std::vector<Tokens> chosen;
  for (std::size_t i = 0; i < n_samples; ++i) chosen.push_back(dataset[perm[i]]);
  fit_cross_entropy(out, std::span<const Tokens>(chosen), TrainConfig{epochs, lr, batch_size, seed});
  return out;
}

// ------------------------------------------------------------- unlearning

enum class Method { npo, rmu };

inline const char* method_name(Method m) { return m == Method::npo ? "npo" : "rmu"; }

inline Method parse_method(const std::string& s) {
  if (s == "npo") return Method::npo;
  if (s == "rmu") return Method::rmu;
  throw ConfigError("unknown unlearning method '" + s + "' (expected npo or rmu)");
}

struct UnlearnConfig {
  Method method = Method::rmu;
  double lambda = 1.0;
  double beta = 0.1;  // NPO
  double c = 20.0;    // RMU
  /// RMU layer; empty means ceil(n_layers / 2).
  std::optional<std::uint32_t> layer;
  double lr = 1.5e-2;
  double base_epochs = 10.0;
  std::size_t batch_size = 3;
  double ratio = 1.0;
  std::uint64_t control_seed = 99;
  std::uint64_t order_seed = 0;
  /// Fixed epoch count that bypasses ratio scaling (keyword-only runs).
  std::optional<long> epochs_override;
  /// Optional cap on optimizer steps.
  std::optional<long> max_steps;

  void validate() const {
    if (lambda < 0) throw ConfigError("lambda must be >= 0");
    if (method == Method::npo && !(beta > 0)) throw ConfigError("NPO needs beta > 0");
    if (method == Method::rmu && !(c > 0)) throw ConfigError("RMU needs c > 0");
    if (!(ratio > 0 && ratio <= 1)) throw ConfigError("coreset ratio must lie in (0, 1]");
    if (base_epochs < 0) throw ConfigError("base_epochs must be >= 0");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (!(lr > 0)) throw ConfigError("learning rate must be positive");
  }

  std::uint32_t rmu_layer(const model::LMConfig& mc) const {
    const std::uint32_t l = layer ? *layer : (mc.n_layers + 1) / 2;
    if (l >= mc.n_layers) throw ConfigError("RMU layer " + std::to_string(l) + " out of range");
    return l;
  }
};

/// Epoch count that keeps the total number of record visits fixed across
/// coreset ratios: round(base / p).
inline long epochs_for_ratio(double base_epochs, double p) {
  require(p > 0 && p <= 1, "ratio must lie in (0, 1]");
  return std::lround(base_epochs / p);
}

template <std::floating_point T>
struct UnlearnResult {
  LMParams<T> params;
  long epochs = 0;
  long steps = 0;
  std::vector<double> step_loss;      // total loss per optimizer step
  std::vector<double> epoch_forget;   // mean forget term per epoch
  std::vector<double> epoch_retain;   // mean retain term per epoch
};

/// Called after each finished epoch (1-based) with the current params.
template <std::floating_point T>
using EpochHook = std::function<void(long epoch, const LMParams<T>&)>;

/// Minimizes forget + λ·retain starting from theta0, with theta0 frozen as
/// the reference. Every forget batch is paired with the next retain batch of
/// a cyclic, shuffled pass over D_r.
template <std::floating_point T>
UnlearnResult<T> unlearn(const LMParams<T>& theta0, std::span<const Tokens> forget, std::span<const Tokens> retain,
                         const UnlearnConfig& cfg, const EpochHook<T>& hook = {}) {
  cfg.validate();
  require(!forget.empty(), "unlearn needs a nonempty forget set");
  require(!retain.empty() || cfg.lambda == 0, "unlearn needs retain data when lambda > 0");
  const LMParams<T>& ref = theta0;
  UnlearnResult<T> r{theta0, 0, 0, {}, {}, {}};
  r.epochs = cfg.epochs_override ? *cfg.epochs_override : epochs_for_ratio(cfg.base_epochs, cfg.ratio);
  if (r.epochs <= 0) return r;

  const bool npo = cfg.method == Method::npo;
  const std::size_t layer = npo ? 0 : cfg.rmu_layer(theta0.config);
  const ControlVector u = sample_control_vector(theta0.config.d_model, cfg.control_seed);
  const std::vector<T> ref_ll = npo ? sequence_logliks(ref, forget) : std::vector<T>{};
  std::map<std::size_t, Tensor<T>> ref_act;  // retain index -> reference activations, filled lazily

  Rng rng(mix_seed(cfg.order_seed, 0x5E));
  std::vector<std::size_t> forder(forget.size()), rorder(retain.size());
  std::iota(forder.begin(), forder.end(), std::size_t{0});
  std::iota(rorder.begin(), rorder.end(), std::size_t{0});
  shuffle(rorder.begin(), rorder.end(), rng);
  std::size_t rpos = 0;
  auto next_retain = [&](std::size_t n) {
    std::vector<std::size_t> idx;
    if (retain.empty() || cfg.lambda == 0) return idx;
    for (std::size_t i = 0; i < n; ++i) {
      if (rpos == rorder.size()) {
        shuffle(rorder.begin(), rorder.end(), rng);
        rpos = 0;
      }
      idx.push_back(rorder[rpos++]);
    }
    return idx;
  };

  num::AdamState<T> opt;
  for (long e = 0; e < r.epochs; ++e) {
    shuffle(forder.begin(), forder.end(), rng);
    double fsum = 0, rsum = 0;
    std::size_t nb = 0;
    for (std::size_t b0 = 0; b0 < forder.size(); b0 += cfg.batch_size) {
      if (cfg.max_steps && r.steps >= *cfg.max_steps) break;
      std::vector<Tokens> fb, rb;
      std::vector<T> fref;
      for (std::size_t i = b0; i < std::min(forder.size(), b0 + cfg.batch_size); ++i) {
        fb.push_back(forget[forder[i]]);
        if (npo) fref.push_back(ref_ll[forder[i]]);
      }
      const auto ridx = next_retain(cfg.batch_size);
      for (auto j : ridx) rb.push_back(retain[j]);

      Graph<T> g;
      const Bound b = model::bind(g, r.params, true);
      Var fterm, rterm, total;
      if (npo) {
        auto fvf = model::forward(g, r.params, b, std::span<const Tokens>(fb));
        fterm = npo_forget_term(g, *fvf.logits, std::span<const Tokens>(fb), fref, cfg.beta);
        if (!rb.empty()) {
          auto fvr = model::forward(g, r.params, b, std::span<const Tokens>(rb));
          rterm = cross_entropy_term(g, *fvr.logits, std::span<const Tokens>(rb));
        } else {
          rterm = g.constant(Tensor<T>::scalar(0));
        }
        total = g.add(fterm, g.scale(rterm, static_cast<T>(cfg.lambda)));
      } else {
        std::vector<Tensor<T>> rh;
        for (auto j : ridx) {
          auto it = ref_act.find(j);
          if (it == ref_act.end())
            it = ref_act.emplace(j, layer_activations(ref, std::span<const Tokens>(&retain[j], 1), layer).front()).first;
          rh.push_back(it->second);
        }
        auto v = rmu_terms(g, r.params, b, std::span<const Tokens>(fb), std::span<const Tokens>(rb), rh, u, cfg.c,
                           layer, cfg.lambda);
        fterm = v.forget;
        rterm = v.retain;
        total = v.total;
      }
      const double tv = g.value(total).item();
      detail::check_loss(tv, "unlearning", r.steps);
      num::adam_step(r.params.tensors, g.backward(total), opt, cfg.lr);
      r.step_loss.push_back(tv);
      fsum += g.value(fterm).item();
      rsum += g.value(rterm).item();
      ++nb;
      ++r.steps;
    }
    if (nb) {
      r.epoch_forget.push_back(fsum / static_cast<double>(nb));
      r.epoch_retain.push_back(rsum / static_cast<double>(nb));
    }
    if (hook) hook(e + 1, r.params);
    if (cfg.max_steps && r.steps >= *cfg.max_steps) break;
  }
  return r;
}

}  // namespace ulab::unlearn
