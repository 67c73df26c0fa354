#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "ulab/error.hpp"
#include "ulab/model/transformer.hpp"
#include "ulab/rng.hpp"

namespace ulab::unlearn {

using model::Bound;
using model::LMParams;
using model::Tokens;
using num::Graph;
using num::Tensor;
using num::Var;

/// RMU misdirection target direction. `raw` keeps the uniform [0,1) draws
/// before normalization.
struct ControlVector {
  std::vector<double> u;
  std::vector<double> raw;
  std::uint64_t seed = 0;
};

inline ControlVector sample_control_vector(std::size_t d_model, std::uint64_t seed) {
  require(d_model >= 1, "control vector needs d_model >= 1");
  ControlVector cv;
  cv.seed = seed;
  Rng rng(mix_seed(seed, 0xC0));
  double ss = 0;
  for (std::size_t i = 0; i < d_model; ++i) {
    cv.raw.push_back(uniform01(rng));
    ss += cv.raw.back() * cv.raw.back();
  }
  // All-zero draws are measure-zero; fall back to the first axis.
  if (ss == 0.0) cv.raw[0] = 1.0, ss = 1.0;
  const double norm = std::sqrt(ss);
  for (double x : cv.raw) cv.u.push_back(x / norm);
  return cv;
}

inline std::size_t total_length(std::span<const Tokens> seqs) {
  std::size_t n = 0;
  for (const auto& s : seqs) n += s.size();
  return n;
}

inline std::vector<std::size_t> lengths_of(std::span<const Tokens> seqs) {
  std::vector<std::size_t> l;
  for (const auto& s : seqs) l.push_back(s.size());
  return l;
}

// ------------------------------------------------------------- graph builders

/// Per-sequence log-likelihood log π(y) = Σ log p(z_i | z_<i), shape [B].
template <std::floating_point T>
Var sequence_loglik(Graph<T>& g, Var logits, std::span<const Tokens> seqs) {
  return g.segment_sum(g.token_logprobs(logits, model::shifted_targets(seqs)), lengths_of(seqs));
}

/// NPO forget term over a batch: mean of −(2/β) log σ(−β (log π_θ − log π_ref)).
template <std::floating_point T>
Var npo_forget_term(Graph<T>& g, Var logits, std::span<const Tokens> seqs, const std::vector<T>& ref_loglik,
                    double beta) {
  require(beta > 0, "NPO beta must be positive");
  require(ref_loglik.size() == seqs.size(), "one reference log-likelihood per sequence required");
  Var ratio = g.sub(sequence_loglik(g, logits, seqs), g.constant(Tensor<T>({seqs.size()}, ref_loglik)));
  Var ls = g.log_sigmoid(g.scale(ratio, static_cast<T>(-beta)));
  return g.scale(g.sum(ls), static_cast<T>(-2.0 / (beta * static_cast<double>(seqs.size()))));
}

/// Mean next-token cross entropy over every predicted token of the batch.
template <std::floating_point T>
Var cross_entropy_term(Graph<T>& g, Var logits, std::span<const Tokens> seqs) {
  const std::size_t n_pred = total_length(seqs) - seqs.size();
  require(n_pred > 0, "cross entropy needs sequences of length >= 2");
  Var lp = g.token_logprobs(logits, model::shifted_targets(seqs));
  return g.scale(g.sum(lp), static_cast<T>(-1.0 / static_cast<double>(n_pred)));
}

template <std::floating_point T>
struct RmuVars {
  Var forget;
  Var retain;
  Var total;
};

/// Both RMU terms from a single pass over [forget ; retain] packed rows.
/// Each record's squared distances are divided by its token count, then
/// averaged over the batch.
template <std::floating_point T>
RmuVars<T> rmu_terms(Graph<T>& g, const LMParams<T>& p, const Bound& b, std::span<const Tokens> forget,
                     std::span<const Tokens> retain, const std::vector<Tensor<T>>& ref_retain_hidden,
                     const ControlVector& u, double c, std::size_t layer, double lambda) {
  require(layer < p.config.n_layers, "RMU layer out of range");
  require(u.u.size() == p.config.d_model, "control vector length must equal d_model");
  require(ref_retain_hidden.size() == retain.size(), "one reference activation block per retain record");
  require(!forget.empty(), "RMU needs a nonempty forget batch");
  std::vector<Tokens> all(forget.begin(), forget.end());
  all.insert(all.end(), retain.begin(), retain.end());
  auto fv = model::forward(g, p, b, std::span<const Tokens>(all), model::ForwardOptions{layer});
  Var h = fv.hidden.back();
  const std::size_t d = p.config.d_model, rows = total_length(all), fr = total_length(forget);

  Tensor<T> target({rows, d}), wf({rows}), wr({rows});
  for (std::size_t r = 0; r < fr; ++r)
    for (std::size_t k = 0; k < d; ++k) target.data[r * d + k] = static_cast<T>(c * u.u[k]);
  std::size_t row = 0;
  for (const auto& s : forget) {
    for (std::size_t i = 0; i < s.size(); ++i)
      wf[row++] = static_cast<T>(1.0 / (static_cast<double>(s.size()) * static_cast<double>(forget.size())));
  }
  for (std::size_t j = 0; j < retain.size(); ++j) {
    const auto& ref = ref_retain_hidden[j];
    require(ref.rows() == retain[j].size() && ref.cols() == d, "reference activation shape mismatch");
    std::copy(ref.data.begin(), ref.data.end(), target.data.begin() + static_cast<std::ptrdiff_t>(row * d));
    for (std::size_t i = 0; i < retain[j].size(); ++i)
      wr[row++] = static_cast<T>(1.0 / (static_cast<double>(retain[j].size()) * static_cast<double>(retain.size())));
  }
  RmuVars<T> out;
  Var sq = g.row_sum(g.square(g.sub(h, g.constant(std::move(target)))));
  out.forget = g.sum(g.mul(sq, g.constant(std::move(wf))));
  out.retain = retain.empty() ? g.constant(Tensor<T>::scalar(0)) : g.sum(g.mul(sq, g.constant(std::move(wr))));
  out.total = g.add(out.forget, g.scale(out.retain, static_cast<T>(lambda)));
  return out;
}

/// Layer-`layer` activations of each sequence under frozen params.
template <std::floating_point T>
std::vector<Tensor<T>> layer_activations(const LMParams<T>& p, std::span<const Tokens> seqs, std::size_t layer) {
  std::vector<Tensor<T>> out;
  const std::size_t d = p.config.d_model;
  for (std::size_t s0 = 0; s0 < seqs.size(); s0 += model::kInferenceChunk) {
    auto chunk = seqs.subspan(s0, std::min(model::kInferenceChunk, seqs.size() - s0));
    Graph<T> g;
    const Bound b = model::bind(g, p, false);
    const auto& h = g.value(model::forward(g, p, b, chunk, model::ForwardOptions{layer}).hidden.back());
    std::size_t row = 0;
    for (const auto& s : chunk) {
      Tensor<T> t({s.size(), d});
      std::copy_n(h.data.begin() + static_cast<std::ptrdiff_t>(row * d), s.size() * d, t.data.begin());
      out.push_back(std::move(t));
      row += s.size();
    }
  }
  return out;
}

template <std::floating_point T>
std::vector<T> sequence_logliks(const LMParams<T>& p, std::span<const Tokens> seqs) {
  std::vector<T> out;
  for (const auto& lp : model::batch_sequence_logprobs(p, seqs)) {
    T s{0};
    for (T x : lp) s += x;
    out.push_back(s);
  }
  return out;
}

// ------------------------------------------------------------- scalar losses

template <std::floating_point T>
double npo_forget_loss(const LMParams<T>& theta, const LMParams<T>& ref, std::span<const Tokens> batch, double beta) {
  require(theta.config == ref.config, "NPO needs identical architectures for model and reference");
  const auto ref_ll = sequence_logliks(ref, batch);
  Graph<T> g;
  const Bound b = model::bind(g, theta, false);
  auto fv = model::forward(g, theta, b, batch);
  return g.value(npo_forget_term(g, *fv.logits, batch, ref_ll, beta)).item();
}

template <std::floating_point T>
double npo_retain_loss(const LMParams<T>& theta, std::span<const Tokens> batch) {
  Graph<T> g;
  const Bound b = model::bind(g, theta, false);
  auto fv = model::forward(g, theta, b, batch);
  return g.value(cross_entropy_term(g, *fv.logits, batch)).item();
}

struct RmuLoss {
  double forget = 0;
  double retain = 0;
  double total = 0;
};

template <std::floating_point T>
RmuLoss rmu_loss(const LMParams<T>& theta, const LMParams<T>& ref, std::span<const Tokens> forget_batch,
                 std::span<const Tokens> retain_batch, double c, const ControlVector& u, std::size_t layer,
                 double lambda) {
  require(theta.config.n_layers == ref.config.n_layers && theta.config.d_model == ref.config.d_model,
          "RMU model and reference disagree on layer structure");
  require(layer < theta.config.n_layers, "RMU layer out of range");
  require(lambda >= 0, "lambda must be >= 0");
  const auto ref_h = layer_activations(ref, retain_batch, layer);
  Graph<T> g;
  const Bound b = model::bind(g, theta, false);
  auto v = rmu_terms(g, theta, b, forget_batch, retain_batch, ref_h, u, c, layer, lambda);
  RmuLoss out;
  out.forget = g.value(v.forget).item();
  out.retain = g.value(v.retain).item();
  out.total = out.forget + lambda * out.retain;
  return out;
}

}  // namespace ulab::unlearn
