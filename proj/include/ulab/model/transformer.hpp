#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ulab/error.hpp"
#include "ulab/numcore/graph.hpp"
#include "ulab/numcore/tensor.hpp"
#include "ulab/rng.hpp"

namespace ulab::model {

using num::Graph;
using num::Tensor;
using num::Var;
using Tokens = std::vector<int>;

struct LMConfig {
  std::uint32_t vocab_size = 256;
  std::uint32_t d_model = 64;
  std::uint32_t n_layers = 4;
  std::uint32_t n_heads = 4;
  std::uint32_t max_seq_len = 128;
  std::uint64_t seed = 0;

  void validate() const {
    if (vocab_size < 1) throw ContractViolation("vocab_size must be >= 1");
    if (d_model < 1 || n_heads < 1 || d_model % n_heads != 0)
      throw ContractViolation("d_model must be a positive multiple of n_heads");
    if (n_layers < 2) throw ContractViolation("n_layers must be >= 2 so a penultimate layer exists");
    if (max_seq_len < 8) throw ContractViolation("max_seq_len must be >= 8");
  }

  std::uint32_t penultimate_layer() const { return n_layers - 2; }

  bool operator==(const LMConfig&) const = default;
};

/// Named weights of the decoder. Iteration order of `tensors` (sorted by
/// name) is the canonical order for serialization and optimizer state.
template <std::floating_point T>
struct LMParams {
  LMConfig config;
  std::map<std::string, Tensor<T>> tensors;

  const Tensor<T>& at(const std::string& name) const { return tensors.at(name); }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& [_, t] : tensors) n += t.size();
    return n;
  }

  template <std::floating_point U>
  LMParams<U> cast() const {
    LMParams<U> out{config, {}};
    for (const auto& [k, t] : tensors) out.tensors.emplace(k, t.template cast<U>());
    return out;
  }

  bool operator==(const LMParams&) const = default;
};

inline std::string layer_key(std::size_t layer, const char* what) {
  return "layers." + std::to_string(layer) + "." + what;
}

/// Expected shape of every named tensor for a configuration.
inline std::map<std::string, num::Shape> param_shapes(const LMConfig& c) {
  const std::size_t d = c.d_model;
  std::map<std::string, num::Shape> s;
  s["tok_emb"] = {c.vocab_size, d};
  s["pos_emb"] = {c.max_seq_len, d};
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    s[layer_key(l, "attn_norm")] = {d};
    s[layer_key(l, "wqkv")] = {d, 3 * d};
    s[layer_key(l, "wo")] = {d, d};
    s[layer_key(l, "mlp_norm")] = {d};
    s[layer_key(l, "w_in")] = {d, 4 * d};
    s[layer_key(l, "w_out")] = {4 * d, d};
  }
  s["final_norm"] = {d};
  s["head"] = {d, c.vocab_size};
  return s;
}

template <std::floating_point T>
LMParams<T> init_params(const LMConfig& cfg) {
  cfg.validate();
  Rng rng(mix_seed(cfg.seed, 0x1417));
  LMParams<T> p{cfg, {}};
  const double d = cfg.d_model;
  const double resid_scale = 1.0 / std::sqrt(2.0 * cfg.n_layers);
  // Map iteration is name-sorted, so the draw order is fixed.
  for (const auto& [name, shape] : param_shapes(cfg)) {
    Tensor<T> t(shape);
    const bool is_norm = name.find("norm") != std::string::npos;
    if (is_norm) {
      std::fill(t.data.begin(), t.data.end(), T{1});
    } else {
      double stdev = 0.02;
      if (name.ends_with("wqkv") || name.ends_with("w_in") || name == "head") stdev = 1.0 / std::sqrt(d);
      if (name.ends_with("wo")) stdev = resid_scale / std::sqrt(d);
      if (name.ends_with("w_out")) stdev = resid_scale / std::sqrt(4.0 * d);
      if (name == "tok_emb") stdev = 0.5;
      for (auto& x : t.data) x = static_cast<T>(stdev * normal01(rng));
    }
    p.tensors.emplace(name, std::move(t));
  }
  return p;
}

/// Graph handles for every parameter tensor.
struct Bound {
  std::map<std::string, Var> vars;
  Var operator[](const std::string& name) const { return vars.at(name); }
};

template <std::floating_point T>
Bound bind(Graph<T>& g, const LMParams<T>& p, bool requires_grad) {
  Bound b;
  for (const auto& [name, t] : p.tensors) b.vars.emplace(name, g.leaf(name, t, requires_grad));
  return b;
}

struct ForwardOptions {
  /// Stop after this block and skip the head (hidden states only).
  std::optional<std::size_t> stop_after_layer;
};

struct ForwardVars {
  std::optional<Var> logits;  // [rows, V]; empty when stopped early
  std::vector<Var> hidden;    // residual stream after each computed block, [rows, d]
};

/// Core decoder pass over packed sequences. `tok_embeddings` is [rows, d];
/// `lengths` splits rows into independent sequences.
template <std::floating_point T>
ForwardVars forward_embedded(Graph<T>& g, const LMParams<T>& p, const Bound& b, Var tok_embeddings,
                             const std::vector<std::size_t>& lengths, const ForwardOptions& opt = {}) {
  const auto& cfg = p.config;
  std::vector<int> pos;
  for (std::size_t len : lengths) {
    require(len <= cfg.max_seq_len, "sequence length " + std::to_string(len) + " exceeds max_seq_len " +
                                        std::to_string(cfg.max_seq_len));
    for (std::size_t i = 0; i < len; ++i) pos.push_back(static_cast<int>(i));
  }
  require(g.value(tok_embeddings).rows() == pos.size(), "embedding rows do not match sequence lengths");
  std::size_t last = cfg.n_layers - 1;
  if (opt.stop_after_layer) {
    require(*opt.stop_after_layer < cfg.n_layers, "layer index out of range");
    last = *opt.stop_after_layer;
  }

  ForwardVars out;
  Var x = g.add(tok_embeddings, g.embed(b["pos_emb"], std::move(pos)));
  for (std::size_t l = 0; l <= last; ++l) {
    Var h = g.rmsnorm(x, b[layer_key(l, "attn_norm")]);
    Var att = g.causal_attention(g.matmul(h, b[layer_key(l, "wqkv")]), lengths, cfg.n_heads);
    x = g.add(x, g.matmul(att, b[layer_key(l, "wo")]));
    Var h2 = g.rmsnorm(x, b[layer_key(l, "mlp_norm")]);
    x = g.add(x, g.matmul(g.gelu(g.matmul(h2, b[layer_key(l, "w_in")])), b[layer_key(l, "w_out")]));
    out.hidden.push_back(x);
  }
  if (!opt.stop_after_layer) out.logits = g.matmul(g.rmsnorm(x, b["final_norm"]), b["head"]);
  return out;
}

template <std::floating_point T>
ForwardVars forward(Graph<T>& g, const LMParams<T>& p, const Bound& b, std::span<const Tokens> seqs,
                    const ForwardOptions& opt = {}) {
  std::vector<int> ids;
  std::vector<std::size_t> lengths;
  for (const auto& s : seqs) {
    require(!s.empty(), "empty token sequence");
    ids.insert(ids.end(), s.begin(), s.end());
    lengths.push_back(s.size());
  }
  return forward_embedded(g, p, b, g.embed(b["tok_emb"], std::move(ids)), lengths, opt);
}

/// Next-token targets for packed sequences: row i predicts token i+1 of its
/// own sequence; the last row of each sequence gets -1 (ignored).
inline std::vector<int> shifted_targets(std::span<const Tokens> seqs) {
  std::vector<int> t;
  for (const auto& s : seqs) {
    for (std::size_t i = 0; i + 1 < s.size(); ++i) t.push_back(s[i + 1]);
    t.push_back(-1);
  }
  return t;
}

template <std::floating_point T>
struct ForwardResult {
  Tensor<T> logits;               // [len, V]
  std::vector<Tensor<T>> hidden;  // n_layers x [len, d]
};

template <std::floating_point T>
ForwardResult<T> forward_logits(const LMParams<T>& p, const Tokens& tokens) {
  Graph<T> g;
  const Bound b = bind(g, p, false);
  const Tokens* one = &tokens;
  auto fv = forward(g, p, b, std::span<const Tokens>(one, 1));
  ForwardResult<T> r{g.value(*fv.logits), {}};
  for (Var h : fv.hidden) r.hidden.push_back(g.value(h));
  return r;
}

/// Sequences per inference graph; bounds peak memory on large batches.
inline constexpr std::size_t kInferenceChunk = 32;

/// log p(z_i | z_<i) for i = 1..n-1, for each sequence.
template <std::floating_point T>
std::vector<std::vector<T>> batch_sequence_logprobs(const LMParams<T>& p, std::span<const Tokens> seqs) {
  std::vector<std::vector<T>> out;
  out.reserve(seqs.size());
  for (std::size_t s0 = 0; s0 < seqs.size(); s0 += kInferenceChunk) {
    auto chunk = seqs.subspan(s0, std::min(kInferenceChunk, seqs.size() - s0));
    for (const auto& s : chunk) require(s.size() >= 2, "sequence_logprobs needs at least 2 tokens");
    Graph<T> g;
    const Bound b = bind(g, p, false);
    auto fv = forward(g, p, b, chunk);
    const auto& lp = g.value(g.token_logprobs(*fv.logits, shifted_targets(chunk)));
    std::size_t row = 0;
    for (const auto& s : chunk) {
      out.emplace_back(lp.data.begin() + static_cast<std::ptrdiff_t>(row),
                       lp.data.begin() + static_cast<std::ptrdiff_t>(row + s.size() - 1));
      row += s.size();
    }
  }
  return out;
}

template <std::floating_point T>
std::vector<T> sequence_logprobs(const LMParams<T>& p, const Tokens& tokens) {
  require(tokens.size() >= 2, "sequence_logprobs needs at least 2 tokens");
  return batch_sequence_logprobs(p, std::span<const Tokens>(&tokens, 1)).front();
}

/// Argmax with ties to the lowest id.
template <std::floating_point T>
int argmax_row(const T* row, std::size_t n) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < n; ++i)
    if (row[i] > row[best]) best = i;
  return static_cast<int>(best);
}

/// Greedy continuation of several prompts in lockstep.
template <std::floating_point T>
std::vector<Tokens> greedy_decode_batch(const LMParams<T>& p, std::span<const Tokens> prompts, std::size_t n) {
  for (const auto& pr : prompts) {
    require(!pr.empty(), "greedy_decode needs a nonempty prompt");
    require(pr.size() + n <= p.config.max_seq_len, "prompt length + n exceeds max_seq_len");
  }
  std::vector<Tokens> seqs(prompts.begin(), prompts.end());
  std::vector<Tokens> cont(prompts.size());
  const std::size_t V = p.config.vocab_size;
  for (std::size_t step = 0; step < n; ++step) {
    for (std::size_t s0 = 0; s0 < seqs.size(); s0 += kInferenceChunk) {
      const std::size_t cnt = std::min(kInferenceChunk, seqs.size() - s0);
      std::span<const Tokens> chunk(seqs.data() + s0, cnt);
      Graph<T> g;
      const Bound b = bind(g, p, false);
      const auto& logits = g.value(*forward(g, p, b, chunk).logits);
      std::size_t row = 0;
      std::vector<int> next(cnt);
      for (std::size_t i = 0; i < cnt; ++i) {
        row += chunk[i].size();
        next[i] = argmax_row(logits.data.data() + (row - 1) * V, V);
      }
      for (std::size_t i = 0; i < cnt; ++i) {
        seqs[s0 + i].push_back(next[i]);
        cont[s0 + i].push_back(next[i]);
      }
    }
  }
  return cont;
}

template <std::floating_point T>
Tokens greedy_decode(const LMParams<T>& p, const Tokens& prompt, std::size_t n) {
  return greedy_decode_batch(p, std::span<const Tokens>(&prompt, 1), n).front();
}

/// Mean over positions of the residual stream after block `layer`.
template <std::floating_point T>
std::vector<std::vector<T>> batch_mean_pooled_rep(const LMParams<T>& p, std::span<const Tokens> seqs,
                                                  std::size_t layer) {
  require(layer < p.config.n_layers, "layer index out of range");
  std::vector<std::vector<T>> out;
  const std::size_t d = p.config.d_model;
  for (std::size_t s0 = 0; s0 < seqs.size(); s0 += kInferenceChunk) {
    auto chunk = seqs.subspan(s0, std::min(kInferenceChunk, seqs.size() - s0));
    Graph<T> g;
    const Bound b = bind(g, p, false);
    auto fv = forward(g, p, b, chunk, ForwardOptions{layer});
    const auto& h = g.value(fv.hidden.back());
    std::size_t row = 0;
    for (const auto& s : chunk) {
      std::vector<T> m(d, T{0});
      for (std::size_t i = 0; i < s.size(); ++i)
        for (std::size_t c = 0; c < d; ++c) m[c] += h.data[(row + i) * d + c];
      for (auto& x : m) x /= static_cast<T>(s.size());
      out.push_back(std::move(m));
      row += s.size();
    }
  }
  return out;
}

template <std::floating_point T>
std::vector<T> mean_pooled_rep(const LMParams<T>& p, const Tokens& tokens, std::size_t layer) {
  return batch_mean_pooled_rep(p, std::span<const Tokens>(&tokens, 1), layer).front();
}

}  // namespace ulab::model
