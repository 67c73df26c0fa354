#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <numeric>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ulab/error.hpp"
#include "ulab/numcore/tensor.hpp"

namespace ulab::num {

/// Handle to a node of a Graph. Only meaningful for the graph that issued it.
struct Var {
  std::size_t id = static_cast<std::size_t>(-1);
};

/// Gradients keyed by leaf name.
template <std::floating_point T>
using GradMap = std::map<std::string, Tensor<T>>;

/// Tape-based reverse-mode autodiff. Nodes are appended in evaluation order,
/// so the node vector is already a topological order and backward is a single
/// reverse sweep. A Graph is built for one forward pass and then discarded.
template <std::floating_point T>
class Graph {
 public:
  using Grads = std::vector<Tensor<T>>;
  using BackFn = std::function<void(const Tensor<T>& gout, Grads& grads)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  // ---------------------------------------------------------------- leaves

  /// Leaf that aliases an external tensor; the tensor must outlive the graph.
  Var leaf(std::string name, const Tensor<T>& value, bool requires_grad) {
    Node n;
    n.op = "leaf";
    n.external = &value;
    n.name = std::move(name);
    n.leaf = true;
    n.needs_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
  }

  Var leaf_owned(std::string name, Tensor<T> value, bool requires_grad) {
    Node n;
    n.op = "leaf";
    n.owned = std::move(value);
    n.name = std::move(name);
    n.leaf = true;
    n.needs_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
  }

  Var constant(Tensor<T> value) {
    Node n;
    n.op = "const";
    n.owned = std::move(value);
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
  }

  const Tensor<T>& value(Var v) const { return node(v).value(); }
  bool needs_grad(Var v) const { return node(v).needs_grad; }
  std::size_t size() const noexcept { return nodes_.size(); }
  std::string_view op_name(std::size_t id) const { return nodes_.at(id).op; }

  // ------------------------------------------------------------- elementwise

  Var add(Var a, Var b) {
    same_shape(a, b, "add");
    Tensor<T> out = value(a);
    const auto& bv = value(b).data;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
    return push("add", std::move(out), {a, b}, [this, a, b](const Tensor<T>& g, Grads& gr) {
      if (auto* ga = slot(gr, a)) axpy(*ga, g, T{1});
      if (auto* gb = slot(gr, b)) axpy(*gb, g, T{1});
    });
  }

  Var sub(Var a, Var b) {
    same_shape(a, b, "sub");
    Tensor<T> out = value(a);
    const auto& bv = value(b).data;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
    return push("sub", std::move(out), {a, b}, [this, a, b](const Tensor<T>& g, Grads& gr) {
      if (auto* ga = slot(gr, a)) axpy(*ga, g, T{1});
      if (auto* gb = slot(gr, b)) axpy(*gb, g, T{-1});
    });
  }

  Var mul(Var a, Var b) {
    same_shape(a, b, "mul");
    Tensor<T> out = value(a);
    const auto& bv = value(b).data;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
    return push("mul", std::move(out), {a, b}, [this, a, b](const Tensor<T>& g, Grads& gr) {
      const auto& av = value(a).data;
      const auto& bv = value(b).data;
      if (auto* ga = slot(gr, a))
        for (std::size_t i = 0; i < g.size(); ++i) ga->data[i] += g[i] * bv[i];
      if (auto* gb = slot(gr, b))
        for (std::size_t i = 0; i < g.size(); ++i) gb->data[i] += g[i] * av[i];
    });
  }

  Var scale(Var a, T s) {
    Tensor<T> out = value(a);
    for (auto& x : out.data) x *= s;
    return push("scale", std::move(out), {a}, [this, a, s](const Tensor<T>& g, Grads& gr) {
      if (auto* ga = slot(gr, a)) axpy(*ga, g, s);
    });
  }

  Var square(Var a) {
    Tensor<T> out = value(a);
    for (auto& x : out.data) x *= x;
    return push("square", std::move(out), {a}, [this, a](const Tensor<T>& g, Grads& gr) {
      const auto& av = value(a).data;
      if (auto* ga = slot(gr, a))
        for (std::size_t i = 0; i < g.size(); ++i) ga->data[i] += T{2} * av[i] * g[i];
    });
  }

  /// tanh-approximated GELU.
  Var gelu(Var a) {
    Tensor<T> out = value(a);
    for (auto& x : out.data) x = gelu_value(x);
    return push("gelu", std::move(out), {a}, [this, a](const Tensor<T>& g, Grads& gr) {
      const auto& av = value(a).data;
      if (auto* ga = slot(gr, a))
        for (std::size_t i = 0; i < g.size(); ++i) ga->data[i] += g[i] * gelu_grad(av[i]);
    });
  }

  /// log σ(x), evaluated as min(x, 0) − log1p(exp(−|x|)).
  Var log_sigmoid(Var a) {
    Tensor<T> out = value(a);
    for (auto& x : out.data) x = std::min(x, T{0}) - std::log1p(std::exp(-std::abs(x)));
    return push("log_sigmoid", std::move(out), {a}, [this, a](const Tensor<T>& g, Grads& gr) {
      const auto& av = value(a).data;
      if (auto* ga = slot(gr, a))
        for (std::size_t i = 0; i < g.size(); ++i) {
          // d/dx log σ(x) = σ(−x)
          const T x = av[i];
          const T s = x >= 0 ? std::exp(-x) / (T{1} + std::exp(-x)) : T{1} / (T{1} + std::exp(x));
          ga->data[i] += g[i] * s;
        }
    });
  }

  // -------------------------------------------------------------- reductions

  Var sum(Var a) {
    T s{0};
    for (T x : value(a).data) s += x;
    return push("sum", Tensor<T>::scalar(s), {a}, [this, a](const Tensor<T>& g, Grads& gr) {
      if (auto* ga = slot(gr, a))
        for (auto& x : ga->data) x += g[0];
    });
  }

  /// [n, d] -> [n]
  Var row_sum(Var a) {
    const auto& av = value(a);
    require(av.rank() == 2, "row_sum expects a matrix");
    const std::size_t n = av.rows(), d = av.cols();
    Tensor<T> out({n});
    for (std::size_t r = 0; r < n; ++r) {
      T s{0};
      for (std::size_t c = 0; c < d; ++c) s += av.data[r * d + c];
      out[r] = s;
    }
    return push("row_sum", std::move(out), {a}, [this, a, n, d](const Tensor<T>& g, Grads& gr) {
      if (auto* ga = slot(gr, a))
        for (std::size_t r = 0; r < n; ++r)
          for (std::size_t c = 0; c < d; ++c) ga->data[r * d + c] += g[r];
    });
  }

  /// Sums consecutive runs of a length-n vector; lengths must add up to n.
  Var segment_sum(Var a, std::vector<std::size_t> lengths) {
    const auto& av = value(a);
    require(av.rank() == 1, "segment_sum expects a vector");
    require(std::accumulate(lengths.begin(), lengths.end(), std::size_t{0}) == av.size(),
            "segment_sum lengths do not cover the input");
    Tensor<T> out({lengths.size()});
    std::size_t pos = 0;
    for (std::size_t s = 0; s < lengths.size(); ++s)
      for (std::size_t i = 0; i < lengths[s]; ++i) out[s] += av[pos++];
    return push("segment_sum", std::move(out), {a},
                [this, a, lengths = std::move(lengths)](const Tensor<T>& g, Grads& gr) {
                  if (auto* ga = slot(gr, a)) {
                    std::size_t pos = 0;
                    for (std::size_t s = 0; s < lengths.size(); ++s)
                      for (std::size_t i = 0; i < lengths[s]; ++i) ga->data[pos++] += g[s];
                  }
                });
  }

  // ------------------------------------------------------------ linear algebra

  /// [m, k] x [k, n] -> [m, n]
  Var matmul(Var a, Var b) {
    const auto& av = value(a);
    const auto& bv = value(b);
    require(av.rank() == 2 && bv.rank() == 2 && av.shape[1] == bv.shape[0],
            "matmul shape mismatch " + shape_str(av.shape) + " x " + shape_str(bv.shape));
    const std::size_t m = av.shape[0], k = av.shape[1], n = bv.shape[1];
    Tensor<T> out({m, n});
    map(out, m, n).noalias() = cmap(av, m, k) * cmap(bv, k, n);
    return push("matmul", std::move(out), {a, b}, [this, a, b, m, k, n](const Tensor<T>& g, Grads& gr) {
      const auto gm = cmap(g, m, n);
      if (auto* ga = slot(gr, a)) map(*ga, m, k).noalias() += gm * cmap(value(b), k, n).transpose();
      if (auto* gb = slot(gr, b)) map(*gb, k, n).noalias() += cmap(value(a), m, k).transpose() * gm;
    });
  }

  /// Row lookup: table [V, d], ids -> [len(ids), d].
  Var embed(Var table, std::vector<int> ids) {
    const auto& tv = value(table);
    require(tv.rank() == 2, "embed expects a [V, d] table");
    const std::size_t vocab = tv.shape[0], d = tv.shape[1];
    Tensor<T> out({ids.size(), d});
    for (std::size_t i = 0; i < ids.size(); ++i) {
      require(ids[i] >= 0 && static_cast<std::size_t>(ids[i]) < vocab,
              "token id " + std::to_string(ids[i]) + " out of range for vocabulary " + std::to_string(vocab));
      std::copy_n(tv.data.begin() + static_cast<std::ptrdiff_t>(ids[i] * d), d,
                  out.data.begin() + static_cast<std::ptrdiff_t>(i * d));
    }
    return push("embed", std::move(out), {table}, [this, table, ids = std::move(ids), d](const Tensor<T>& g, Grads& gr) {
      if (auto* gt = slot(gr, table))
        for (std::size_t i = 0; i < ids.size(); ++i)
          for (std::size_t c = 0; c < d; ++c) gt->data[ids[i] * d + c] += g[i * d + c];
    });
  }

  /// Row-wise RMS normalization with a learned gain: x / rms(x) * gain.
  Var rmsnorm(Var x, Var gain, T eps = T{1e-5}) {
    const auto& xv = value(x);
    const auto& gv = value(gain);
    require(xv.rank() == 2 && gv.size() == xv.cols(), "rmsnorm shape mismatch");
    const std::size_t n = xv.rows(), d = xv.cols();
    Tensor<T> out({n, d});
    std::vector<T> inv(n);
    for (std::size_t r = 0; r < n; ++r) {
      T ss{0};
      for (std::size_t c = 0; c < d; ++c) ss += xv.data[r * d + c] * xv.data[r * d + c];
      inv[r] = T{1} / std::sqrt(ss / static_cast<T>(d) + eps);
      for (std::size_t c = 0; c < d; ++c) out.data[r * d + c] = xv.data[r * d + c] * inv[r] * gv.data[c];
    }
    return push("rmsnorm", std::move(out), {x, gain},
                [this, x, gain, n, d, inv = std::move(inv)](const Tensor<T>& g, Grads& gr) {
                  const auto& xv = value(x).data;
                  const auto& gv = value(gain).data;
                  auto* gx = slot(gr, x);
                  auto* gg = slot(gr, gain);
                  for (std::size_t r = 0; r < n; ++r) {
                    const T* xr = xv.data() + r * d;
                    const T* gor = g.data.data() + r * d;
                    T dot{0};
                    for (std::size_t c = 0; c < d; ++c) {
                      const T xhat = xr[c] * inv[r];
                      if (gg) gg->data[c] += gor[c] * xhat;
                      dot += gor[c] * gv[c] * xhat;
                    }
                    if (gx) {
                      const T mean = dot / static_cast<T>(d);
                      for (std::size_t c = 0; c < d; ++c) {
                        const T xhat = xr[c] * inv[r];
                        gx->data[r * d + c] += inv[r] * (gor[c] * gv[c] - xhat * mean);
                      }
                    }
                  }
                });
  }

  /// Multi-head causal self-attention over packed sequences.
  /// qkv is [n, 3d] with the q, k, v blocks side by side; `lengths` splits the
  /// n rows into independent sequences, each attending only within itself and
  /// only to positions at or before its own.
  Var causal_attention(Var qkv, std::vector<std::size_t> lengths, std::size_t n_heads) {
    const auto& in = value(qkv);
    require(in.rank() == 2 && in.cols() % 3 == 0, "attention expects [n, 3d]");
    const std::size_t n = in.rows(), d = in.cols() / 3;
    require(n_heads >= 1 && d % n_heads == 0, "d_model must be divisible by n_heads");
    require(std::accumulate(lengths.begin(), lengths.end(), std::size_t{0}) == n,
            "attention segment lengths do not cover the input");
    const std::size_t hd = d / n_heads;
    const T scl = T{1} / std::sqrt(static_cast<T>(hd));
    const std::size_t w = 3 * d;

    // probs[seg][head] holds the lower-triangular attention matrix, row-major len x len.
    std::vector<std::vector<T>> probs;
    Tensor<T> out({n, d});
    std::size_t start = 0;
    for (std::size_t len : lengths) {
      for (std::size_t h = 0; h < n_heads; ++h) {
        std::vector<T> p(len * len, T{0});
        for (std::size_t i = 0; i < len; ++i) {
          const T* q = in.data.data() + (start + i) * w + h * hd;
          T mx = -std::numeric_limits<T>::infinity();
          for (std::size_t j = 0; j <= i; ++j) {
            const T* k = in.data.data() + (start + j) * w + d + h * hd;
            T s{0};
            for (std::size_t c = 0; c < hd; ++c) s += q[c] * k[c];
            p[i * len + j] = s * scl;
            mx = std::max(mx, p[i * len + j]);
          }
          T z{0};
          for (std::size_t j = 0; j <= i; ++j) {
            p[i * len + j] = std::exp(p[i * len + j] - mx);
            z += p[i * len + j];
          }
          T* o = out.data.data() + (start + i) * d + h * hd;
          for (std::size_t j = 0; j <= i; ++j) {
            p[i * len + j] /= z;
            const T* v = in.data.data() + (start + j) * w + 2 * d + h * hd;
            for (std::size_t c = 0; c < hd; ++c) o[c] += p[i * len + j] * v[c];
          }
        }
        probs.push_back(std::move(p));
      }
      start += len;
    }
    return push("causal_attention", std::move(out), {qkv},
                [this, qkv, lengths = std::move(lengths), probs = std::move(probs), n_heads, d, hd, scl,
                 w](const Tensor<T>& g, Grads& gr) {
                  auto* gin = slot(gr, qkv);
                  if (!gin) return;
                  const auto& in = value(qkv).data;
                  std::size_t start = 0, idx = 0;
                  std::vector<T> dp;
                  for (std::size_t len : lengths) {
                    for (std::size_t h = 0; h < n_heads; ++h, ++idx) {
                      const auto& p = probs[idx];
                      dp.assign(len, T{0});
                      for (std::size_t i = 0; i < len; ++i) {
                        const T* go = g.data.data() + (start + i) * d + h * hd;
                        T rowdot{0};
                        for (std::size_t j = 0; j <= i; ++j) {
                          const T* v = in.data() + (start + j) * w + 2 * d + h * hd;
                          T* gv = gin->data.data() + (start + j) * w + 2 * d + h * hd;
                          const T pij = p[i * len + j];
                          T s{0};
                          for (std::size_t c = 0; c < hd; ++c) {
                            s += go[c] * v[c];
                            gv[c] += pij * go[c];
                          }
                          dp[j] = s;
                          rowdot += pij * s;
                        }
                        const T* q = in.data() + (start + i) * w + h * hd;
                        T* gq = gin->data.data() + (start + i) * w + h * hd;
                        for (std::size_t j = 0; j <= i; ++j) {
                          const T ds = p[i * len + j] * (dp[j] - rowdot) * scl;
                          const T* k = in.data() + (start + j) * w + d + h * hd;
                          T* gk = gin->data.data() + (start + j) * w + d + h * hd;
                          for (std::size_t c = 0; c < hd; ++c) {
                            gq[c] += ds * k[c];
                            gk[c] += ds * q[c];
                          }
                        }
                      }
                    }
                    start += len;
                  }
                });
  }

  /// Row-wise log-softmax picked at a target column: logits [n, V] -> [n].
  /// A negative target yields 0 and no gradient for that row.
  Var token_logprobs(Var logits, std::vector<int> targets) {
    const auto& lv = value(logits);
    require(lv.rank() == 2 && lv.rows() == targets.size(), "token_logprobs shape mismatch");
    const std::size_t n = lv.rows(), vocab = lv.cols();
    Tensor<T> out({n});
    std::vector<T> lse(n, T{0});
    for (std::size_t r = 0; r < n; ++r) {
      if (targets[r] < 0) continue;
      require(static_cast<std::size_t>(targets[r]) < vocab, "target id out of range");
      const T* row = lv.data.data() + r * vocab;
      const T mx = *std::max_element(row, row + vocab);
      T z{0};
      for (std::size_t c = 0; c < vocab; ++c) z += std::exp(row[c] - mx);
      lse[r] = mx + std::log(z);
      out[r] = row[targets[r]] - lse[r];
    }
    return push("token_logprobs", std::move(out), {logits},
                [this, logits, targets = std::move(targets), lse = std::move(lse), n, vocab](const Tensor<T>& g,
                                                                                            Grads& gr) {
                  auto* gl = slot(gr, logits);
                  if (!gl) return;
                  const auto& lv = value(logits).data;
                  for (std::size_t r = 0; r < n; ++r) {
                    if (targets[r] < 0 || g[r] == T{0}) continue;
                    for (std::size_t c = 0; c < vocab; ++c)
                      gl->data[r * vocab + c] -= g[r] * std::exp(lv[r * vocab + c] - lse[r]);
                    gl->data[r * vocab + targets[r]] += g[r];
                  }
                });
  }

  // ---------------------------------------------------------------- backward

  /// Reverse sweep from a scalar root. Returns d(root)/d(leaf) for every leaf
  /// created with requires_grad, keyed by leaf name (unreached leaves get
  /// zeros). The graph itself is left untouched.
  GradMap<T> backward(Var root) const {
    require(value(root).size() == 1,
            "backward requires a scalar root, got shape " + shape_str(value(root).shape));
    Grads grads(nodes_.size());
    grads[root.id] = Tensor<T>(value(root).shape, T{1});
    GradMap<T> result;
    for (std::size_t id = root.id + 1; id-- > 0;) {
      const Node& nd = nodes_[id];
      if (!nd.needs_grad) continue;
      if (nd.leaf) {
        Tensor<T> g = grads[id].size() ? std::move(grads[id]) : Tensor<T>(nd.value().shape);
        check_finite(g, id);
        auto [it, inserted] = result.try_emplace(nd.name, std::move(g));
        if (!inserted) axpy(it->second, g, T{1});
        continue;
      }
      if (!grads[id].size()) continue;
      check_finite(grads[id], id);
      nd.backward(grads[id], grads);
      grads[id] = Tensor<T>{};
    }
    for (std::size_t id = 0; id < nodes_.size(); ++id)
      if (nodes_[id].leaf && nodes_[id].needs_grad && !result.count(nodes_[id].name))
        result.emplace(nodes_[id].name, Tensor<T>(nodes_[id].value().shape));
    return result;
  }

 private:
  struct Node {
    std::string_view op;
    Tensor<T> owned;
    const Tensor<T>* external = nullptr;
    std::string name;
    bool leaf = false;
    bool needs_grad = false;
    BackFn backward;
    const Tensor<T>& value() const { return external ? *external : owned; }
  };

  using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

  static Eigen::Map<RowMat> map(Tensor<T>& t, std::size_t r, std::size_t c) {
    return {t.data.data(), static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)};
  }
  static Eigen::Map<const RowMat> cmap(const Tensor<T>& t, std::size_t r, std::size_t c) {
    return {t.data.data(), static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)};
  }

  static T gelu_value(T x) {
    constexpr T k = T{0.7978845608028654};
    return T{0.5} * x * (T{1} + std::tanh(k * (x + T{0.044715} * x * x * x)));
  }
  static T gelu_grad(T x) {
    constexpr T k = T{0.7978845608028654};
    const T u = k * (x + T{0.044715} * x * x * x);
    const T th = std::tanh(u);
    const T du = k * (T{1} + T{3} * T{0.044715} * x * x);
    return T{0.5} * (T{1} + th) + T{0.5} * x * (T{1} - th * th) * du;
  }

  static void axpy(Tensor<T>& y, const Tensor<T>& x, T a) {
    for (std::size_t i = 0; i < y.size(); ++i) y.data[i] += a * x.data[i];
  }

  static void check_finite(const Tensor<T>& g, std::size_t id) {
    for (T x : g.data)
      if (!std::isfinite(x))
        throw NumericError("non-finite gradient at graph node " + std::to_string(id), id);
  }

  const Node& node(Var v) const {
    require(v.id < nodes_.size(), "invalid graph variable");
    return nodes_[v.id];
  }

  void same_shape(Var a, Var b, const char* op) const {
    require(value(a).shape == value(b).shape, std::string(op) + " shape mismatch " + shape_str(value(a).shape) +
                                                  " vs " + shape_str(value(b).shape));
  }

  /// Gradient accumulator for v, allocated on first use; null when v needs none.
  Tensor<T>* slot(Grads& grads, Var v) const {
    const Node& nd = nodes_[v.id];
    if (!nd.needs_grad) return nullptr;
    if (!grads[v.id].size()) grads[v.id] = Tensor<T>(nd.value().shape);
    return &grads[v.id];
  }

  Var push(std::string_view op, Tensor<T> value, std::initializer_list<Var> parents, BackFn fn) {
    Node n;
    n.op = op;
    n.owned = std::move(value);
    for (Var p : parents) n.needs_grad = n.needs_grad || nodes_[p.id].needs_grad;
    if (n.needs_grad) n.backward = std::move(fn);
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
  }

  std::vector<Node> nodes_;
};

}  // namespace ulab::num
