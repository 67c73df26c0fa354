#pragma once

#include <cmath>
#include <map>
#include <string>

#include "ulab/error.hpp"
#include "ulab/numcore/graph.hpp"
#include "ulab/numcore/tensor.hpp"

namespace ulab::num {

/// L2 norm of all gradient entries taken together, accumulated in double.
template <std::floating_point T>
double grad_l2_norm(const GradMap<T>& grads) {
  double ss = 0.0;
  for (const auto& [name, g] : grads)
    for (T x : g.data) ss += static_cast<double>(x) * static_cast<double>(x);
  return std::sqrt(ss);
}

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <std::floating_point T>
struct AdamState {
  long step = 0;
  std::map<std::string, Tensor<T>> m;
  std::map<std::string, Tensor<T>> v;
};

/// One bias-corrected Adam update. `params` is any name -> Tensor map; every
/// gradient must name an existing parameter of the same shape. Parameters
/// without a gradient are left alone.
template <std::floating_point T>
void adam_step(std::map<std::string, Tensor<T>>& params, const GradMap<T>& grads, AdamState<T>& state, double lr,
               const AdamHyper& h = {}) {
  for (const auto& [name, g] : grads) {
    auto it = params.find(name);
    require(it != params.end(), "gradient for unknown parameter '" + name + "'");
    require(it->second.shape == g.shape, "gradient shape mismatch for '" + name + "': " + shape_str(g.shape) +
                                             " vs " + shape_str(it->second.shape));
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(h.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(h.beta2, static_cast<double>(state.step));
  for (const auto& [name, g] : grads) {
    auto& p = params.at(name);
    auto& m = state.m.try_emplace(name, Tensor<T>(p.shape)).first->second;
    auto& v = state.v.try_emplace(name, Tensor<T>(p.shape)).first->second;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = g.data[i];
      const double mi = h.beta1 * m.data[i] + (1.0 - h.beta1) * gi;
      const double vi = h.beta2 * v.data[i] + (1.0 - h.beta2) * gi * gi;
      m.data[i] = static_cast<T>(mi);
      v.data[i] = static_cast<T>(vi);
      const double update = lr * (mi / c1) / (std::sqrt(vi / c2) + h.eps);
      p.data[i] = static_cast<T>(p.data[i] - update);
    }
  }
}

}  // namespace ulab::num
