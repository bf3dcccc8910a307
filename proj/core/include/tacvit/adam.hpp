#pragma once

#include "tacvit/tensor.hpp"

namespace tacvit {

struct AdamHyper {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  bool decoupled_wd = true;  // subtract lr*wd*theta instead of folding into the gradient
};

template <typename T>
struct AdamState {
  std::vector<T> m, v;
  int64_t t = 0;
  AdamHyper hp;

  explicit AdamState(AdamHyper hp_ = {}) : hp(hp_) {}
};

// One bias-corrected Adam update in place; consumes and clears param.grad.
template <typename T>
void adam_step(Tensor<T>& param, AdamState<T>& state) {
  if (!param.has_grad()) throw UsageError("adam_step: parameter has no gradient");
  const size_t n = param.value().size();
  if (state.m.empty()) {
    state.m.assign(n, T{0});
    state.v.assign(n, T{0});
  }
  if (state.m.size() != n) throw UsageError("adam_step: state size does not match parameter");
  state.t += 1;
  const T b1 = T(state.hp.beta1), b2 = T(state.hp.beta2);
  const T lr = T(state.hp.lr), eps = T(state.hp.eps), wd = T(state.hp.weight_decay);
  const T bc1 = T{1} - std::pow(b1, T(state.t));
  const T bc2 = T{1} - std::pow(b2, T(state.t));
  auto& p = param.mutable_value();
  const auto& g0 = param.grad();
  for (size_t i = 0; i < n; ++i) {
    T g = g0[i];
    if (!state.hp.decoupled_wd && wd != T{0}) g += wd * p[i];
    state.m[i] = b1 * state.m[i] + (T{1} - b1) * g;
    state.v[i] = b2 * state.v[i] + (T{1} - b2) * g * g;
    const T mhat = state.m[i] / bc1;
    const T vhat = state.v[i] / bc2;
    p[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    if (state.hp.decoupled_wd && wd != T{0}) p[i] -= lr * wd * p[i];
  }
  check_finite("adam_step", p);
  param.clear_grad();
}

}  // namespace tacvit
