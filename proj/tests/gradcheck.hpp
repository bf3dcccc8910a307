#pragma once

// Central finite-difference gradient oracle. The forward function is generic
// over the scalar type: analytic gradients are taken at T, while the
// difference quotients are evaluated at double so the oracle itself does not
// drown in f32 roundoff. Step size stays pinned to the precision under test.

#include <algorithm>
#include <cmath>
#include <vector>

#include "tacvit/rng.hpp"
#include "tacvit/tensor.hpp"

namespace tacvit::testing {

template <typename T>
Tensor<T> random_tensor(Rng& rng, Shape shape, bool requires_grad = true, double amp = 1.0) {
  auto t = Tensor<T>::zeros(std::move(shape), requires_grad);
  for (auto& v : t.mutable_value()) v = T(rng.uniform(-amp, amp));
  return t;
}

struct GradCheckResult {
  double max_rel_err = 0;
  int checked = 0;
};

// forward(tape, inputs) must rebuild the graph from the current input values
// and return a scalar loss. Inputs with requires_grad=false participate in the
// forward pass but are not perturbed.
template <typename T, typename F>
GradCheckResult check_gradients(F&& forward, std::vector<Tensor<T>> inputs, Rng& rng,
                                int samples_per_input = 8) {
  const double base_h = sizeof(T) == 4 ? 1e-3 : 1e-6;

  for (auto& in : inputs) in.clear_grad();
  Tape<T> tape;
  Tensor<T> loss = forward(tape, inputs);
  tape.backward(loss);
  std::vector<std::vector<T>> analytic;
  for (auto& in : inputs)
    analytic.push_back(in.has_grad() ? in.grad() : std::vector<T>(in.value().size(), T{0}));

  std::vector<Tensor<double>> shadow;
  for (auto& in : inputs) {
    std::vector<double> v(in.value().begin(), in.value().end());
    shadow.emplace_back(in.shape(), std::move(v), false);
  }
  auto eval = [&]() {
    Tape<double> t;
    return forward(t, shadow).item();
  };

  GradCheckResult res;
  for (size_t i = 0; i < inputs.size(); ++i) {
    if (!inputs[i].requires_grad()) continue;
    const int64_t n = inputs[i].numel();
    const int count = int(std::min<int64_t>(samples_per_input, n));
    for (int s = 0; s < count; ++s) {
      const int64_t j = n <= samples_per_input ? s : int64_t(rng.next_below(uint64_t(n)));
      double& x = shadow[i].mutable_value()[size_t(j)];
      const double orig = x;
      const double h = base_h * std::max(1.0, std::abs(orig));
      x = orig + h;
      const double fp = eval();
      x = orig - h;
      const double fm = eval();
      x = orig;
      const double fd = (fp - fm) / (2 * h);
      const double an = double(analytic[i][size_t(j)]);
      // below the floor, |fd - an| is compared absolutely against floor*tol
      const double floor = sizeof(T) == 4 ? 1e-2 : 1e-4;
      const double denom = std::max({std::abs(fd), std::abs(an), floor});
      res.max_rel_err = std::max(res.max_rel_err, std::abs(fd - an) / denom);
      ++res.checked;
    }
  }
  return res;
}

}  // namespace tacvit::testing
