#pragma once

// Central finite-difference gradient checking. Intended for 64-bit graphs;
// finite differences are too noisy in 32-bit to be a useful oracle.

#include <functional>

#include "advaug/tensor.hpp"

namespace advaug {

// forward must rebuild the graph on the given tape from the current parameter
// values and return a scalar loss. Returns the max relative error per
// parameter, with relative error |a - n| / max(1, |a|, |n|).
template <class T>
std::vector<T> grad_check(
    const std::function<Tensor<T>(Tape<T>&)>& forward,
    const std::vector<Tensor<T>>& params, T step) {
  auto eval = [&]() {
    Tape<T> tape;
    return forward(tape)[0];
  };
  const T v0 = eval();
  const T v1 = eval();
  if (v0 != v1)
    throw Error("grad_check: forward is not deterministic (" +
                std::to_string(double(v0)) + " vs " + std::to_string(double(v1)) + ")");

  for (const Tensor<T>& p : params) p.node()->grad.clear();
  Tape<T> tape;
  Tensor<T> loss = forward(tape);
  tape.backward(loss);

  std::vector<T> max_err(params.size(), T(0));
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor<T> p = params[pi];
    std::vector<T> analytic =
        p.has_grad() ? p.grad() : std::vector<T>(p.size(), T(0));
    for (std::size_t i = 0; i < p.size(); ++i) {
      const T saved = p[i];
      p[i] = saved + step;
      const T fp = eval();
      p[i] = saved - step;
      const T fm = eval();
      p[i] = saved;
      const T numeric = (fp - fm) / (T(2) * step);
      const T a = analytic[i];
      const T denom = std::max(T(1), std::max(std::abs(a), std::abs(numeric)));
      max_err[pi] = std::max(max_err[pi], std::abs(a - numeric) / denom);
    }
  }
  return max_err;
}

}  // namespace advaug
