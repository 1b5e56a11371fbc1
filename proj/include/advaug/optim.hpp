#pragma once

// Named parameters and the Adam optimizer.

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "advaug/tensor.hpp"

namespace advaug {

template <class T>
struct Param {
  std::string name;
  Tensor<T> value;        // requires_grad
  std::vector<T> adam_m;  // first moment
  std::vector<T> adam_v;  // second moment
  std::int64_t adam_t = 0;

  Param(std::string n, Tensor<T> v) : name(std::move(n)), value(std::move(v)) {
    value.set_requires_grad(true);
    adam_m.assign(value.size(), T(0));
    adam_v.assign(value.size(), T(0));
  }
};

template <class T>
using ParamPtr = std::shared_ptr<Param<T>>;

template <class T>
class ParamStore {
 public:
  ParamPtr<T> add(const std::string& name, Tensor<T> value) {
    if (index_.count(name)) throw Error("duplicate parameter name: " + name);
    auto p = std::make_shared<Param<T>>(name, std::move(value));
    index_[name] = items_.size();
    items_.push_back(p);
    return p;
  }

  const std::vector<ParamPtr<T>>& items() const { return items_; }

  ParamPtr<T> find(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw Error("no such parameter: " + name);
    return items_[it->second];
  }

  void zero_grad() const {
    for (const auto& p : items_) p->value.zero_grad();
  }

  std::size_t numel() const {
    std::size_t n = 0;
    for (const auto& p : items_) n += p->value.size();
    return n;
  }

 private:
  std::vector<ParamPtr<T>> items_;
  std::map<std::string, std::size_t> index_;
};

template <class T>
struct AdamHyper {
  T lr = T(2e-4);
  T beta1 = T(0.5);
  T beta2 = T(0.999);
  T eps = T(1e-8);
};

// Standard Adam with bias correction. Gradients are consumed (cleared).
template <class T>
void adam_step(const std::vector<ParamPtr<T>>& params, const AdamHyper<T>& hyper) {
  for (const auto& p : params)
    if (!p->value.has_grad())
      throw Error("adam_step: missing gradient on parameter " + p->name);
  for (const auto& p : params) {
    p->adam_t += 1;
    const T bc1 = T(1) - std::pow(hyper.beta1, T(p->adam_t));
    const T bc2 = T(1) - std::pow(hyper.beta2, T(p->adam_t));
    std::vector<T>& w = p->value.data();
    const std::vector<T>& g = p->value.grad();
    for (std::size_t i = 0; i < w.size(); ++i) {
      p->adam_m[i] = hyper.beta1 * p->adam_m[i] + (T(1) - hyper.beta1) * g[i];
      p->adam_v[i] = hyper.beta2 * p->adam_v[i] + (T(1) - hyper.beta2) * g[i] * g[i];
      const T mhat = p->adam_m[i] / bc1;
      const T vhat = p->adam_v[i] / bc2;
      w[i] -= hyper.lr * mhat / (std::sqrt(vhat) + hyper.eps);
    }
    p->value.zero_grad();
  }
}

}  // namespace advaug
