#pragma once

// N-dimensional tensors with reverse-mode automatic differentiation.
//
// Ops execute eagerly; when a Tape is supplied and gradient flow reaches the
// op, a backward closure is pushed onto the tape. Tape::backward replays the
// closures in reverse, which is a valid topological order by construction.
// A tape is consumed by backward; reuse is an error.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <sstream>
#include <utility>
#include <vector>

#include "advaug/common.hpp"

namespace advaug {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t e : s) n *= e;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

namespace detail {

template <class T>
struct TensorNode {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // empty until touched by backward
  bool requires_grad = false;

  void ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), T(0));
  }
};

}  // namespace detail

template <class T>
class Tensor {
 public:
  using Node = detail::TensorNode<T>;

  Tensor() = default;

  static Tensor zeros(Shape shape) { return filled(std::move(shape), T(0)); }
  static Tensor ones(Shape shape) { return filled(std::move(shape), T(1)); }

  static Tensor filled(Shape shape, T value) {
    check_shape(shape);
    Tensor t;
    t.node_ = std::make_shared<Node>();
    t.node_->shape = std::move(shape);
    t.node_->value.assign(shape_numel(t.node_->shape), value);
    return t;
  }

  static Tensor from(Shape shape, std::vector<T> values) {
    check_shape(shape);
    if (values.size() != shape_numel(shape))
      throw Error("tensor_new: " + std::to_string(values.size()) +
                  " values for shape " + shape_str(shape));
    Tensor t;
    t.node_ = std::make_shared<Node>();
    t.node_->shape = std::move(shape);
    t.node_->value = std::move(values);
    return t;
  }

  static Tensor randn(Shape shape, T mean, T stddev, std::uint64_t seed) {
    check_shape(shape);
    Tensor t = zeros(std::move(shape));
    NormalSampler sampler(seed);
    for (T& v : t.data()) v = T(sampler.next(double(mean), double(stddev)));
    return t;
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t ndim() const { return node_->shape.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape[i]; }
  std::size_t size() const { return node_->value.size(); }

  std::vector<T>& data() { return node_->value; }
  const std::vector<T>& data() const { return node_->value; }
  T& operator[](std::size_t i) { return node_->value[i]; }
  const T& operator[](std::size_t i) const { return node_->value[i]; }

  bool has_grad() const { return !node_->grad.empty(); }
  std::vector<T>& grad() {
    if (node_->grad.empty()) throw Error("tensor has no gradient");
    return node_->grad;
  }
  const std::vector<T>& grad() const {
    if (node_->grad.empty()) throw Error("tensor has no gradient");
    return node_->grad;
  }
  void zero_grad() { node_->grad.clear(); }

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool b) {
    node_->requires_grad = b;
    return *this;
  }

  // Value copy with gradient flow severed.
  Tensor detach() const {
    Tensor t;
    t.node_ = std::make_shared<Node>();
    t.node_->shape = node_->shape;
    t.node_->value = node_->value;
    return t;
  }

  Tensor clone() const {
    Tensor t = detach();
    t.node_->requires_grad = node_->requires_grad;
    return t;
  }

  bool same_node(const Tensor& other) const { return node_ == other.node_; }
  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  static void check_shape(const Shape& shape) {
    for (std::size_t e : shape)
      if (e == 0) throw Error("tensor_new: zero extent in shape " + shape_str(shape));
  }

  std::shared_ptr<Node> node_;
};

template <class T>
class Tape {
 public:
  void record(std::function<void()> backward_fn) {
    ops_.push_back(std::move(backward_fn));
  }

  // Seeds grad(loss)=1 and replays all recorded closures in reverse.
  void backward(const Tensor<T>& loss) {
    if (consumed_) throw Error("backward: tape already consumed");
    if (loss.size() != 1)
      throw Error("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
    consumed_ = true;
    loss.node()->ensure_grad();
    loss.node()->grad[0] += T(1);
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
  }

  bool consumed() const { return consumed_; }
  std::size_t size() const { return ops_.size(); }

 private:
  std::vector<std::function<void()>> ops_;
  bool consumed_ = false;
};

template <class T>
bool detect_nonfinite(const Tensor<T>& t) {
  for (const T& v : t.data())
    if (!std::isfinite(v)) return true;
  return false;
}

namespace detail {

template <class T>
bool grad_flows(Tape<T>* tape, std::initializer_list<const Tensor<T>*> inputs) {
  if (!tape) return false;
  for (const Tensor<T>* t : inputs)
    if ((*t).requires_grad()) return true;
  return false;
}

template <class T>
void accumulate(const std::shared_ptr<TensorNode<T>>& node, std::size_t i, T g) {
  node->grad[i] += g;
}

}  // namespace detail

enum class ElementwiseOp { Add, Sub, Mul };

// Shapes must match exactly, or b may be a length-C vector broadcast over
// a[*, C, spatial...] (axis 1). No other broadcast is supported.
template <class T>
Tensor<T> elementwise(ElementwiseOp op, const Tensor<T>& a, const Tensor<T>& b,
                      Tape<T>* tape = nullptr) {
  const bool same = a.shape() == b.shape();
  const bool channel_bcast = !same && b.ndim() == 1 && a.ndim() >= 2 &&
                             a.dim(1) == b.dim(0);
  if (!same && !channel_bcast)
    throw Error("elementwise: incompatible shapes " + shape_str(a.shape()) +
                " vs " + shape_str(b.shape()));

  Tensor<T> out = Tensor<T>::zeros(a.shape());
  const std::size_t n = a.size();
  const T* pa = a.data().data();
  const T* pb = b.data().data();
  T* po = out.data().data();

  std::size_t outer = 1, channels = 1, inner = 1;
  if (channel_bcast) {
    outer = a.dim(0);
    channels = a.dim(1);
    for (std::size_t i = 2; i < a.ndim(); ++i) inner *= a.dim(i);
  }

  auto bval = [&](std::size_t i) -> T {
    if (same) return pb[i];
    return pb[(i / inner) % channels];
  };

  switch (op) {
    case ElementwiseOp::Add:
      for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] + bval(i);
      break;
    case ElementwiseOp::Sub:
      for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] - bval(i);
      break;
    case ElementwiseOp::Mul:
      for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] * bval(i);
      break;
  }
  (void)outer;

  if (detail::grad_flows(tape, {&a, &b})) {
    out.set_requires_grad(true);
    auto an = a.node();
    auto bn = b.node();
    auto on = out.node();
    tape->record([op, an, bn, on, same, channels, inner, n]() {
      const std::vector<T>& go = on->grad;
      if (an->requires_grad) {
        an->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) {
          T g = go[i];
          if (op == ElementwiseOp::Mul)
            g *= same ? bn->value[i] : bn->value[(i / inner) % channels];
          an->grad[i] += g;
        }
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) {
          T g = go[i];
          if (op == ElementwiseOp::Sub) g = -g;
          if (op == ElementwiseOp::Mul) g = go[i] * an->value[i];
          std::size_t bi = same ? i : (i / inner) % channels;
          bn->grad[bi] += g;
        }
      }
    });
  }
  return out;
}

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b, Tape<T>* tape = nullptr) {
  return elementwise(ElementwiseOp::Add, a, b, tape);
}
template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b, Tape<T>* tape = nullptr) {
  return elementwise(ElementwiseOp::Sub, a, b, tape);
}
template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b, Tape<T>* tape = nullptr) {
  return elementwise(ElementwiseOp::Mul, a, b, tape);
}

template <class T>
Tensor<T> scale(const Tensor<T>& a, T c, Tape<T>* tape = nullptr) {
  Tensor<T> out = Tensor<T>::zeros(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * c;
  if (detail::grad_flows(tape, {&a})) {
    out.set_requires_grad(true);
    auto an = a.node();
    auto on = out.node();
    tape->record([an, on, c]() {
      an->ensure_grad();
      for (std::size_t i = 0; i < an->grad.size(); ++i) an->grad[i] += c * on->grad[i];
    });
  }
  return out;
}

// Mean over the given axes (empty = all axes). Backward spreads grad/count.
template <class T>
Tensor<T> reduce_mean(const Tensor<T>& t, std::vector<std::size_t> axes = {},
                      Tape<T>* tape = nullptr) {
  const Shape& s = t.shape();
  if (axes.empty()) {
    axes.resize(s.size());
    std::iota(axes.begin(), axes.end(), std::size_t(0));
  }
  std::sort(axes.begin(), axes.end());
  for (std::size_t i = 0; i < axes.size(); ++i) {
    if (axes[i] >= s.size())
      throw Error("reduce_mean: axis " + std::to_string(axes[i]) +
                  " out of range for shape " + shape_str(s));
    if (i > 0 && axes[i] == axes[i - 1]) throw Error("reduce_mean: duplicate axis");
  }

  std::vector<bool> reduced(s.size(), false);
  for (std::size_t a : axes) reduced[a] = true;
  Shape out_shape;
  std::size_t count = 1;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (reduced[i]) count *= s[i];
    else out_shape.push_back(s[i]);
  }
  if (out_shape.empty()) out_shape.push_back(1);

  // flat index -> output flat index
  std::vector<std::size_t> strides(s.size(), 1);
  for (std::size_t i = s.size(); i-- > 1;) strides[i - 1] = strides[i] * s[i];
  std::vector<std::size_t> out_strides;
  {
    std::size_t os = 1;
    std::vector<std::size_t> tmp;
    for (std::size_t i = s.size(); i-- > 0;) {
      if (!reduced[i]) {
        tmp.push_back(os);
        os *= s[i];
      } else {
        tmp.push_back(0);
      }
    }
    out_strides.assign(tmp.rbegin(), tmp.rend());
  }
  auto out_index = [dims = s, strides, out_strides](std::size_t flat) {
    std::size_t oi = 0;
    for (std::size_t d = 0; d < dims.size(); ++d) {
      std::size_t idx = (flat / strides[d]) % dims[d];
      oi += idx * out_strides[d];
    }
    return oi;
  };

  Tensor<T> out = Tensor<T>::zeros(out_shape);
  for (std::size_t i = 0; i < t.size(); ++i) out[out_index(i)] += t[i];
  for (T& v : out.data()) v /= T(count);

  if (detail::grad_flows(tape, {&t})) {
    out.set_requires_grad(true);
    auto tn = t.node();
    auto on = out.node();
    std::size_t n = t.size();
    tape->record([tn, on, out_index, count, n]() {
      tn->ensure_grad();
      for (std::size_t i = 0; i < n; ++i)
        tn->grad[i] += on->grad[out_index(i)] / T(count);
    });
  }
  return out;
}

// Copying reshape; element count must be preserved.
template <class T>
Tensor<T> reshape(const Tensor<T>& t, Shape new_shape, Tape<T>* tape = nullptr) {
  if (shape_numel(new_shape) != t.size())
    throw Error("reshape: cannot view " + shape_str(t.shape()) + " as " +
                shape_str(new_shape));
  Tensor<T> out = Tensor<T>::from(std::move(new_shape), t.data());
  if (detail::grad_flows(tape, {&t})) {
    out.set_requires_grad(true);
    auto tn = t.node();
    auto on = out.node();
    tape->record([tn, on]() {
      tn->ensure_grad();
      for (std::size_t i = 0; i < tn->grad.size(); ++i) tn->grad[i] += on->grad[i];
    });
  }
  return out;
}

template <class T>
Tensor<T> reduce_sum(const Tensor<T>& t, Tape<T>* tape = nullptr) {
  Tensor<T> m = reduce_mean(t, {}, tape);
  return scale(m, T(t.size()), tape);
}

}  // namespace advaug
