#pragma once

// Differentiable layers and losses. conv2d and dense route their inner
// products through gemm (im2col for conv); everything else is plain loops.

#include <cstring>
#include <limits>

#include "advaug/blas.hpp"
#include "advaug/tensor.hpp"

namespace advaug {

namespace detail {

// col is [C*kh*kw, oh*ow] for one image, row index c*kh*kw + ki*kw + kj.
template <class T>
void im2col(const T* img, std::size_t C, std::size_t H, std::size_t W,
            std::size_t kh, std::size_t kw, std::size_t stride,
            std::size_t pad, std::size_t oh, std::size_t ow, T* col) {
  const std::size_t ocols = oh * ow;
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t ki = 0; ki < kh; ++ki) {
      for (std::size_t kj = 0; kj < kw; ++kj) {
        T* row = col + ((c * kh + ki) * kw + kj) * ocols;
        for (std::size_t oy = 0; oy < oh; ++oy) {
          const std::ptrdiff_t iy = std::ptrdiff_t(oy * stride + ki) - std::ptrdiff_t(pad);
          if (iy < 0 || iy >= std::ptrdiff_t(H)) {
            std::memset(row + oy * ow, 0, ow * sizeof(T));
            continue;
          }
          const T* src = img + (c * H + std::size_t(iy)) * W;
          for (std::size_t ox = 0; ox < ow; ++ox) {
            const std::ptrdiff_t ix = std::ptrdiff_t(ox * stride + kj) - std::ptrdiff_t(pad);
            row[oy * ow + ox] =
                (ix < 0 || ix >= std::ptrdiff_t(W)) ? T(0) : src[ix];
          }
        }
      }
    }
  }
}

template <class T>
void col2im_accum(const T* col, std::size_t C, std::size_t H, std::size_t W,
                  std::size_t kh, std::size_t kw, std::size_t stride,
                  std::size_t pad, std::size_t oh, std::size_t ow, T* img) {
  const std::size_t ocols = oh * ow;
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t ki = 0; ki < kh; ++ki) {
      for (std::size_t kj = 0; kj < kw; ++kj) {
        const T* row = col + ((c * kh + ki) * kw + kj) * ocols;
        for (std::size_t oy = 0; oy < oh; ++oy) {
          const std::ptrdiff_t iy = std::ptrdiff_t(oy * stride + ki) - std::ptrdiff_t(pad);
          if (iy < 0 || iy >= std::ptrdiff_t(H)) continue;
          T* dst = img + (c * H + std::size_t(iy)) * W;
          for (std::size_t ox = 0; ox < ow; ++ox) {
            const std::ptrdiff_t ix = std::ptrdiff_t(ox * stride + kj) - std::ptrdiff_t(pad);
            if (ix >= 0 && ix < std::ptrdiff_t(W)) dst[ix] += row[oy * ow + ox];
          }
        }
      }
    }
  }
}

}  // namespace detail

// Cross-correlation convention, zero padding.
// input [N,C,H,W], weight [F,C,kh,kw], bias [F] -> [N,F,H',W'].
template <class T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight,
                 const Tensor<T>& bias, std::size_t stride, std::size_t pad,
                 Tape<T>* tape = nullptr) {
  if (input.ndim() != 4 || weight.ndim() != 4)
    throw Error("conv2d: expected 4-d input and weight");
  const std::size_t N = input.dim(0), C = input.dim(1), H = input.dim(2),
                    W = input.dim(3);
  const std::size_t F = weight.dim(0), kh = weight.dim(2), kw = weight.dim(3);
  if (weight.dim(1) != C)
    throw Error("conv2d: weight channels " + std::to_string(weight.dim(1)) +
                " do not match input channels " + std::to_string(C));
  if (bias.ndim() != 1 || bias.dim(0) != F)
    throw Error("conv2d: bias must have shape [F]");
  if (H + 2 * pad < kh || W + 2 * pad < kw)
    throw Error("conv2d: kernel larger than padded input");
  const std::size_t oh = (H + 2 * pad - kh) / stride + 1;
  const std::size_t ow = (W + 2 * pad - kw) / stride + 1;

  Tensor<T> out = Tensor<T>::zeros({N, F, oh, ow});
  const std::size_t ckk = C * kh * kw;
  const std::size_t ocols = oh * ow;
  std::vector<T> col(ckk * ocols);
  for (std::size_t n = 0; n < N; ++n) {
    detail::im2col(input.data().data() + n * C * H * W, C, H, W, kh, kw,
                   stride, pad, oh, ow, col.data());
    // out[n] = weight[F,ckk] * col[ckk,ocols]
    detail::gemm(false, false, int(F), int(ocols), int(ckk), T(1),
                 weight.data().data(), int(ckk), col.data(), int(ocols), T(0),
                 out.data().data() + n * F * ocols, int(ocols));
    T* on = out.data().data() + n * F * ocols;
    for (std::size_t f = 0; f < F; ++f) {
      const T b = bias[f];
      for (std::size_t i = 0; i < ocols; ++i) on[f * ocols + i] += b;
    }
  }

  if (detail::grad_flows(tape, {&input, &weight, &bias})) {
    out.set_requires_grad(true);
    auto in_n = input.node();
    auto w_n = weight.node();
    auto b_n = bias.node();
    auto o_n = out.node();
    tape->record([in_n, w_n, b_n, o_n, N, C, H, W, F, kh, kw, stride, pad, oh, ow]() {
      const std::size_t ckk = C * kh * kw;
      const std::size_t ocols = oh * ow;
      std::vector<T> col(ckk * ocols);
      std::vector<T> gcol(ckk * ocols);
      if (in_n->requires_grad) in_n->ensure_grad();
      if (w_n->requires_grad) w_n->ensure_grad();
      if (b_n->requires_grad) b_n->ensure_grad();
      for (std::size_t n = 0; n < N; ++n) {
        const T* go = o_n->grad.data() + n * F * ocols;
        if (w_n->requires_grad || in_n->requires_grad)
          detail::im2col(in_n->value.data() + n * C * H * W, C, H, W, kh, kw,
                         stride, pad, oh, ow, col.data());
        if (w_n->requires_grad)
          // grad_w += go[F,ocols] * col^T[ocols,ckk]
          detail::gemm(false, true, int(F), int(ckk), int(ocols), T(1), go,
                       int(ocols), col.data(), int(ocols), T(1),
                       w_n->grad.data(), int(ckk));
        if (in_n->requires_grad) {
          // grad_col = w^T[ckk,F] * go[F,ocols]
          detail::gemm(true, false, int(ckk), int(ocols), int(F), T(1),
                       w_n->value.data(), int(ckk), go, int(ocols), T(0),
                       gcol.data(), int(ocols));
          detail::col2im_accum(gcol.data(), C, H, W, kh, kw, stride, pad, oh,
                               ow, in_n->grad.data() + n * C * H * W);
        }
        if (b_n->requires_grad) {
          for (std::size_t f = 0; f < F; ++f) {
            T s = 0;
            for (std::size_t i = 0; i < ocols; ++i) s += go[f * ocols + i];
            b_n->grad[f] += s;
          }
        }
      }
    });
  }
  return out;
}

// 2x2 window max, stride 2. Ties route the gradient to the first element in
// row-major window order.
template <class T>
Tensor<T> maxpool2d(const Tensor<T>& input, Tape<T>* tape = nullptr) {
  if (input.ndim() != 4) throw Error("maxpool2d: expected 4-d input");
  const std::size_t N = input.dim(0), C = input.dim(1), H = input.dim(2),
                    W = input.dim(3);
  if (H % 2 != 0 || W % 2 != 0)
    throw Error("maxpool2d: odd spatial extent " + shape_str(input.shape()));
  const std::size_t oh = H / 2, ow = W / 2;
  Tensor<T> out = Tensor<T>::zeros({N, C, oh, ow});
  auto argmax = std::make_shared<std::vector<std::size_t>>(out.size());
  const T* pi = input.data().data();
  for (std::size_t nc = 0; nc < N * C; ++nc) {
    const T* plane = pi + nc * H * W;
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        std::size_t best = (2 * oy) * W + 2 * ox;
        T bv = plane[best];
        const std::size_t cand[3] = {(2 * oy) * W + 2 * ox + 1,
                                     (2 * oy + 1) * W + 2 * ox,
                                     (2 * oy + 1) * W + 2 * ox + 1};
        for (std::size_t idx : cand) {
          if (plane[idx] > bv) {
            bv = plane[idx];
            best = idx;
          }
        }
        const std::size_t oidx = nc * oh * ow + oy * ow + ox;
        out[oidx] = bv;
        (*argmax)[oidx] = nc * H * W + best;
      }
    }
  }

  if (detail::grad_flows(tape, {&input})) {
    out.set_requires_grad(true);
    auto in_n = input.node();
    auto o_n = out.node();
    tape->record([in_n, o_n, argmax]() {
      in_n->ensure_grad();
      for (std::size_t i = 0; i < o_n->grad.size(); ++i)
        in_n->grad[(*argmax)[i]] += o_n->grad[i];
    });
  }
  return out;
}

// Nearest-neighbor 2x upsample; backward sums each 2x2 block.
template <class T>
Tensor<T> upsample_nearest2x(const Tensor<T>& input, Tape<T>* tape = nullptr) {
  if (input.ndim() != 4) throw Error("upsample_nearest2x: expected 4-d input");
  const std::size_t N = input.dim(0), C = input.dim(1), H = input.dim(2),
                    W = input.dim(3);
  Tensor<T> out = Tensor<T>::zeros({N, C, 2 * H, 2 * W});
  for (std::size_t nc = 0; nc < N * C; ++nc) {
    const T* src = input.data().data() + nc * H * W;
    T* dst = out.data().data() + nc * 4 * H * W;
    for (std::size_t y = 0; y < H; ++y) {
      for (std::size_t x = 0; x < W; ++x) {
        const T v = src[y * W + x];
        dst[(2 * y) * 2 * W + 2 * x] = v;
        dst[(2 * y) * 2 * W + 2 * x + 1] = v;
        dst[(2 * y + 1) * 2 * W + 2 * x] = v;
        dst[(2 * y + 1) * 2 * W + 2 * x + 1] = v;
      }
    }
  }
  if (detail::grad_flows(tape, {&input})) {
    out.set_requires_grad(true);
    auto in_n = input.node();
    auto o_n = out.node();
    tape->record([in_n, o_n, N, C, H, W]() {
      in_n->ensure_grad();
      for (std::size_t nc = 0; nc < N * C; ++nc) {
        const T* g = o_n->grad.data() + nc * 4 * H * W;
        T* gi = in_n->grad.data() + nc * H * W;
        for (std::size_t y = 0; y < H; ++y)
          for (std::size_t x = 0; x < W; ++x)
            gi[y * W + x] += g[(2 * y) * 2 * W + 2 * x] +
                             g[(2 * y) * 2 * W + 2 * x + 1] +
                             g[(2 * y + 1) * 2 * W + 2 * x] +
                             g[(2 * y + 1) * 2 * W + 2 * x + 1];
      }
    });
  }
  return out;
}

// input [N,d] * weight [d,e] + bias [e] broadcast per row.
template <class T>
Tensor<T> dense(const Tensor<T>& input, const Tensor<T>& weight,
                const Tensor<T>& bias, Tape<T>* tape = nullptr) {
  Tensor<T> prod = matmul(input, weight, tape);
  return add(prod, bias, tape);
}

enum class Activation { Relu, LeakyRelu, Sigmoid, Tanh };

template <class T>
Tensor<T> activation(Activation kind, const Tensor<T>& input,
                     Tape<T>* tape = nullptr, T leaky_slope = T(0.2)) {
  Tensor<T> out = Tensor<T>::zeros(input.shape());
  const std::size_t n = input.size();
  for (std::size_t i = 0; i < n; ++i) {
    const T x = input[i];
    switch (kind) {
      case Activation::Relu:
        out[i] = x > T(0) ? x : T(0);
        break;
      case Activation::LeakyRelu:
        out[i] = x > T(0) ? x : leaky_slope * x;
        break;
      case Activation::Sigmoid: {
        // input clamp keeps log-loss finite; the epsilon clamp keeps the
        // output strictly inside (0,1) even where float rounds to 1
        T c = std::clamp(x, T(-30), T(30));
        constexpr T eps = std::numeric_limits<T>::epsilon();
        out[i] = std::clamp(T(1) / (T(1) + std::exp(-c)), eps, T(1) - eps);
        break;
      }
      case Activation::Tanh:
        out[i] = std::tanh(x);
        break;
    }
  }
  if (detail::grad_flows(tape, {&input})) {
    out.set_requires_grad(true);
    auto in_n = input.node();
    auto o_n = out.node();
    tape->record([in_n, o_n, kind, leaky_slope, n]() {
      in_n->ensure_grad();
      for (std::size_t i = 0; i < n; ++i) {
        const T x = in_n->value[i];
        const T y = o_n->value[i];
        T d = 0;
        switch (kind) {
          case Activation::Relu:
            d = x > T(0) ? T(1) : T(0);
            break;
          case Activation::LeakyRelu:
            d = x > T(0) ? T(1) : leaky_slope;
            break;
          case Activation::Sigmoid:
            d = (x > T(-30) && x < T(30)) ? y * (T(1) - y) : T(0);
            break;
          case Activation::Tanh:
            d = T(1) - y * y;
            break;
        }
        in_n->grad[i] += d * o_n->grad[i];
      }
    });
  }
  return out;
}

template <class T>
struct BatchNormState {
  std::vector<T> running_mean;
  std::vector<T> running_var;
};

// Per-channel batch normalization over [N,C,H,W]. Training mode normalizes by
// batch statistics; update_running controls whether running stats move (a
// frozen network keeps batch-stat normalization without mutating state).
template <class T>
Tensor<T> batchnorm(const Tensor<T>& input, const Tensor<T>& gamma,
                    const Tensor<T>& beta, BatchNormState<T>& state,
                    bool training, bool update_running = true,
                    T momentum = T(0.9), T eps = T(1e-5),
                    Tape<T>* tape = nullptr) {
  if (input.ndim() != 4) throw Error("batchnorm: expected 4-d input");
  const std::size_t N = input.dim(0), C = input.dim(1), H = input.dim(2),
                    W = input.dim(3);
  if (gamma.size() != C || beta.size() != C)
    throw Error("batchnorm: gamma/beta must have shape [C]");
  if (state.running_mean.size() != C) {
    state.running_mean.assign(C, T(0));
    state.running_var.assign(C, T(1));
  }
  const std::size_t m = N * H * W;
  if (training && m < 2) throw Error("batchnorm: batch too small in train mode");

  auto mean = std::make_shared<std::vector<T>>(C, T(0));
  auto var = std::make_shared<std::vector<T>>(C, T(0));
  if (training) {
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t c = 0; c < C; ++c) {
        const T* p = input.data().data() + (n * C + c) * H * W;
        T s = 0;
        for (std::size_t i = 0; i < H * W; ++i) s += p[i];
        (*mean)[c] += s;
      }
    for (std::size_t c = 0; c < C; ++c) (*mean)[c] /= T(m);
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t c = 0; c < C; ++c) {
        const T* p = input.data().data() + (n * C + c) * H * W;
        T s = 0;
        for (std::size_t i = 0; i < H * W; ++i) {
          const T d = p[i] - (*mean)[c];
          s += d * d;
        }
        (*var)[c] += s;
      }
    for (std::size_t c = 0; c < C; ++c) (*var)[c] /= T(m);
    if (update_running) {
      for (std::size_t c = 0; c < C; ++c) {
        state.running_mean[c] = momentum * state.running_mean[c] + (T(1) - momentum) * (*mean)[c];
        state.running_var[c] = momentum * state.running_var[c] + (T(1) - momentum) * (*var)[c];
      }
    }
  } else {
    *mean = state.running_mean;
    *var = state.running_var;
  }

  auto inv_std = std::make_shared<std::vector<T>>(C);
  for (std::size_t c = 0; c < C; ++c)
    (*inv_std)[c] = T(1) / std::sqrt((*var)[c] + eps);

  Tensor<T> out = Tensor<T>::zeros(input.shape());
  auto xhat = std::make_shared<std::vector<T>>(input.size());
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < C; ++c) {
      const T* p = input.data().data() + (n * C + c) * H * W;
      T* q = out.data().data() + (n * C + c) * H * W;
      T* xh = xhat->data() + (n * C + c) * H * W;
      for (std::size_t i = 0; i < H * W; ++i) {
        xh[i] = (p[i] - (*mean)[c]) * (*inv_std)[c];
        q[i] = gamma[c] * xh[i] + beta[c];
      }
    }

  if (detail::grad_flows(tape, {&input, &gamma, &beta})) {
    out.set_requires_grad(true);
    auto in_n = input.node();
    auto g_n = gamma.node();
    auto b_n = beta.node();
    auto o_n = out.node();
    tape->record([in_n, g_n, b_n, o_n, xhat, inv_std, training, N, C, H, W]() {
      const std::size_t hw = H * W;
      const std::size_t m = N * hw;
      std::vector<T> sum_dy(C, T(0)), sum_dy_xhat(C, T(0));
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t c = 0; c < C; ++c) {
          const T* dy = o_n->grad.data() + (n * C + c) * hw;
          const T* xh = xhat->data() + (n * C + c) * hw;
          for (std::size_t i = 0; i < hw; ++i) {
            sum_dy[c] += dy[i];
            sum_dy_xhat[c] += dy[i] * xh[i];
          }
        }
      if (g_n->requires_grad) {
        g_n->ensure_grad();
        for (std::size_t c = 0; c < C; ++c) g_n->grad[c] += sum_dy_xhat[c];
      }
      if (b_n->requires_grad) {
        b_n->ensure_grad();
        for (std::size_t c = 0; c < C; ++c) b_n->grad[c] += sum_dy[c];
      }
      if (in_n->requires_grad) {
        in_n->ensure_grad();
        for (std::size_t n = 0; n < N; ++n)
          for (std::size_t c = 0; c < C; ++c) {
            const T* dy = o_n->grad.data() + (n * C + c) * hw;
            const T* xh = xhat->data() + (n * C + c) * hw;
            T* dx = in_n->grad.data() + (n * C + c) * hw;
            const T g = g_n->value[c] * (*inv_std)[c];
            if (training) {
              for (std::size_t i = 0; i < hw; ++i)
                dx[i] += g * (dy[i] - sum_dy[c] / T(m) -
                              xh[i] * sum_dy_xhat[c] / T(m));
            } else {
              for (std::size_t i = 0; i < hw; ++i) dx[i] += g * dy[i];
            }
          }
      }
    });
  }
  return out;
}

// Channel stacking a-then-b; backward splits the gradient.
template <class T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b,
                          Tape<T>* tape = nullptr) {
  if (a.ndim() != 4 || b.ndim() != 4 || a.dim(0) != b.dim(0) ||
      a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3))
    throw Error("concat_channels: mismatched shapes " + shape_str(a.shape()) +
                " vs " + shape_str(b.shape()));
  const std::size_t N = a.dim(0), Ca = a.dim(1), Cb = b.dim(1), H = a.dim(2),
                    W = a.dim(3);
  const std::size_t hw = H * W;
  Tensor<T> out = Tensor<T>::zeros({N, Ca + Cb, H, W});
  for (std::size_t n = 0; n < N; ++n) {
    std::memcpy(out.data().data() + n * (Ca + Cb) * hw,
                a.data().data() + n * Ca * hw, Ca * hw * sizeof(T));
    std::memcpy(out.data().data() + (n * (Ca + Cb) + Ca) * hw,
                b.data().data() + n * Cb * hw, Cb * hw * sizeof(T));
  }
  if (detail::grad_flows(tape, {&a, &b})) {
    out.set_requires_grad(true);
    auto a_n = a.node();
    auto b_n = b.node();
    auto o_n = out.node();
    tape->record([a_n, b_n, o_n, N, Ca, Cb, hw]() {
      for (std::size_t n = 0; n < N; ++n) {
        const T* g = o_n->grad.data() + n * (Ca + Cb) * hw;
        if (a_n->requires_grad) {
          a_n->ensure_grad();
          T* ga = a_n->grad.data() + n * Ca * hw;
          for (std::size_t i = 0; i < Ca * hw; ++i) ga[i] += g[i];
        }
        if (b_n->requires_grad) {
          b_n->ensure_grad();
          T* gb = b_n->grad.data() + n * Cb * hw;
          for (std::size_t i = 0; i < Cb * hw; ++i) gb[i] += g[Ca * hw + i];
        }
      }
    });
  }
  return out;
}

// Mean over all elements of -y log p - (1-y) log(1-p).
// pred must be strictly inside (0,1); the clamped sigmoid guarantees that.
template <class T>
Tensor<T> bce_loss(const Tensor<T>& pred, const Tensor<T>& target,
                   Tape<T>* tape = nullptr) {
  if (pred.shape() != target.shape())
    throw Error("bce_loss: shape mismatch " + shape_str(pred.shape()) + " vs " +
                shape_str(target.shape()));
  const std::size_t n = pred.size();
  T acc = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const T p = pred[i], y = target[i];
    acc += -y * std::log(p) - (T(1) - y) * std::log(T(1) - p);
  }
  Tensor<T> out = Tensor<T>::from({1}, {acc / T(n)});
  if (detail::grad_flows(tape, {&pred})) {
    out.set_requires_grad(true);
    auto p_n = pred.node();
    auto t_n = target.node();
    auto o_n = out.node();
    tape->record([p_n, t_n, o_n, n]() {
      p_n->ensure_grad();
      const T g = o_n->grad[0] / T(n);
      for (std::size_t i = 0; i < n; ++i) {
        const T p = p_n->value[i], y = t_n->value[i];
        p_n->grad[i] += g * (-y / p + (T(1) - y) / (T(1) - p));
      }
    });
  }
  return out;
}

// Mean of squared differences.
template <class T>
Tensor<T> lsq_loss(const Tensor<T>& pred, const Tensor<T>& target,
                   Tape<T>* tape = nullptr) {
  if (pred.shape() != target.shape())
    throw Error("lsq_loss: shape mismatch " + shape_str(pred.shape()) + " vs " +
                shape_str(target.shape()));
  const std::size_t n = pred.size();
  T acc = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const T d = pred[i] - target[i];
    acc += d * d;
  }
  Tensor<T> out = Tensor<T>::from({1}, {acc / T(n)});
  if (detail::grad_flows(tape, {&pred, &target})) {
    out.set_requires_grad(true);
    auto p_n = pred.node();
    auto t_n = target.node();
    auto o_n = out.node();
    tape->record([p_n, t_n, o_n, n]() {
      const T g = o_n->grad[0] * T(2) / T(n);
      if (p_n->requires_grad) {
        p_n->ensure_grad();
        for (std::size_t i = 0; i < n; ++i)
          p_n->grad[i] += g * (p_n->value[i] - t_n->value[i]);
      }
      if (t_n->requires_grad) {
        t_n->ensure_grad();
        for (std::size_t i = 0; i < n; ++i)
          t_n->grad[i] -= g * (p_n->value[i] - t_n->value[i]);
      }
    });
  }
  return out;
}

// Seeded normal with std = sqrt(2 / ((1 + slope^2) * fan_in)).
template <class T>
Tensor<T> he_init(Shape shape, std::size_t fan_in, T negative_slope,
                  std::uint64_t seed) {
  if (fan_in < 1) throw Error("he_init: fan_in must be >= 1");
  const T stddev =
      std::sqrt(T(2) / ((T(1) + negative_slope * negative_slope) * T(fan_in)));
  return Tensor<T>::randn(std::move(shape), T(0), stddev, seed);
}

}  // namespace advaug
