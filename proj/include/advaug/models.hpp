#pragma once

// The four networks: mask generator (U-Net), assistant generator,
// patch discriminator, and binary classifier.

#include <cmath>

#include "advaug/layers.hpp"
#include "advaug/optim.hpp"

namespace advaug {

template <class T>
struct ForwardCtx {
  Tape<T>* tape = nullptr;
  bool training = false;      // batchnorm uses batch statistics
  bool update_stats = false;  // batchnorm running stats move
};

template <class T>
struct StateEntry {
  std::string name;
  Shape shape;
  std::vector<T>* data;
};

namespace detail {

template <class T>
struct ConvLayer {
  ParamPtr<T> w, b;
  std::size_t stride = 1, pad = 0;

  Tensor<T> forward(const Tensor<T>& x, const ForwardCtx<T>& ctx) const {
    return conv2d(x, w->value, b->value, stride, pad, ctx.tape);
  }
};

template <class T>
struct BatchNormLayer {
  ParamPtr<T> gamma, beta;
  BatchNormState<T> state;

  Tensor<T> forward(const Tensor<T>& x, const ForwardCtx<T>& ctx) {
    return batchnorm(x, gamma->value, beta->value, state, ctx.training,
                     ctx.update_stats, T(0.9), T(1e-5), ctx.tape);
  }
};

template <class T>
ConvLayer<T> make_conv(ParamStore<T>& store, const std::string& name,
                       std::size_t in_ch, std::size_t out_ch, std::size_t k,
                       std::size_t stride, std::size_t pad, T slope,
                       std::uint64_t seed) {
  ConvLayer<T> l;
  const std::size_t fan_in = in_ch * k * k;
  l.w = store.add(name + "/w",
                  he_init<T>({out_ch, in_ch, k, k}, fan_in, slope,
                             mix_seed(seed, std::hash<std::string>{}(name))));
  l.b = store.add(name + "/b", Tensor<T>::zeros({out_ch}));
  l.stride = stride;
  l.pad = pad;
  return l;
}

template <class T>
BatchNormLayer<T> make_bn(ParamStore<T>& store, const std::string& name,
                          std::size_t ch) {
  BatchNormLayer<T> l;
  l.gamma = store.add(name + "/gamma", Tensor<T>::ones({ch}));
  l.beta = store.add(name + "/beta", Tensor<T>::zeros({ch}));
  l.state.running_mean.assign(ch, T(0));
  l.state.running_var.assign(ch, T(1));
  return l;
}

template <class T>
void append_param_entries(const ParamStore<T>& store,
                          std::vector<StateEntry<T>>& out) {
  for (const auto& p : store.items())
    out.push_back({p->name, p->value.shape(), &p->value.data()});
}

template <class T>
void append_bn_entries(const std::string& name, BatchNormLayer<T>& bn,
                       std::vector<StateEntry<T>>& out) {
  const Shape s = {bn.state.running_mean.size()};
  out.push_back({name + "/running_mean", s, &bn.state.running_mean});
  out.push_back({name + "/running_var", s, &bn.state.running_var});
}

}  // namespace detail

inline std::size_t unet_depth(std::size_t image_size) {
  switch (image_size) {
    case 32: return 3;
    case 64: return 4;
    case 128: return 5;
    default:
      throw Error("unsupported image size " + std::to_string(image_size) +
                  " (allowed: 32, 64, 128)");
  }
}

template <class T>
struct GeneratorOutput {
  Tensor<T> mask;       // every element in (0, 2)
  Tensor<T> generated;  // input * mask, elementwise
};

// U-Net that emits a per-channel multiplicative mask, 2*sigmoid(logits).
// The 1x1 head starts at zero so a fresh generator is the identity map.
template <class T>
class Generator {
 public:
  Generator(std::size_t image_size, std::uint64_t seed,
            std::size_t base_channels = 32, bool use_batchnorm = true)
      : image_size_(image_size),
        depth_(unet_depth(image_size)),
        base_(base_channels),
        use_bn_(use_batchnorm) {
    const std::size_t cap = base_ * 8;
    std::size_t in_ch = 3;
    for (std::size_t i = 0; i < depth_; ++i) {
      const std::size_t ch = std::min(base_ << i, cap);
      const std::string name = "enc" + std::to_string(i + 1);
      enc_.push_back(detail::make_conv(store_, name + "/conv", in_ch, ch, 3, 1,
                                       1, T(0.2), mix_seed(seed, i)));
      if (use_bn_) enc_bn_.push_back(detail::make_bn(store_, name + "/bn", ch));
      channels_.push_back(ch);
      in_ch = ch;
    }
    bottleneck_ = detail::make_conv(store_, "bottleneck/conv", in_ch, in_ch, 3,
                                    1, 1, T(0.2), mix_seed(seed, 100));
    if (use_bn_) bottleneck_bn_ = detail::make_bn(store_, "bottleneck/bn", in_ch);
    for (std::size_t i = depth_; i-- > 0;) {
      const std::size_t ch = channels_[i];
      const std::string name = "dec" + std::to_string(i + 1);
      dec_up_.push_back(detail::make_conv(store_, name + "/conv1", in_ch, ch, 3,
                                          1, 1, T(0.2), mix_seed(seed, 200 + i)));
      dec_merge_.push_back(detail::make_conv(store_, name + "/conv2", 2 * ch,
                                             ch, 3, 1, 1, T(0.2),
                                             mix_seed(seed, 300 + i)));
      if (use_bn_) {
        dec_bn1_.push_back(detail::make_bn(store_, name + "/bn1", ch));
        dec_bn2_.push_back(detail::make_bn(store_, name + "/bn2", ch));
      }
      in_ch = ch;
    }
    head_.w = store_.add("head/w", Tensor<T>::zeros({3, in_ch, 1, 1}));
    head_.b = store_.add("head/b", Tensor<T>::zeros({3}));
    head_.stride = 1;
    head_.pad = 0;
  }

  GeneratorOutput<T> forward(const Tensor<T>& x, const ForwardCtx<T>& ctx) {
    check_input(x);
    auto lrelu = [&](const Tensor<T>& t) {
      return activation(Activation::LeakyRelu, t, ctx.tape, T(0.2));
    };
    std::vector<Tensor<T>> skips;
    Tensor<T> h = x;
    for (std::size_t i = 0; i < depth_; ++i) {
      h = enc_[i].forward(h, ctx);
      if (use_bn_) h = enc_bn_[i].forward(h, ctx);
      h = lrelu(h);
      skips.push_back(h);
      h = maxpool2d(h, ctx.tape);
    }
    h = bottleneck_.forward(h, ctx);
    if (use_bn_) h = bottleneck_bn_.forward(h, ctx);
    h = lrelu(h);
    for (std::size_t j = 0; j < depth_; ++j) {
      const std::size_t level = depth_ - 1 - j;
      h = upsample_nearest2x(h, ctx.tape);
      h = dec_up_[j].forward(h, ctx);
      if (use_bn_) h = dec_bn1_[j].forward(h, ctx);
      h = lrelu(h);
      h = concat_channels(h, skips[level], ctx.tape);
      h = dec_merge_[j].forward(h, ctx);
      if (use_bn_) h = dec_bn2_[j].forward(h, ctx);
      h = lrelu(h);
    }
    Tensor<T> logits = head_.forward(h, ctx);
    GeneratorOutput<T> out;
    out.mask = scale(activation(Activation::Sigmoid, logits, ctx.tape), T(2),
                     ctx.tape);
    out.generated = mul(x, out.mask, ctx.tape);
    return out;
  }

  std::size_t image_size() const { return image_size_; }
  std::size_t depth() const { return depth_; }
  std::size_t base_channels() const { return base_; }
  bool use_batchnorm() const { return use_bn_; }
  const ParamStore<T>& params() const { return store_; }
  ParamPtr<T> head_bias() const { return head_.b; }

  std::vector<StateEntry<T>> state_entries() {
    std::vector<StateEntry<T>> out;
    detail::append_param_entries(store_, out);
    for (std::size_t i = 0; i < enc_bn_.size(); ++i)
      detail::append_bn_entries("enc" + std::to_string(i + 1) + "/bn",
                                enc_bn_[i], out);
    if (use_bn_) detail::append_bn_entries("bottleneck/bn", bottleneck_bn_, out);
    for (std::size_t j = 0; j < dec_bn1_.size(); ++j) {
      const std::string name = "dec" + std::to_string(depth_ - j);
      detail::append_bn_entries(name + "/bn1", dec_bn1_[j], out);
      detail::append_bn_entries(name + "/bn2", dec_bn2_[j], out);
    }
    return out;
  }

  // Byte-exact copy of all parameters and running statistics.
  void copy_state_from(Generator& other) {
    auto dst = state_entries();
    auto src = other.state_entries();
    if (dst.size() != src.size())
      throw Error("generator copy: mismatched architectures");
    for (std::size_t i = 0; i < dst.size(); ++i) {
      if (dst[i].name != src[i].name || dst[i].shape != src[i].shape)
        throw Error("generator copy: mismatch at " + dst[i].name);
      *dst[i].data = *src[i].data;
    }
  }

 private:
  void check_input(const Tensor<T>& x) const {
    if (x.ndim() != 4 || x.dim(1) != 3 || x.dim(2) != image_size_ ||
        x.dim(3) != image_size_)
      throw Error("generator: expected [N,3," + std::to_string(image_size_) +
                  "," + std::to_string(image_size_) + "], got " +
                  shape_str(x.shape()));
  }

  std::size_t image_size_, depth_, base_;
  bool use_bn_;
  ParamStore<T> store_;
  std::vector<detail::ConvLayer<T>> enc_;
  std::vector<detail::BatchNormLayer<T>> enc_bn_;
  detail::ConvLayer<T> bottleneck_;
  detail::BatchNormLayer<T> bottleneck_bn_;
  std::vector<detail::ConvLayer<T>> dec_up_, dec_merge_;
  std::vector<detail::BatchNormLayer<T>> dec_bn1_, dec_bn2_;
  detail::ConvLayer<T> head_;
  std::vector<std::size_t> channels_;
};

// Frozen copy of the generator's best-so-far weights.
template <class T>
struct AssistantGenerator {
  Generator<T> net;
  std::int64_t source_iteration = 0;

  AssistantGenerator(std::size_t image_size, std::uint64_t seed,
                     std::size_t base_channels, bool use_batchnorm)
      : net(image_size, seed, base_channels, use_batchnorm) {}
};

template <class T>
AssistantGenerator<T> snapshot_assistant(Generator<T>& g, std::int64_t iteration) {
  AssistantGenerator<T> a(g.image_size(), 0, g.base_channels(), g.use_batchnorm());
  a.net.copy_state_from(g);
  a.source_iteration = iteration;
  return a;
}

template <class T>
void snapshot_assistant_into(AssistantGenerator<T>& a, Generator<T>& g,
                             std::int64_t iteration) {
  a.net.copy_state_from(g);
  a.source_iteration = iteration;
}

// Three stride-2 4x4 conv blocks then a 1x1 conv to one channel.
// Linear patch output: [N, 1, size/8, size/8].
template <class T>
class Discriminator {
 public:
  Discriminator(std::size_t image_size, std::uint64_t seed,
                std::size_t base_channels = 64, bool use_batchnorm = true)
      : image_size_(image_size), use_bn_(use_batchnorm) {
    unet_depth(image_size);  // validates the size
    std::size_t in_ch = 3;
    for (std::size_t i = 0; i < 3; ++i) {
      const std::size_t ch = base_channels << i;
      const std::string name = "block" + std::to_string(i + 1);
      blocks_.push_back(detail::make_conv(store_, name + "/conv", in_ch, ch, 4,
                                          2, 1, T(0.2), mix_seed(seed, 400 + i)));
      // batchnorm on blocks 2-3 only
      if (use_bn_ && i > 0) bn_.push_back(detail::make_bn(store_, name + "/bn", ch));
      in_ch = ch;
    }
    head_ = detail::make_conv(store_, "head/conv", in_ch, 1, 1, 1, 0, T(0),
                              mix_seed(seed, 450));
  }

  Tensor<T> forward(const Tensor<T>& img, const ForwardCtx<T>& ctx) {
    if (img.ndim() != 4 || img.dim(1) != 3 || img.dim(2) != image_size_ ||
        img.dim(3) != image_size_)
      throw Error("discriminator: bad input shape " + shape_str(img.shape()));
    Tensor<T> h = img;
    std::size_t bn_idx = 0;
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
      h = blocks_[i].forward(h, ctx);
      if (use_bn_ && i > 0) h = bn_[bn_idx++].forward(h, ctx);
      h = activation(Activation::LeakyRelu, h, ctx.tape, T(0.2));
    }
    return head_.forward(h, ctx);  // no final activation
  }

  std::size_t patch_side() const { return image_size_ / 8; }
  const ParamStore<T>& params() const { return store_; }

  std::vector<StateEntry<T>> state_entries() {
    std::vector<StateEntry<T>> out;
    detail::append_param_entries(store_, out);
    for (std::size_t i = 0; i < bn_.size(); ++i)
      detail::append_bn_entries("block" + std::to_string(i + 2) + "/bn", bn_[i],
                                out);
    return out;
  }

 private:
  std::size_t image_size_;
  bool use_bn_;
  ParamStore<T> store_;
  std::vector<detail::ConvLayer<T>> blocks_;
  std::vector<detail::BatchNormLayer<T>> bn_;
  detail::ConvLayer<T> head_;
};

// Stride-2 3x3 conv stack down to 4x4, then dense->64->1 with sigmoid.
// One probability per sample; decision rule is prob >= 0.5.
template <class T>
class Classifier {
 public:
  Classifier(std::size_t image_size, std::uint64_t seed,
             std::size_t base_channels = 32)
      : image_size_(image_size) {
    unet_depth(image_size);
    std::size_t in_ch = 3, spatial = image_size, i = 0;
    while (spatial > 4) {
      const std::size_t ch = std::min(base_channels << i, base_channels * 4);
      blocks_.push_back(detail::make_conv(store_, "conv" + std::to_string(i + 1),
                                          in_ch, ch, 3, 2, 1, T(0),
                                          mix_seed(seed, 500 + i)));
      in_ch = ch;
      spatial /= 2;
      ++i;
    }
    flat_dim_ = in_ch * spatial * spatial;
    fc1_w_ = store_.add("fc1/w", he_init<T>({flat_dim_, 64}, flat_dim_, T(0),
                                            mix_seed(seed, 600)));
    fc1_b_ = store_.add("fc1/b", Tensor<T>::zeros({64}));
    fc2_w_ = store_.add("fc2/w", he_init<T>({64, 1}, 64, T(0), mix_seed(seed, 601)));
    fc2_b_ = store_.add("fc2/b", Tensor<T>::zeros({1}));
  }

  // Returns [N] probabilities in (0,1).
  Tensor<T> forward(const Tensor<T>& img, const ForwardCtx<T>& ctx) {
    if (img.ndim() != 4 || img.dim(1) != 3 || img.dim(2) != image_size_ ||
        img.dim(3) != image_size_)
      throw Error("classifier: bad input shape " + shape_str(img.shape()));
    Tensor<T> h = img;
    for (auto& blk : blocks_) {
      h = blk.forward(h, ctx);
      h = activation(Activation::Relu, h, ctx.tape);
    }
    h = reshape(h, {h.dim(0), flat_dim_}, ctx.tape);
    h = activation(Activation::Relu, dense(h, fc1_w_->value, fc1_b_->value, ctx.tape),
                   ctx.tape);
    h = dense(h, fc2_w_->value, fc2_b_->value, ctx.tape);
    h = activation(Activation::Sigmoid, h, ctx.tape);
    return reshape(h, {h.dim(0)}, ctx.tape);
  }

  std::size_t conv_count() const { return blocks_.size(); }
  const ParamStore<T>& params() const { return store_; }

  std::vector<StateEntry<T>> state_entries() {
    std::vector<StateEntry<T>> out;
    detail::append_param_entries(store_, out);
    return out;
  }

 private:
  std::size_t image_size_, flat_dim_ = 0;
  ParamStore<T> store_;
  std::vector<detail::ConvLayer<T>> blocks_;
  ParamPtr<T> fc1_w_, fc1_b_, fc2_w_, fc2_b_;
};

}  // namespace advaug
