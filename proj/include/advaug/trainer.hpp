#pragma once

// Alternating adversarial training: discriminator, generator (adversarial and
// classification targets, updated independently), classifier on tripled
// batches, with the assistant snapshot rule and metrics logging.

#include <functional>
#include <ostream>

#include "advaug/checkpoint.hpp"
#include "advaug/dataset.hpp"
#include "advaug/models.hpp"
#include "advaug/optim.hpp"

namespace advaug {

template <class T>
struct AdversarialTargets {
  T z_pos = T(0.8);
  T z_neg = T(0.2);
};

template <class T>
struct TrainConfig {
  std::size_t image_size = 32;
  std::size_t batch_size = 32;
  std::size_t iterations = 10000;
  std::size_t eval_interval = 20;
  std::uint64_t seed = 0;
  bool augmentation_enabled = true;
  bool assistant_enabled = true;
  // Generator-side adversarial loss: standard (1 - D(G(X)))^2 by default; the
  // literal published form D(G(X))^2 is available for comparison.
  bool literal_adv_sign = false;
  // Discriminator reals come from the validation pool by default; optionally
  // draw them from the training pool instead so validation stays untouched.
  bool d_reals_from_train = false;
  std::size_t gen_base = 32, disc_base = 64, cls_base = 32;
  bool use_batchnorm = true;
  AdversarialTargets<T> targets;
  AdamHyper<T> adam_g, adam_d, adam_c;
};

template <class T>
struct IterRecord {
  T loss_d = T(0), loss_g_adv = T(0), loss_g_cls = T(0), loss_c = T(0);
  bool has_val = false;
  T val_acc = T(0);
  T best_val_acc = T(0);
  bool snapshot = false;
};

template <class T>
struct TrainResult {
  std::vector<IterRecord<T>> records;                  // one per iteration
  std::vector<std::pair<std::size_t, T>> val_trace;    // (iteration, acc)
  std::vector<std::pair<std::size_t, T>> snapshot_log; // (iteration, acc)
  T best_val_acc = T(0);
  bool divergence_flag = false;
};

// FNV-1a over parameter bytes; used to verify frozen-weights contracts.
template <class T, class Net>
std::uint64_t param_hash(Net& net) {
  std::uint64_t h = 1469598103934665603ULL;
  for (const StateEntry<T>& e : net.state_entries())
    for (const T& v : *e.data) {
      const unsigned char* b = reinterpret_cast<const unsigned char*>(&v);
      for (std::size_t i = 0; i < sizeof(T); ++i) {
        h ^= b[i];
        h *= 1099511628211ULL;
      }
    }
  return h;
}

template <class T>
class Trainer {
 public:
  Trainer(const TrainConfig<T>& config, const Split<T>& data)
      : cfg_(config),
        data_(data),
        gen_(config.image_size, mix_seed(config.seed, 10), config.gen_base,
             config.use_batchnorm),
        disc_(config.image_size, mix_seed(config.seed, 11), config.disc_base,
              config.use_batchnorm),
        cls_(config.image_size, mix_seed(config.seed, 12), config.cls_base),
        assistant_(snapshot_assistant(gen_, 0)),
        rng_batch_(mix_seed(config.seed, 1)),
        rng_real_(mix_seed(config.seed, 2)) {
    if (config.batch_size % 2 != 0)
      throw Error("trainer: batch_size must be even");
    if (config.eval_interval < 1)
      throw Error("trainer: eval_interval must be >= 1");
    if (config.targets.z_neg <= T(0) || config.targets.z_neg >= T(0.5) ||
        config.targets.z_pos <= T(0.5) || config.targets.z_pos >= T(1))
      throw Error("trainer: adversarial targets must satisfy 0 < z_neg < 0.5 < z_pos < 1");
    if (data_.train.empty() || data_.validation.empty())
      throw Error("trainer: split has an empty part");
  }

  Generator<T>& generator() { return gen_; }
  Discriminator<T>& discriminator() { return disc_; }
  Classifier<T>& classifier() { return cls_; }
  AssistantGenerator<T>& assistant() { return assistant_; }
  std::size_t last_c_batch_samples() const { return last_c_samples_; }

  // Test hooks: scripted validation accuracies and a per-iteration observer.
  std::function<T(std::size_t eval_index)> validate_override;
  std::function<void(std::size_t iteration)> observer;

  // One Adam step on D: reals toward 1, detached fakes toward 0.
  T d_step(const Tensor<T>& real_x, const Tensor<T>& fake_x) {
    if (real_x.dim(0) != fake_x.dim(0))
      throw Error("d_step: real and fake halves must match in size");
    Tape<T> tape;
    ForwardCtx<T> ctx{&tape, true, true};
    auto d_real = disc_.forward(real_x, ctx);
    auto d_fake = disc_.forward(fake_x, ctx);
    auto loss = add(lsq_loss(d_real, Tensor<T>::ones(d_real.shape()), &tape),
                    lsq_loss(d_fake, Tensor<T>::zeros(d_fake.shape()), &tape),
                    &tape);
    const T value = loss[0];
    if (!std::isfinite(double(value))) return value;
    tape.backward(loss);
    adam_step(disc_.params().items(), cfg_.adam_d);
    return value;
  }

  // One Adam step on G against a frozen D.
  T g_adv_step(const Tensor<T>& batch_x) {
    Tape<T> tape;
    auto gen_out = gen_.forward(batch_x, ForwardCtx<T>{&tape, true, true});
    auto d_out = disc_.forward(gen_out.generated, ForwardCtx<T>{&tape, true, false});
    auto target = cfg_.literal_adv_sign ? Tensor<T>::zeros(d_out.shape())
                                        : Tensor<T>::ones(d_out.shape());
    auto loss = lsq_loss(d_out, target, &tape);
    const T value = loss[0];
    if (!std::isfinite(double(value))) return value;
    tape.backward(loss);
    adam_step(gen_.params().items(), cfg_.adam_g);
    disc_.params().zero_grad();  // D saw gradients but must not move
    return value;
  }

  // One Adam step on G toward the softened targets of a frozen C.
  T g_cls_step(const Tensor<T>& batch_x, const Tensor<T>& batch_y) {
    Tape<T> tape;
    auto gen_out = gen_.forward(batch_x, ForwardCtx<T>{&tape, true, true});
    auto probs = cls_.forward(gen_out.generated, ForwardCtx<T>{&tape, true, false});
    Tensor<T> z = Tensor<T>::zeros(batch_y.shape());
    for (std::size_t i = 0; i < z.size(); ++i)
      z[i] = batch_y[i] > T(0.5) ? cfg_.targets.z_pos : cfg_.targets.z_neg;
    auto loss = lsq_loss(probs, z, &tape);
    const T value = loss[0];
    if (!std::isfinite(double(value))) return value;
    tape.backward(loss);
    adam_step(gen_.params().items(), cfg_.adam_g);
    cls_.params().zero_grad();
    return value;
  }

  // One Adam step on C over originals plus detached generated/assistant
  // images, all carrying the original hard labels.
  T c_step(const Batch<T>& originals, const Tensor<T>* generated,
           const Tensor<T>* assistant_out) {
    const std::size_t B = originals.x.dim(0);
    std::size_t copies = 1 + (generated ? 1 : 0) + (assistant_out ? 1 : 0);
    Tensor<T> x = Tensor<T>::zeros({B * copies, originals.x.dim(1),
                                    originals.x.dim(2), originals.x.dim(3)});
    Tensor<T> y = Tensor<T>::zeros({B * copies});
    const std::size_t img = originals.x.size() / B;
    std::size_t at = 0;
    for (const Tensor<T>* src : {&originals.x, generated, assistant_out}) {
      if (!src) continue;
      std::copy(src->data().begin(), src->data().end(),
                x.data().begin() + at * B * img);
      for (std::size_t i = 0; i < B; ++i) y[at * B + i] = originals.y[i];
      ++at;
    }
    last_c_samples_ = B * copies;
    Tape<T> tape;
    auto probs = cls_.forward(x, ForwardCtx<T>{&tape, true, true});
    auto loss = bce_loss(probs, y, &tape);
    const T value = loss[0];
    if (!std::isfinite(double(value))) return value;
    tape.backward(loss);
    adam_step(cls_.params().items(), cfg_.adam_c);
    return value;
  }

  // Accuracy over the validation set with the prob >= 0.5 decision rule.
  T validate() {
    const auto& val = data_.validation;
    if (val.empty()) throw Error("validate: empty validation set");
    const std::size_t chunk = 32;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < val.size(); start += chunk) {
      const std::size_t n = std::min(chunk, val.size() - start);
      Tensor<T> x = Tensor<T>::zeros({n, 3, cfg_.image_size, cfg_.image_size});
      const std::size_t img = 3 * cfg_.image_size * cfg_.image_size;
      for (std::size_t i = 0; i < n; ++i)
        std::copy(val[start + i].image.data().begin(),
                  val[start + i].image.data().end(), x.data().begin() + i * img);
      auto probs = cls_.forward(x, ForwardCtx<T>{nullptr, false, false});
      for (std::size_t i = 0; i < n; ++i)
        if ((probs[i] >= T(0.5)) == (val[start + i].label > T(0.5))) ++correct;
    }
    return T(correct) / T(val.size());
  }

  TrainResult<T> train() {
    TrainResult<T> result;
    result.records.reserve(cfg_.iterations);
    T best = T(0);
    std::size_t eval_index = 0;
    for (std::size_t iter = 1; iter <= cfg_.iterations; ++iter) {
      IterRecord<T> rec;
      Batch<T> batch = next_batch(data_, cfg_.batch_size, rng_batch_);
      if (cfg_.augmentation_enabled) {
        // frozen-value forwards: batch statistics, no running-stat updates
        auto gen_out = gen_.forward(batch.x, ForwardCtx<T>{nullptr, true, false});
        Tensor<T> assist;
        if (cfg_.assistant_enabled)
          assist = assistant_.net
                       .forward(batch.x, ForwardCtx<T>{nullptr, true, false})
                       .generated;
        Batch<T> reals = next_batch(data_, cfg_.batch_size, rng_real_,
                                    /*from_validation=*/!cfg_.d_reals_from_train);
        rec.loss_d = d_step(reals.x, gen_out.generated);
        rec.loss_g_adv = g_adv_step(batch.x);
        rec.loss_g_cls = g_cls_step(batch.x, batch.y);
        rec.loss_c = c_step(batch, &gen_out.generated,
                            cfg_.assistant_enabled ? &assist : nullptr);
      } else {
        rec.loss_c = c_step(batch, nullptr, nullptr);
      }
      if (!std::isfinite(double(rec.loss_d)) ||
          !std::isfinite(double(rec.loss_g_adv)) ||
          !std::isfinite(double(rec.loss_g_cls)) ||
          !std::isfinite(double(rec.loss_c))) {
        rec.best_val_acc = best;
        result.records.push_back(rec);
        result.divergence_flag = true;
        result.best_val_acc = best;
        return result;
      }
      if (iter % cfg_.eval_interval == 0) {
        const T acc = validate_override ? validate_override(eval_index) : validate();
        ++eval_index;
        rec.has_val = true;
        rec.val_acc = acc;
        result.val_trace.emplace_back(iter, acc);
        if (acc > best) {
          best = acc;
          if (cfg_.augmentation_enabled && cfg_.assistant_enabled) {
            snapshot_assistant_into(assistant_, gen_, std::int64_t(iter));
            result.snapshot_log.emplace_back(iter, acc);
            rec.snapshot = true;
          }
        }
      }
      rec.best_val_acc = best;
      result.records.push_back(rec);
      if (observer) observer(iter);
    }
    result.best_val_acc = best;
    return result;
  }

 private:
  TrainConfig<T> cfg_;
  const Split<T>& data_;
  Generator<T> gen_;
  Discriminator<T> disc_;
  Classifier<T> cls_;
  AssistantGenerator<T> assistant_;
  std::mt19937_64 rng_batch_, rng_real_;
  std::size_t last_c_samples_ = 0;
};

template <class T>
void write_metrics_csv(std::ostream& os, const TrainResult<T>& result) {
  os << "iteration,loss_d,loss_g_adv,loss_g_cls,loss_c,val_acc,best_val_acc,snapshot\n";
  char line[256];
  for (std::size_t i = 0; i < result.records.size(); ++i) {
    const IterRecord<T>& r = result.records[i];
    if (r.has_val)
      std::snprintf(line, sizeof(line), "%zu,%.6g,%.6g,%.6g,%.6g,%.6g,%.6g,%d\n",
                    i + 1, double(r.loss_d), double(r.loss_g_adv),
                    double(r.loss_g_cls), double(r.loss_c), double(r.val_acc),
                    double(r.best_val_acc), r.snapshot ? 1 : 0);
    else
      std::snprintf(line, sizeof(line), "%zu,%.6g,%.6g,%.6g,%.6g,,%.6g,%d\n",
                    i + 1, double(r.loss_d), double(r.loss_g_adv),
                    double(r.loss_g_cls), double(r.loss_c),
                    double(r.best_val_acc), r.snapshot ? 1 : 0);
    os << line;
  }
}

}  // namespace advaug
