#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "attacknet/dataset.hpp"
#include "attacknet/errors.hpp"
#include "attacknet/layers.hpp"
#include "attacknet/model.hpp"
#include "attacknet/rng.hpp"
#include "attacknet/tensor.hpp"

namespace attacknet {

// ---------------------------------------------------------------------------
// Adam optimizer with per-parameter first/second moment state.
// ---------------------------------------------------------------------------

struct TrainConfig {
  std::int64_t epochs = 5;
  std::int64_t batch_size = 32;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  std::uint64_t seed = 0;
  bool shuffle = true;

  void validate() const {
    if (epochs < 0) {
      throw ConfigError("epochs must be >= 0, got " + std::to_string(epochs));
    }
    if (batch_size < 2) {
      throw ConfigError("batch_size must be >= 2 (batch norm), got " +
                        std::to_string(batch_size));
    }
    if (!(learning_rate > 0.0)) {
      throw ConfigError("learning_rate must be positive");
    }
    if (!(beta1 > 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0)) {
      throw ConfigError("Adam betas must lie in (0,1)");
    }
    if (!(adam_epsilon > 0.0)) {
      throw ConfigError("adam_epsilon must be positive");
    }
  }
};

struct AdamState {
  Tensor m;
  Tensor v;
  std::int64_t t = 0;
};

inline AdamState make_adam_state(const Tensor& param) {
  return AdamState{Tensor(param.shape()), Tensor(param.shape()), 0};
}

// One Adam step, in place. Epsilon sits outside the square root:
//   param -= lr * m_hat / (sqrt(v_hat) + eps)
inline void adam_update(Tensor& param, const Tensor& grad, AdamState& state,
                        const TrainConfig& config) {
  if (!param.same_shape(grad) || !param.same_shape(state.m) ||
      !param.same_shape(state.v)) {
    throw ShapeError("adam_update shape mismatch for param " +
                     param.shape_string());
  }
  for (std::int64_t i = 0; i < grad.size(); ++i) {
    if (!std::isfinite(grad[i])) {
      throw NumericError("non-finite gradient in adam_update at flat index " +
                         std::to_string(i));
    }
  }
  state.t += 1;
  const double b1t = 1.0 - std::pow(config.beta1, static_cast<double>(state.t));
  const double b2t = 1.0 - std::pow(config.beta2, static_cast<double>(state.t));
  for (std::int64_t i = 0; i < param.size(); ++i) {
    state.m[i] = config.beta1 * state.m[i] + (1.0 - config.beta1) * grad[i];
    state.v[i] =
        config.beta2 * state.v[i] + (1.0 - config.beta2) * grad[i] * grad[i];
    const double m_hat = state.m[i] / b1t;
    const double v_hat = state.v[i] / b2t;
    param[i] -= config.learning_rate * m_hat /
                (std::sqrt(v_hat) + config.adam_epsilon);
  }
}

// ---------------------------------------------------------------------------
// Training loop.
// ---------------------------------------------------------------------------

struct EpochStats {
  std::int64_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  std::optional<double> holdout_loss;
  std::optional<double> holdout_accuracy;
};

using TrainHistory = std::vector<EpochStats>;

struct TrainResult {
  ModelWeights weights;
  TrainHistory history;
};

struct LossAccuracy {
  double loss = 0.0;
  double accuracy = 0.0;
};

namespace detail {

// Bonafide iff p(bonafide) > 0.5; ties resolve to attacker (fail safe).
inline std::uint8_t predicted_class(double bonafide_prob) {
  return bonafide_prob > 0.5 ? kBonafideLabel : kAttackerLabel;
}

}  // namespace detail

// Inference-mode loss and accuracy over a whole dataset, in fixed chunks.
inline LossAccuracy evaluate_loss_accuracy(const ModelWeights& w,
                                           const Dataset& data,
                                           std::int64_t chunk = 64) {
  data.validate();
  double loss_sum = 0.0;
  std::int64_t correct = 0;
  for (std::int64_t start = 0; start < data.count(); start += chunk) {
    const std::int64_t n = std::min(chunk, data.count() - start);
    ForwardResult r = forward_batch(w, data.batch_tensor(start, n), Mode::infer);
    std::span<const std::uint8_t> labels(data.labels.data() + start,
                                         static_cast<std::size_t>(n));
    loss_sum += cross_entropy_with_grad(r.probs, labels).loss *
                static_cast<double>(n);
    for (std::int64_t i = 0; i < n; ++i) {
      if (detail::predicted_class(r.probs(i, 0)) ==
          labels[static_cast<std::size_t>(i)]) {
        ++correct;
      }
    }
  }
  return LossAccuracy{loss_sum / static_cast<double>(data.count()),
                      static_cast<double>(correct) /
                          static_cast<double>(data.count())};
}

using EpochCallback = std::function<void(const EpochStats&)>;

// Runs the full loop: per epoch a seeded permutation, mini-batches (a final
// batch of one is dropped; batch norm cannot standardize it), train-mode
// forward, cross-entropy, backward, and one Adam step per trainable tensor.
// Batch-norm running statistics are committed after every batch. The whole
// trajectory is a deterministic function of (init, data, config).
inline TrainResult train_model(const ModelWeights& init,
                               const Dataset& train_set,
                               const Dataset* holdout,
                               const TrainConfig& config,
                               const EpochCallback& on_epoch = nullptr) {
  config.validate();
  init.config.validate();
  if (train_set.samples.size() == 0) {
    throw InputError("training set is empty");
  }
  train_set.validate();
  if (train_set.height() != init.config.input_height ||
      train_set.width() != init.config.input_width ||
      train_set.channels() != init.config.input_channels) {
    throw ShapeError("training data " + train_set.samples.shape_string() +
                     " does not match model input " +
                     std::to_string(init.config.input_height) + "x" +
                     std::to_string(init.config.input_width) + "x" +
                     std::to_string(init.config.input_channels));
  }
  if (holdout != nullptr) holdout->validate();

  TrainResult result{init, {}};
  if (config.epochs == 0) {
    return result;  // weights bit-equal to init, empty history
  }

  const std::int64_t usable_batches =
      train_set.count() / config.batch_size +
      (train_set.count() % config.batch_size >= 2 ? 1 : 0);
  if (usable_batches == 0) {
    throw DegenerateBatchError(
        "training set of " + std::to_string(train_set.count()) +
        " sample(s) yields no batch of >= 2");
  }

  // One stream drives everything random: per-epoch permutations and the
  // dropout masks inside train-mode forwards, in execution order.
  SeededRng rng(config.seed);

  std::vector<NamedTensorRef> params = enumerate_tensors(result.weights);
  std::vector<AdamState> states;
  std::vector<Tensor*> trainable;
  for (NamedTensorRef& ref : params) {
    if (ref.trainable) {
      trainable.push_back(ref.tensor);
      states.push_back(make_adam_state(*ref.tensor));
    }
  }

  std::vector<std::int64_t> order(static_cast<std::size_t>(train_set.count()));
  for (std::size_t i = 0; i < order.size(); ++i) {
    order[i] = static_cast<std::int64_t>(i);
  }

  const std::int64_t per =
      train_set.height() * train_set.width() * train_set.channels();
  for (std::int64_t epoch = 1; epoch <= config.epochs; ++epoch) {
    if (config.shuffle) {
      rng.shuffle(order);
    }
    double loss_sum = 0.0;
    std::int64_t seen = 0, correct = 0;
    for (std::int64_t start = 0; start < train_set.count();
         start += config.batch_size) {
      const std::int64_t n =
          std::min(config.batch_size, train_set.count() - start);
      if (n < 2) {
        break;  // drop the final single-sample batch
      }
      Tensor batch({n, train_set.height(), train_set.width(),
                    train_set.channels()});
      std::vector<std::uint8_t> labels(static_cast<std::size_t>(n));
      for (std::int64_t i = 0; i < n; ++i) {
        const std::int64_t src = order[static_cast<std::size_t>(start + i)];
        std::copy(train_set.samples.data() + src * per,
                  train_set.samples.data() + (src + 1) * per,
                  batch.data() + i * per);
        labels[static_cast<std::size_t>(i)] =
            train_set.labels[static_cast<std::size_t>(src)];
      }

      ForwardResult fwd = forward_batch(result.weights, batch, Mode::train,
                                        &rng);
      apply_bn_updates(result.weights, fwd.bn_updates);
      CrossEntropyResult ce = cross_entropy_with_grad(fwd.probs, labels);
      if (!std::isfinite(ce.loss)) {
        throw NumericError("non-finite loss at epoch " +
                           std::to_string(epoch) + ", batch " +
                           std::to_string(start / config.batch_size + 1));
      }
      ModelGrads grads = backward_batch(result.weights, *fwd.cache,
                                        ce.logit_grad);
      std::vector<Tensor*> grad_refs = trainable_grad_refs(grads);
      for (std::size_t i = 0; i < trainable.size(); ++i) {
        adam_update(*trainable[i], *grad_refs[i], states[i], config);
      }

      loss_sum += ce.loss * static_cast<double>(n);
      seen += n;
      for (std::int64_t i = 0; i < n; ++i) {
        if (detail::predicted_class(fwd.probs(i, 0)) ==
            labels[static_cast<std::size_t>(i)]) {
          ++correct;
        }
      }
    }

    // Short runs leave the momentum-0.99 running averages nowhere near the
    // statistics the current weights produce, so pin them to the training
    // data before anything runs in inference mode.
    calibrate_running_stats(result.weights, train_set.count(),
                            config.batch_size,
                            [&](std::int64_t s, std::int64_t n) {
                              return train_set.batch_tensor(s, n);
                            });

    EpochStats stats;
    stats.epoch = epoch;
    stats.train_loss = loss_sum / static_cast<double>(seen);
    stats.train_accuracy =
        static_cast<double>(correct) / static_cast<double>(seen);
    if (holdout != nullptr) {
      LossAccuracy la = evaluate_loss_accuracy(result.weights, *holdout);
      stats.holdout_loss = la.loss;
      stats.holdout_accuracy = la.accuracy;
    }
    result.history.push_back(stats);
    if (on_epoch) {
      on_epoch(stats);
    }
  }
  return result;
}

}  // namespace attacknet
