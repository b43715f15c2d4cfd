#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "attacknet/errors.hpp"
#include "attacknet/layers.hpp"
#include "attacknet/rng.hpp"
#include "attacknet/tensor.hpp"

namespace attacknet {

// ---------------------------------------------------------------------------
// The classifier: two convolutional phases (entry conv -> LeakyReLU -> batch
// norm, a residual stack, a skip merge, 2x2 max pooling, dropout) followed by
// a dense phase (flatten -> dense -> tanh -> dropout -> dense -> softmax).
// ---------------------------------------------------------------------------

struct ModelConfig {
  std::int64_t input_height = 64;
  std::int64_t input_width = 64;
  std::int64_t input_channels = 3;
  std::int64_t phase1_filters = 16;
  std::int64_t phase2_filters = 32;
  std::int64_t residual_convs_per_phase = 2;
  double leaky_alpha = 0.2;
  double dropout_phase = 0.25;
  double dropout_dense = 0.5;
  std::int64_t dense_units = 128;
  std::int64_t num_classes = 2;
  double bn_momentum = 0.99;
  double bn_epsilon = 1e-5;

  void validate() const {
    for (auto [value, name] :
         {std::pair{input_height, "input_height"},
          std::pair{input_width, "input_width"},
          std::pair{input_channels, "input_channels"},
          std::pair{phase1_filters, "phase1_filters"},
          std::pair{phase2_filters, "phase2_filters"},
          std::pair{residual_convs_per_phase, "residual_convs_per_phase"},
          std::pair{dense_units, "dense_units"}}) {
      if (value < 1) {
        throw ConfigError(std::string(name) + " must be positive, got " +
                          std::to_string(value));
      }
    }
    if (input_height % 4 != 0 || input_width % 4 != 0) {
      throw ConfigError("input dims must be divisible by 4 (two 2x2 pools), "
                        "got " +
                        std::to_string(input_height) + "x" +
                        std::to_string(input_width));
    }
    if (num_classes != 2) {
      throw ConfigError("num_classes must be 2");
    }
    if (!(leaky_alpha >= 0.0 && leaky_alpha < 1.0)) {
      throw ConfigError("leaky_alpha must lie in [0,1)");
    }
    for (double r : {dropout_phase, dropout_dense}) {
      if (!(r >= 0.0 && r < 1.0)) {
        throw ConfigError("dropout rates must lie in [0,1)");
      }
    }
    if (!(bn_momentum > 0.0 && bn_momentum < 1.0)) {
      throw ConfigError("bn_momentum must lie in (0,1)");
    }
    if (!(bn_epsilon > 0.0)) {
      throw ConfigError("bn_epsilon must be positive");
    }
  }

  std::int64_t pooled_height() const { return input_height / 4; }
  std::int64_t pooled_width() const { return input_width / 4; }
  std::int64_t flatten_length() const {
    return pooled_height() * pooled_width() * phase2_filters;
  }
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"input_height", c.input_height},
                     {"input_width", c.input_width},
                     {"input_channels", c.input_channels},
                     {"phase1_filters", c.phase1_filters},
                     {"phase2_filters", c.phase2_filters},
                     {"residual_convs_per_phase", c.residual_convs_per_phase},
                     {"leaky_alpha", c.leaky_alpha},
                     {"dropout_phase", c.dropout_phase},
                     {"dropout_dense", c.dropout_dense},
                     {"dense_units", c.dense_units},
                     {"num_classes", c.num_classes},
                     {"bn_momentum", c.bn_momentum},
                     {"bn_epsilon", c.bn_epsilon}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  j.at("input_height").get_to(c.input_height);
  j.at("input_width").get_to(c.input_width);
  j.at("input_channels").get_to(c.input_channels);
  j.at("phase1_filters").get_to(c.phase1_filters);
  j.at("phase2_filters").get_to(c.phase2_filters);
  j.at("residual_convs_per_phase").get_to(c.residual_convs_per_phase);
  j.at("leaky_alpha").get_to(c.leaky_alpha);
  j.at("dropout_phase").get_to(c.dropout_phase);
  j.at("dropout_dense").get_to(c.dropout_dense);
  j.at("dense_units").get_to(c.dense_units);
  j.at("num_classes").get_to(c.num_classes);
  j.at("bn_momentum").get_to(c.bn_momentum);
  j.at("bn_epsilon").get_to(c.bn_epsilon);
}

// One conv unit: conv -> LeakyReLU -> batch norm.
struct ConvBlockWeights {
  ConvParams conv;
  BatchNormParams bn;
};

struct PhaseWeights {
  ConvBlockWeights entry;
  std::vector<ConvBlockWeights> residual;
};

struct ModelWeights {
  ModelConfig config;
  PhaseWeights phase1;
  PhaseWeights phase2;
  DenseParams dense_hidden;
  DenseParams dense_output;
};

// Reference to one named tensor inside ModelWeights. `trainable` is false
// for the batch-norm running statistics, which are state rather than
// parameters.
struct NamedTensorRef {
  std::string name;
  Tensor* tensor;
  bool trainable;
};

namespace detail {

inline void append_block_refs(std::vector<NamedTensorRef>& out,
                              const std::string& prefix,
                              ConvBlockWeights& block) {
  out.push_back({prefix + ".conv.kernel", &block.conv.kernels, true});
  out.push_back({prefix + ".conv.bias", &block.conv.bias, true});
  out.push_back({prefix + ".bn.gamma", &block.bn.gamma, true});
  out.push_back({prefix + ".bn.beta", &block.bn.beta, true});
  out.push_back({prefix + ".bn.running_mean", &block.bn.running_mean, false});
  out.push_back({prefix + ".bn.running_var", &block.bn.running_var, false});
}

}  // namespace detail

// Canonical parameter enumeration. This single order defines the weights
// file layout, the optimizer state order and the gradient pairing:
// phase1 entry block, phase1 residual blocks, phase2 likewise, hidden dense,
// output dense. Each block lists conv kernel, conv bias, bn gamma, bn beta,
// bn running mean, bn running var.
inline std::vector<NamedTensorRef> enumerate_tensors(ModelWeights& w) {
  std::vector<NamedTensorRef> refs;
  detail::append_block_refs(refs, "phase1.entry", w.phase1.entry);
  for (std::size_t i = 0; i < w.phase1.residual.size(); ++i) {
    detail::append_block_refs(refs, "phase1.res" + std::to_string(i + 1),
                              w.phase1.residual[i]);
  }
  detail::append_block_refs(refs, "phase2.entry", w.phase2.entry);
  for (std::size_t i = 0; i < w.phase2.residual.size(); ++i) {
    detail::append_block_refs(refs, "phase2.res" + std::to_string(i + 1),
                              w.phase2.residual[i]);
  }
  refs.push_back({"dense.hidden.weights", &w.dense_hidden.weights, true});
  refs.push_back({"dense.hidden.bias", &w.dense_hidden.bias, true});
  refs.push_back({"dense.output.weights", &w.dense_output.weights, true});
  refs.push_back({"dense.output.bias", &w.dense_output.bias, true});
  return refs;
}

inline std::vector<NamedTensorRef> enumerate_tensors(const ModelWeights& w) {
  return enumerate_tensors(const_cast<ModelWeights&>(w));
}

// ---------------------------------------------------------------------------
// Pipeline description: layer names with output dims, usable for inspection
// and for validating spatial arithmetic without building weights.
// ---------------------------------------------------------------------------

struct LayerDesc {
  std::string name;
  std::vector<std::int64_t> output_dims;  // per-sample dims (no batch axis)
};

inline std::vector<LayerDesc> describe_pipeline(const ModelConfig& config) {
  config.validate();
  std::vector<LayerDesc> layers;
  std::int64_t h = config.input_height, w = config.input_width;
  auto phase = [&](int index, std::int64_t filters) {
    const std::string p = "phase" + std::to_string(index);
    layers.push_back({p + ".entry.conv 3x3", {h, w, filters}});
    layers.push_back({p + ".entry.leaky_relu", {h, w, filters}});
    layers.push_back({p + ".entry.batch_norm", {h, w, filters}});
    for (std::int64_t i = 1; i <= config.residual_convs_per_phase; ++i) {
      const std::string b = p + ".res" + std::to_string(i);
      layers.push_back({b + ".conv 3x3", {h, w, filters}});
      layers.push_back({b + ".leaky_relu", {h, w, filters}});
      layers.push_back({b + ".batch_norm", {h, w, filters}});
    }
    layers.push_back({p + ".residual_add", {h, w, filters}});
    h /= 2;
    w /= 2;
    layers.push_back({p + ".max_pool 2x2", {h, w, filters}});
    layers.push_back({p + ".dropout", {h, w, filters}});
  };
  phase(1, config.phase1_filters);
  phase(2, config.phase2_filters);
  layers.push_back({"flatten", {config.flatten_length()}});
  layers.push_back({"dense.hidden", {config.dense_units}});
  layers.push_back({"tanh", {config.dense_units}});
  layers.push_back({"dense.dropout", {config.dense_units}});
  layers.push_back({"dense.output", {config.num_classes}});
  layers.push_back({"softmax", {config.num_classes}});
  return layers;
}

// Total trainable scalar count (running statistics excluded).
inline std::int64_t param_count(const ModelConfig& config) {
  config.validate();
  std::int64_t total = 0;
  auto conv_block = [&](std::int64_t cin, std::int64_t cout) {
    total += 3 * 3 * cin * cout + cout;  // kernel + bias
    total += 2 * cout;                   // gamma + beta
  };
  conv_block(config.input_channels, config.phase1_filters);
  for (std::int64_t i = 0; i < config.residual_convs_per_phase; ++i) {
    conv_block(config.phase1_filters, config.phase1_filters);
  }
  conv_block(config.phase1_filters, config.phase2_filters);
  for (std::int64_t i = 0; i < config.residual_convs_per_phase; ++i) {
    conv_block(config.phase2_filters, config.phase2_filters);
  }
  total += config.flatten_length() * config.dense_units + config.dense_units;
  total += config.dense_units * config.num_classes + config.num_classes;
  return total;
}

// ---------------------------------------------------------------------------
// Initialization: He-normal conv kernels scaled for LeakyReLU fan-in,
// Glorot-uniform dense layers, zero biases, identity batch norm.
// ---------------------------------------------------------------------------

namespace detail {

inline ConvBlockWeights init_conv_block(std::int64_t cin, std::int64_t cout,
                                        const ModelConfig& config,
                                        SeededRng& rng) {
  ConvBlockWeights block;
  block.conv.kernels = Tensor({3, 3, cin, cout});
  block.conv.bias = Tensor({cout}, 0.0);
  const double fan_in = 9.0 * static_cast<double>(cin);
  const double stddev =
      std::sqrt(2.0 / ((1.0 + config.leaky_alpha * config.leaky_alpha) * fan_in));
  double* k = block.conv.kernels.data();
  for (std::int64_t i = 0, n = block.conv.kernels.size(); i < n; ++i) {
    k[i] = rng.normal(0.0, stddev);
  }
  block.bn.gamma = Tensor({cout}, 1.0);
  block.bn.beta = Tensor({cout}, 0.0);
  block.bn.running_mean = Tensor({cout}, 0.0);
  block.bn.running_var = Tensor({cout}, 1.0);
  block.bn.momentum = config.bn_momentum;
  block.bn.epsilon = config.bn_epsilon;
  return block;
}

inline DenseParams init_dense_glorot(std::int64_t fin, std::int64_t fout,
                                     SeededRng& rng) {
  DenseParams p;
  p.weights = Tensor({fin, fout});
  p.bias = Tensor({fout}, 0.0);
  const double limit = std::sqrt(6.0 / static_cast<double>(fin + fout));
  double* w = p.weights.data();
  for (std::int64_t i = 0, n = p.weights.size(); i < n; ++i) {
    w[i] = rng.uniform(-limit, limit);
  }
  return p;
}

}  // namespace detail

inline ModelWeights init_weights(const ModelConfig& config,
                                 std::uint64_t seed) {
  config.validate();
  SeededRng rng(seed);
  ModelWeights w;
  w.config = config;
  w.phase1.entry = detail::init_conv_block(config.input_channels,
                                           config.phase1_filters, config, rng);
  for (std::int64_t i = 0; i < config.residual_convs_per_phase; ++i) {
    w.phase1.residual.push_back(detail::init_conv_block(
        config.phase1_filters, config.phase1_filters, config, rng));
  }
  w.phase2.entry = detail::init_conv_block(config.phase1_filters,
                                           config.phase2_filters, config, rng);
  for (std::int64_t i = 0; i < config.residual_convs_per_phase; ++i) {
    w.phase2.residual.push_back(detail::init_conv_block(
        config.phase2_filters, config.phase2_filters, config, rng));
  }
  w.dense_hidden = detail::init_dense_glorot(config.flatten_length(),
                                             config.dense_units, rng);
  w.dense_output =
      detail::init_dense_glorot(config.dense_units, config.num_classes, rng);
  return w;
}

// ---------------------------------------------------------------------------
// Forward pass with an optional cache for backpropagation.
// ---------------------------------------------------------------------------

struct ConvBlockCache {
  Tensor input;       // conv input
  Tensor preact;      // conv output (leaky input)
  BatchNormCache bn;  // batch-norm cache (train mode only)
};

struct PhaseCache {
  ConvBlockCache entry;
  Tensor skip;  // post-entry-BN tensor, the residual skip source
  std::vector<ConvBlockCache> residual;
  Tensor merged;  // residual_add output, max-pool input
  MaxPoolResult pool;
  DropoutResult drop;
};

struct ForwardCache {
  PhaseCache phase1;
  PhaseCache phase2;
  Tensor flat;          // [N, flatten_length], dense-hidden input
  Tensor hidden_preact; // dense-hidden output, tanh input
  Tensor hidden_act;    // tanh output
  DropoutResult dense_drop;
  Tensor logits;
};

// Replacement running statistics produced by a train-mode forward pass, in
// batch-norm layer order (phase1 entry, phase1 residuals, phase2 entry,
// phase2 residuals). Callers commit them with apply_bn_updates.
struct BnUpdates {
  std::vector<std::pair<Tensor, Tensor>> mean_var;
};

// Batch-norm layers in the same order BnUpdates reports them.
inline std::vector<BatchNormParams*> bn_layer_params(ModelWeights& w) {
  std::vector<BatchNormParams*> layers;
  layers.push_back(&w.phase1.entry.bn);
  for (auto& b : w.phase1.residual) layers.push_back(&b.bn);
  layers.push_back(&w.phase2.entry.bn);
  for (auto& b : w.phase2.residual) layers.push_back(&b.bn);
  return layers;
}

inline void apply_bn_updates(ModelWeights& w, const BnUpdates& updates) {
  std::vector<BatchNormParams*> layers = bn_layer_params(w);
  if (updates.mean_var.size() != layers.size()) {
    throw InputError("batch-norm update count mismatch");
  }
  for (std::size_t i = 0; i < layers.size(); ++i) {
    layers[i]->running_mean = updates.mean_var[i].first;
    layers[i]->running_var = updates.mean_var[i].second;
  }
}

struct ForwardResult {
  Tensor probs;  // [N,2]
  std::optional<ForwardCache> cache;  // populated in train mode
  BnUpdates bn_updates;               // populated in train mode
};

namespace detail {

struct BlockForward {
  Tensor output;
  ConvBlockCache cache;
};

inline BlockForward conv_block_forward(const Tensor& input,
                                       const ConvBlockWeights& block,
                                       double alpha, Mode mode,
                                       BnUpdates* updates) {
  BlockForward r;
  r.cache.input = input;
  r.cache.preact = conv2d_forward(input, block.conv);
  Tensor activated = leaky_relu(r.cache.preact, alpha);
  if (mode == Mode::train) {
    BatchNormTrainResult bn = batch_norm_train(activated, block.bn);
    r.output = std::move(bn.output);
    r.cache.bn = std::move(bn.cache);
    updates->mean_var.emplace_back(std::move(bn.new_running_mean),
                                   std::move(bn.new_running_var));
  } else {
    r.output = batch_norm_infer(activated, block.bn);
  }
  return r;
}

struct PhaseForward {
  Tensor output;
  PhaseCache cache;
};

inline PhaseForward phase_forward(const Tensor& input,
                                  const PhaseWeights& phase,
                                  const ModelConfig& config, Mode mode,
                                  SeededRng& rng, BnUpdates* updates) {
  PhaseForward r;
  BlockForward entry =
      conv_block_forward(input, phase.entry, config.leaky_alpha, mode, updates);
  r.cache.entry = std::move(entry.cache);
  r.cache.skip = entry.output;
  Tensor current = std::move(entry.output);
  for (const ConvBlockWeights& block : phase.residual) {
    BlockForward b =
        conv_block_forward(current, block, config.leaky_alpha, mode, updates);
    r.cache.residual.push_back(std::move(b.cache));
    current = std::move(b.output);
  }
  r.cache.merged = residual_add(current, r.cache.skip);
  r.cache.pool = max_pool_2x2(r.cache.merged);
  r.cache.drop = dropout(r.cache.pool.output, config.dropout_phase, mode, rng);
  r.output = r.cache.drop.output;
  return r;
}

inline Tensor flatten_batch(const Tensor& t) {
  const std::int64_t n = t.dim(0);
  const std::int64_t f = t.size() / n;
  std::vector<double> data(t.data(), t.data() + t.size());
  return Tensor::from_data({n, f}, std::move(data));
}

}  // namespace detail

// Runs the full pipeline on a [N,H,W,C] batch. Train mode applies dropout
// (drawing masks from `rng`), normalizes with batch statistics, and returns
// the cache plus fresh running stats; infer mode is deterministic and
// returns probabilities only.
inline ForwardResult forward_batch(const ModelWeights& w, const Tensor& batch,
                                   Mode mode, SeededRng* rng = nullptr) {
  w.config.validate();
  if (batch.rank() != 4 || batch.dim(1) != w.config.input_height ||
      batch.dim(2) != w.config.input_width ||
      batch.dim(3) != w.config.input_channels) {
    throw ShapeError("batch shape " + batch.shape_string() +
                     " does not match model input " +
                     std::to_string(w.config.input_height) + "x" +
                     std::to_string(w.config.input_width) + "x" +
                     std::to_string(w.config.input_channels));
  }
  const bool training = mode == Mode::train;
  if (training && batch.dim(0) < 2) {
    throw DegenerateBatchError("train-mode forward needs a batch of >= 2");
  }
  if (training && rng == nullptr) {
    throw InputError("train-mode forward requires an RNG for dropout");
  }
  SeededRng unused(0);
  SeededRng& gen = rng != nullptr ? *rng : unused;

  ForwardResult result;
  ForwardCache cache;
  detail::PhaseForward p1 = detail::phase_forward(
      batch, w.phase1, w.config, mode, gen, &result.bn_updates);
  cache.phase1 = std::move(p1.cache);
  detail::PhaseForward p2 = detail::phase_forward(
      p1.output, w.phase2, w.config, mode, gen, &result.bn_updates);
  cache.phase2 = std::move(p2.cache);

  cache.flat = detail::flatten_batch(p2.output);
  cache.hidden_preact = dense_forward(cache.flat, w.dense_hidden);
  cache.hidden_act = tanh_activation(cache.hidden_preact);
  cache.dense_drop =
      dropout(cache.hidden_act, w.config.dropout_dense, mode, gen);
  cache.logits = dense_forward(cache.dense_drop.output, w.dense_output);
  result.probs = softmax(cache.logits);
  ensure_all_finite(result.probs, "forward_batch");
  if (training) {
    result.cache = std::move(cache);
  }
  return result;
}

// ---------------------------------------------------------------------------
// Backward pass. Gradients are returned in a structure mirroring the
// trainable parameters (running statistics carry no gradient).
// ---------------------------------------------------------------------------

struct ConvBlockGrads {
  Tensor kernel;
  Tensor bias;
  Tensor gamma;
  Tensor beta;
};

struct PhaseGrads {
  ConvBlockGrads entry;
  std::vector<ConvBlockGrads> residual;
};

struct ModelGrads {
  PhaseGrads phase1;
  PhaseGrads phase2;
  Tensor dense_hidden_weights;
  Tensor dense_hidden_bias;
  Tensor dense_output_weights;
  Tensor dense_output_bias;
};

// Trainable-tensor references in the same canonical order as
// enumerate_tensors filtered to trainable entries.
inline std::vector<Tensor*> trainable_grad_refs(ModelGrads& g) {
  std::vector<Tensor*> refs;
  auto block = [&](ConvBlockGrads& b) {
    refs.push_back(&b.kernel);
    refs.push_back(&b.bias);
    refs.push_back(&b.gamma);
    refs.push_back(&b.beta);
  };
  block(g.phase1.entry);
  for (auto& b : g.phase1.residual) block(b);
  block(g.phase2.entry);
  for (auto& b : g.phase2.residual) block(b);
  refs.push_back(&g.dense_hidden_weights);
  refs.push_back(&g.dense_hidden_bias);
  refs.push_back(&g.dense_output_weights);
  refs.push_back(&g.dense_output_bias);
  return refs;
}

namespace detail {

// Backward through conv -> LeakyReLU -> batch norm.
inline Tensor conv_block_backward(const ConvBlockCache& cache,
                                  const ConvBlockWeights& block, double alpha,
                                  const Tensor& out_grad,
                                  ConvBlockGrads* grads) {
  BatchNormGrads bn = batch_norm_backward(cache.bn, block.bn, out_grad);
  grads->gamma = std::move(bn.gamma_grad);
  grads->beta = std::move(bn.beta_grad);
  Tensor act_grad = leaky_relu_backward(cache.preact, alpha, bn.input_grad);
  ConvGrads conv = conv2d_backward(cache.input, block.conv, act_grad);
  grads->kernel = std::move(conv.kernel_grad);
  grads->bias = std::move(conv.bias_grad);
  return std::move(conv.input_grad);
}

inline Tensor phase_backward(const PhaseCache& cache,
                             const PhaseWeights& phase,
                             const ModelConfig& config, const Tensor& out_grad,
                             PhaseGrads* grads) {
  Tensor pool_grad = dropout_backward(cache.drop, out_grad);
  Tensor merged_grad = max_pool_2x2_backward(cache.pool, pool_grad);
  // Residual merge: gradient flows unchanged into the branch and the skip.
  Tensor branch_grad = merged_grad;
  grads->residual.resize(cache.residual.size());
  for (std::size_t i = cache.residual.size(); i-- > 0;) {
    branch_grad =
        conv_block_backward(cache.residual[i], phase.residual[i],
                            config.leaky_alpha, branch_grad, &grads->residual[i]);
  }
  Tensor skip_grad = add_elementwise(branch_grad, merged_grad);
  return conv_block_backward(cache.entry, phase.entry, config.leaky_alpha,
                             skip_grad, &grads->entry);
}

}  // namespace detail

inline ModelGrads backward_batch(const ModelWeights& w,
                                 const ForwardCache& cache,
                                 const Tensor& logit_grad) {
  ModelGrads grads;
  DenseGrads out_dense =
      dense_backward(cache.dense_drop.output, w.dense_output, logit_grad);
  grads.dense_output_weights = std::move(out_dense.weight_grad);
  grads.dense_output_bias = std::move(out_dense.bias_grad);
  Tensor act_grad = dropout_backward(cache.dense_drop, out_dense.input_grad);
  Tensor hidden_grad = tanh_backward(cache.hidden_act, act_grad);
  DenseGrads hidden_dense =
      dense_backward(cache.flat, w.dense_hidden, hidden_grad);
  grads.dense_hidden_weights = std::move(hidden_dense.weight_grad);
  grads.dense_hidden_bias = std::move(hidden_dense.bias_grad);

  const Tensor& p2_out = cache.phase2.drop.output;
  Tensor flat_grad = hidden_dense.input_grad;
  Tensor p2_grad = Tensor::from_data(
      p2_out.shape(),
      std::vector<double>(flat_grad.data(), flat_grad.data() + flat_grad.size()));
  Tensor p1_grad = detail::phase_backward(cache.phase2, w.phase2, w.config,
                                          p2_grad, &grads.phase2);
  detail::phase_backward(cache.phase1, w.phase1, w.config, p1_grad,
                         &grads.phase1);
  return grads;
}

// ---------------------------------------------------------------------------
// Inference helper shared by evaluation paths: bonafide probability (softmax
// column 0) per sample, computed in fixed-size chunks.
// ---------------------------------------------------------------------------

template <typename BatchProvider>
std::vector<double> predict_scores_chunked(const ModelWeights& w,
                                           std::int64_t sample_count,
                                           std::int64_t chunk,
                                           BatchProvider&& make_batch) {
  std::vector<double> scores;
  scores.reserve(static_cast<std::size_t>(sample_count));
  for (std::int64_t start = 0; start < sample_count; start += chunk) {
    const std::int64_t n = std::min(chunk, sample_count - start);
    const Tensor batch = make_batch(start, n);
    ForwardResult r = forward_batch(w, batch, Mode::infer);
    for (std::int64_t i = 0; i < n; ++i) {
      scores.push_back(r.probs(i, 0));
    }
  }
  return scores;
}

// Re-estimates every batch-norm layer's running statistics as the moments of
// the given samples under the current weights. Momentum-0.99 averaging needs
// hundreds of batches to converge, so after a short training run the running
// stats still sit near their identity initialization and inference-mode
// outputs bear no resemblance to training-mode ones. A calibration pass over
// the training data replaces them with the statistics the weights actually
// produce. Chunks run in train mode (dropout disabled); a trailing chunk of
// one sample is skipped.
template <typename BatchProvider>
void calibrate_running_stats(ModelWeights& w, std::int64_t sample_count,
                             std::int64_t chunk, BatchProvider&& make_batch) {
  if (sample_count < 2) {
    throw DegenerateBatchError(
        "batch-norm calibration needs at least 2 samples");
  }
  if (chunk < 2) {
    throw InputError("batch-norm calibration chunk must be at least 2");
  }

  // A probe copy reports each chunk's raw statistics: with running stats
  // zeroed and momentum 1/2, every blended update is exactly half the batch
  // value, and doubling a double is exact.
  ModelWeights probe = w;
  probe.config.dropout_phase = 0.0;
  probe.config.dropout_dense = 0.0;
  std::vector<BatchNormParams*> probe_layers = bn_layer_params(probe);
  for (BatchNormParams* bn : probe_layers) {
    bn->momentum = 0.5;
    bn->running_mean = Tensor(bn->running_mean.shape());
    bn->running_var = Tensor(bn->running_var.shape());
  }

  const std::size_t layer_count = probe_layers.size();
  std::vector<std::vector<double>> sum_mean(layer_count), sum_sq(layer_count);
  for (std::size_t k = 0; k < layer_count; ++k) {
    const auto c = static_cast<std::size_t>(probe_layers[k]->gamma.size());
    sum_mean[k].assign(c, 0.0);
    sum_sq[k].assign(c, 0.0);
  }

  SeededRng unused(0);  // dropout is off, so no draws happen
  double total = 0.0;
  for (std::int64_t start = 0; start < sample_count; start += chunk) {
    const std::int64_t n = std::min(chunk, sample_count - start);
    if (n < 2) break;
    ForwardResult r = forward_batch(probe, make_batch(start, n), Mode::train,
                                    &unused);
    const double weight = static_cast<double>(n);
    for (std::size_t k = 0; k < layer_count; ++k) {
      const Tensor& half_mean = r.bn_updates.mean_var[k].first;
      const Tensor& half_var = r.bn_updates.mean_var[k].second;
      for (std::int64_t ch = 0; ch < half_mean.size(); ++ch) {
        const double mean = 2.0 * half_mean[ch];
        const double var = 2.0 * half_var[ch];
        sum_mean[k][static_cast<std::size_t>(ch)] += weight * mean;
        sum_sq[k][static_cast<std::size_t>(ch)] +=
            weight * (var + mean * mean);
      }
    }
    total += weight;
  }

  std::vector<BatchNormParams*> layers = bn_layer_params(w);
  for (std::size_t k = 0; k < layer_count; ++k) {
    for (std::size_t ch = 0; ch < sum_mean[k].size(); ++ch) {
      const double mean = sum_mean[k][ch] / total;
      const double var = std::max(0.0, sum_sq[k][ch] / total - mean * mean);
      layers[k]->running_mean[static_cast<std::int64_t>(ch)] = mean;
      layers[k]->running_var[static_cast<std::int64_t>(ch)] = var;
    }
  }
}

}  // namespace attacknet
