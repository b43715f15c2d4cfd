#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "attacknet/errors.hpp"
#include "attacknet/model.hpp"
#include "attacknet/rng.hpp"
#include "attacknet/tensor.hpp"

using namespace attacknet;
using Catch::Matchers::WithinAbs;

namespace {

ModelConfig tiny_config() {
  ModelConfig c;
  c.input_height = 8;
  c.input_width = 8;
  c.input_channels = 1;
  c.phase1_filters = 2;
  c.phase2_filters = 4;
  c.dense_units = 8;
  return c;
}

Tensor random_batch(const ModelConfig& c, std::int64_t n, std::uint64_t seed) {
  SeededRng rng(seed);
  Tensor t({n, c.input_height, c.input_width, c.input_channels});
  for (std::int64_t i = 0; i < t.size(); ++i) t[i] = rng.uniform();
  return t;
}

}  // namespace

TEST_CASE("config validation rejects bad geometry and rates") {
  ModelConfig c;
  CHECK_NOTHROW(c.validate());

  ModelConfig odd = c;
  odd.input_height = 30;
  odd.input_width = 30;
  CHECK_THROWS_AS(odd.validate(), ConfigError);

  ModelConfig classes = c;
  classes.num_classes = 3;
  CHECK_THROWS_AS(classes.validate(), ConfigError);

  ModelConfig alpha = c;
  alpha.leaky_alpha = 1.0;
  CHECK_THROWS_AS(alpha.validate(), ConfigError);

  ModelConfig rate = c;
  rate.dropout_dense = -0.5;
  CHECK_THROWS_AS(rate.validate(), ConfigError);

  ModelConfig zero = c;
  zero.phase1_filters = 0;
  CHECK_THROWS_AS(zero.validate(), ConfigError);
}

TEST_CASE("flatten length follows two rounds of pooling") {
  ModelConfig c;
  CHECK(c.flatten_length() == 16 * 16 * 32);  // 8192
  c.input_height = 32;
  c.input_width = 32;
  CHECK(c.flatten_length() == 8 * 8 * 32);  // 2048
}

TEST_CASE("config JSON round trips") {
  ModelConfig c = tiny_config();
  c.leaky_alpha = 0.15;
  c.bn_momentum = 0.9;
  nlohmann::json j = c;
  ModelConfig back = j.get<ModelConfig>();
  CHECK(back.input_height == c.input_height);
  CHECK(back.phase2_filters == c.phase2_filters);
  CHECK(back.leaky_alpha == c.leaky_alpha);
  CHECK(back.bn_momentum == c.bn_momentum);
  CHECK(back.dense_units == c.dense_units);
  // Serialized form is stable under a parse/dump cycle.
  CHECK(nlohmann::json(back).dump() == j.dump());
}

TEST_CASE("param_count matches independent enumeration of the tensors") {
  for (const ModelConfig& c : {ModelConfig{}, tiny_config()}) {
    ModelWeights w = init_weights(c, 3);
    std::int64_t total = 0;
    for (const NamedTensorRef& ref : enumerate_tensors(w)) {
      if (ref.trainable) total += ref.tensor->size();
    }
    CHECK(param_count(c) == total);
  }
}

TEST_CASE("default architecture has the documented parameter total") {
  CHECK(param_count(ModelConfig{}) == 1077474);
}

TEST_CASE("entry conv and hidden dense sizes match hand arithmetic") {
  ModelWeights w = init_weights(ModelConfig{}, 0);
  CHECK(w.phase1.entry.conv.kernels.size() + w.phase1.entry.conv.bias.size() ==
        448);  // 3*3*3*16 + 16
  CHECK(w.dense_hidden.weights.size() + w.dense_hidden.bias.size() ==
        1048704);  // 8192*128 + 128
}

TEST_CASE("canonical tensor enumeration is stable and fully named") {
  ModelWeights w = init_weights(ModelConfig{}, 0);
  std::vector<NamedTensorRef> refs = enumerate_tensors(w);
  REQUIRE(refs.size() == 40);  // 6 blocks x 6 tensors + 4 dense tensors
  CHECK(refs[0].name == "phase1.entry.conv.kernel");
  CHECK(refs[1].name == "phase1.entry.conv.bias");
  CHECK(refs[2].name == "phase1.entry.bn.gamma");
  CHECK(refs[3].name == "phase1.entry.bn.beta");
  CHECK(refs[4].name == "phase1.entry.bn.running_mean");
  CHECK(refs[5].name == "phase1.entry.bn.running_var");
  CHECK(refs[6].name == "phase1.res1.conv.kernel");
  CHECK(refs[12].name == "phase1.res2.conv.kernel");
  CHECK(refs[18].name == "phase2.entry.conv.kernel");
  CHECK(refs[36].name == "dense.hidden.weights");
  CHECK(refs[37].name == "dense.hidden.bias");
  CHECK(refs[38].name == "dense.output.weights");
  CHECK(refs[39].name == "dense.output.bias");
  for (const NamedTensorRef& ref : refs) {
    const bool is_running = ref.name.find("running_") != std::string::npos;
    CHECK(ref.trainable == !is_running);
  }
}

TEST_CASE("describe_pipeline tracks spatial dims through both phases") {
  std::vector<LayerDesc> layers = describe_pipeline(ModelConfig{});
  REQUIRE(!layers.empty());
  CHECK(layers.front().name == "phase1.entry.conv 3x3");
  CHECK(layers.front().output_dims == std::vector<std::int64_t>{64, 64, 16});
  bool saw_pool1 = false, saw_pool2 = false;
  for (const LayerDesc& l : layers) {
    if (l.name == "phase1.max_pool 2x2") {
      saw_pool1 = true;
      CHECK(l.output_dims == std::vector<std::int64_t>{32, 32, 16});
    }
    if (l.name == "phase2.max_pool 2x2") {
      saw_pool2 = true;
      CHECK(l.output_dims == std::vector<std::int64_t>{16, 16, 32});
    }
  }
  CHECK(saw_pool1);
  CHECK(saw_pool2);
  CHECK(layers.back().name == "softmax");
  CHECK(layers.back().output_dims == std::vector<std::int64_t>{2});
}

TEST_CASE("initialization is seed-deterministic") {
  ModelConfig c = tiny_config();
  ModelWeights a = init_weights(c, 9);
  ModelWeights b = init_weights(c, 9);
  ModelWeights other = init_weights(c, 10);
  std::vector<NamedTensorRef> ra = enumerate_tensors(a);
  std::vector<NamedTensorRef> rb = enumerate_tensors(b);
  std::vector<NamedTensorRef> ro = enumerate_tensors(other);
  bool identical = true, any_diff = false;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    for (std::int64_t j = 0; j < ra[i].tensor->size(); ++j) {
      identical = identical && (*ra[i].tensor)[j] == (*rb[i].tensor)[j];
      any_diff = any_diff || (*ra[i].tensor)[j] != (*ro[i].tensor)[j];
    }
  }
  CHECK(identical);
  CHECK(any_diff);
}

TEST_CASE("initialization draws from the documented distributions") {
  ModelWeights w = init_weights(ModelConfig{}, 4);

  // Conv kernels: zero-mean normal with He/LeakyReLU variance 2/(1.04*fan_in).
  const Tensor& k = w.phase2.entry.conv.kernels;  // fan_in = 9*16
  double sum = 0.0, sum_sq = 0.0;
  for (std::int64_t i = 0; i < k.size(); ++i) {
    sum += k[i];
    sum_sq += k[i] * k[i];
  }
  const double n = static_cast<double>(k.size());
  const double expected_var = 2.0 / ((1.0 + 0.2 * 0.2) * 9.0 * 16.0);
  CHECK_THAT(sum / n, WithinAbs(0.0, 4.0 * std::sqrt(expected_var / n)));
  CHECK_THAT(sum_sq / n, WithinAbs(expected_var, 0.25 * expected_var));

  // Dense weights: uniform within the Glorot limit, none outside.
  const double limit = std::sqrt(6.0 / (8192.0 + 128.0));
  const Tensor& d = w.dense_hidden.weights;
  double max_abs = 0.0;
  for (std::int64_t i = 0; i < d.size(); ++i) {
    max_abs = std::max(max_abs, std::abs(d[i]));
  }
  CHECK(max_abs <= limit);
  CHECK(max_abs > 0.9 * limit);  // the range is actually used

  // Biases zero, batch norm at identity.
  for (std::int64_t i = 0; i < w.dense_hidden.bias.size(); ++i) {
    CHECK(w.dense_hidden.bias[i] == 0.0);
  }
  CHECK(w.phase1.entry.bn.gamma[0] == 1.0);
  CHECK(w.phase1.entry.bn.beta[0] == 0.0);
  CHECK(w.phase1.entry.bn.running_mean[0] == 0.0);
  CHECK(w.phase1.entry.bn.running_var[0] == 1.0);
}

TEST_CASE("all-zero trainable weights give exactly even class odds") {
  ModelConfig c = tiny_config();
  ModelWeights w = init_weights(c, 1);
  for (NamedTensorRef& ref : enumerate_tensors(w)) {
    if (ref.trainable) {
      for (std::int64_t i = 0; i < ref.tensor->size(); ++i) {
        (*ref.tensor)[i] = 0.0;
      }
    }
  }
  Tensor batch = random_batch(c, 3, 8);
  ForwardResult r = forward_batch(w, batch, Mode::infer);
  for (std::int64_t i = 0; i < 3; ++i) {
    CHECK(r.probs(i, 0) == 0.5);
    CHECK(r.probs(i, 1) == 0.5);
  }
}

TEST_CASE("inference is batch-composition invariant") {
  ModelConfig c = tiny_config();
  ModelWeights w = init_weights(c, 2);
  Tensor batch = random_batch(c, 4, 5);
  ForwardResult whole = forward_batch(w, batch, Mode::infer);

  for (std::int64_t i = 0; i < 4; ++i) {
    Tensor single({1, c.input_height, c.input_width, c.input_channels});
    const std::int64_t per = single.size();
    for (std::int64_t j = 0; j < per; ++j) single[j] = batch[i * per + j];
    ForwardResult one = forward_batch(w, single, Mode::infer);
    CHECK(one.probs(0, 0) == whole.probs(i, 0));
    CHECK(one.probs(0, 1) == whole.probs(i, 1));
  }
}

TEST_CASE("probabilities are normalized and cache only exists in train mode") {
  ModelConfig c = tiny_config();
  ModelWeights w = init_weights(c, 6);
  Tensor batch = random_batch(c, 5, 7);

  ForwardResult infer = forward_batch(w, batch, Mode::infer);
  CHECK_FALSE(infer.cache.has_value());
  CHECK(infer.bn_updates.mean_var.empty());
  for (std::int64_t i = 0; i < 5; ++i) {
    CHECK_THAT(infer.probs(i, 0) + infer.probs(i, 1), WithinAbs(1.0, 1e-12));
    CHECK(infer.probs(i, 0) >= 0.0);
    CHECK(infer.probs(i, 1) >= 0.0);
  }

  SeededRng rng(9);
  ForwardResult train = forward_batch(w, batch, Mode::train, &rng);
  CHECK(train.cache.has_value());
  // One update pair per batch-norm layer: 2 phases x (1 entry + 2 residual).
  CHECK(train.bn_updates.mean_var.size() == 6);
}

TEST_CASE("forward rejects wrong shapes and degenerate train batches") {
  ModelConfig c = tiny_config();
  ModelWeights w = init_weights(c, 1);
  CHECK_THROWS_AS(forward_batch(w, Tensor({2, 8, 8, 3}), Mode::infer),
                  ShapeError);
  CHECK_THROWS_AS(forward_batch(w, Tensor({8, 8, 1}), Mode::infer),
                  ShapeError);
  SeededRng rng(1);
  CHECK_THROWS_AS(forward_batch(w, Tensor({1, 8, 8, 1}), Mode::train, &rng),
                  DegenerateBatchError);
  CHECK_THROWS_AS(forward_batch(w, Tensor({2, 8, 8, 1}), Mode::train, nullptr),
                  InputError);
}

TEST_CASE("zeroed residual blocks make the merge equal the skip path") {
  ModelConfig c = tiny_config();
  ModelWeights w = init_weights(c, 3);
  for (PhaseWeights* phase : {&w.phase1, &w.phase2}) {
    for (ConvBlockWeights& block : phase->residual) {
      for (Tensor* t : {&block.conv.kernels, &block.conv.bias, &block.bn.gamma,
                        &block.bn.beta}) {
        for (std::int64_t i = 0; i < t->size(); ++i) (*t)[i] = 0.0;
      }
    }
  }
  Tensor batch = random_batch(c, 2, 4);
  SeededRng rng(5);
  ForwardResult r = forward_batch(w, batch, Mode::train, &rng);
  REQUIRE(r.cache.has_value());
  for (const PhaseCache* phase : {&r.cache->phase1, &r.cache->phase2}) {
    REQUIRE(phase->merged.same_shape(phase->skip));
    for (std::int64_t i = 0; i < phase->merged.size(); ++i) {
      CHECK(phase->merged[i] == phase->skip[i]);
    }
  }
}

TEST_CASE("train mode consumes dropout randomness deterministically") {
  ModelConfig c = tiny_config();
  ModelWeights w = init_weights(c, 3);
  Tensor batch = random_batch(c, 2, 4);
  SeededRng r1(42), r2(42);
  ForwardResult a = forward_batch(w, batch, Mode::train, &r1);
  ForwardResult b = forward_batch(w, batch, Mode::train, &r2);
  for (std::int64_t i = 0; i < a.probs.size(); ++i) {
    CHECK(a.probs[i] == b.probs[i]);
  }
  // Both consumed the same number of draws.
  CHECK(r1.next_u64() == r2.next_u64());
}

TEST_CASE("apply_bn_updates commits fresh running statistics") {
  ModelConfig c = tiny_config();
  ModelWeights w = init_weights(c, 3);
  Tensor batch = random_batch(c, 4, 11);
  SeededRng rng(2);
  ForwardResult r = forward_batch(w, batch, Mode::train, &rng);

  Tensor before_infer = forward_batch(w, batch, Mode::infer).probs;
  const double old_mean = w.phase1.entry.bn.running_mean[0];
  apply_bn_updates(w, r.bn_updates);
  CHECK(w.phase1.entry.bn.running_mean[0] != old_mean);
  CHECK(w.phase1.entry.bn.running_mean[0] ==
        r.bn_updates.mean_var[0].first[0]);
  Tensor after_infer = forward_batch(w, batch, Mode::infer).probs;
  bool changed = false;
  for (std::int64_t i = 0; i < after_infer.size(); ++i) {
    changed = changed || after_infer[i] != before_infer[i];
  }
  CHECK(changed);

  BnUpdates wrong;
  wrong.mean_var.resize(3);
  CHECK_THROWS_AS(apply_bn_updates(w, wrong), InputError);
}

TEST_CASE("chunked score prediction is chunk-size invariant") {
  ModelConfig c = tiny_config();
  ModelWeights w = init_weights(c, 13);
  Tensor all = random_batch(c, 7, 3);
  const std::int64_t per = all.size() / 7;
  const auto provider = [&](std::int64_t start, std::int64_t n) {
    Tensor chunk({n, c.input_height, c.input_width, c.input_channels});
    for (std::int64_t i = 0; i < n * per; ++i) {
      chunk[i] = all[start * per + i];
    }
    return chunk;
  };
  std::vector<double> by3 = predict_scores_chunked(w, 7, 3, provider);
  std::vector<double> by64 = predict_scores_chunked(w, 7, 64, provider);
  REQUIRE(by3.size() == 7);
  REQUIRE(by64.size() == 7);
  for (std::size_t i = 0; i < 7; ++i) {
    CHECK(by3[i] == by64[i]);
  }
  // Scores are the bonafide (class 0) probabilities.
  ForwardResult full = forward_batch(w, all, Mode::infer);
  for (std::size_t i = 0; i < 7; ++i) {
    CHECK(by64[i] == full.probs(static_cast<std::int64_t>(i), 0));
  }
}
