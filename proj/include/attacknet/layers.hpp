#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "attacknet/errors.hpp"
#include "attacknet/rng.hpp"
#include "attacknet/tensor.hpp"

namespace attacknet {

enum class Mode { train, infer };

// ---------------------------------------------------------------------------
// 2-D convolution, 3x3 kernels, 'same' zero padding, channels-last layout.
// Implemented as cross-correlation (no kernel flip), the usual deep-learning
// convention.
// ---------------------------------------------------------------------------

struct ConvParams {
  Tensor kernels;  // [3, 3, in_channels, out_channels]
  Tensor bias;     // [out_channels]
};

namespace detail {

inline void check_conv_shapes(const Tensor& input, const ConvParams& p) {
  if (input.rank() != 4) {
    throw ShapeError("conv2d input must be rank-4 [N,H,W,C], got " +
                     input.shape_string());
  }
  if (p.kernels.rank() != 4 || p.kernels.dim(0) != 3 || p.kernels.dim(1) != 3) {
    throw ShapeError("conv2d kernels must be [3,3,Cin,Cout], got " +
                     p.kernels.shape_string());
  }
  if (p.kernels.dim(2) != input.dim(3)) {
    throw ShapeError("conv2d channel mismatch: input has " +
                     std::to_string(input.dim(3)) + ", kernels expect " +
                     std::to_string(p.kernels.dim(2)));
  }
  if (p.bias.rank() != 1 || p.bias.dim(0) != p.kernels.dim(3)) {
    throw ShapeError("conv2d bias must be [Cout], got " +
                     p.bias.shape_string());
  }
}

}  // namespace detail

// out[n,y,x,co] = bias[co] + sum_{dy,dx,ci} in[n,y+dy-1,x+dx-1,ci]*k[dy,dx,ci,co]
// with out-of-range input treated as zero. Output spatial dims equal input's.
inline Tensor conv2d_forward(const Tensor& input, const ConvParams& p) {
  detail::check_conv_shapes(input, p);
  const std::int64_t n_batch = input.dim(0), h = input.dim(1), w = input.dim(2);
  const std::int64_t cin = input.dim(3), cout = p.kernels.dim(3);
  Tensor out({n_batch, h, w, cout});
  const double* in = input.data();
  const double* ker = p.kernels.data();
  const double* bias = p.bias.data();
  double* op = out.data();
  for (std::int64_t n = 0; n < n_batch; ++n) {
    for (std::int64_t y = 0; y < h; ++y) {
      for (std::int64_t x = 0; x < w; ++x) {
        double* orow = op + ((n * h + y) * w + x) * cout;
        for (std::int64_t co = 0; co < cout; ++co) orow[co] = bias[co];
        for (std::int64_t dy = 0; dy < 3; ++dy) {
          const std::int64_t iy = y + dy - 1;
          if (iy < 0 || iy >= h) continue;
          for (std::int64_t dx = 0; dx < 3; ++dx) {
            const std::int64_t ix = x + dx - 1;
            if (ix < 0 || ix >= w) continue;
            const double* irow = in + ((n * h + iy) * w + ix) * cin;
            const double* kbase = ker + (dy * 3 + dx) * cin * cout;
            for (std::int64_t ci = 0; ci < cin; ++ci) {
              const double v = irow[ci];
              const double* krow = kbase + ci * cout;
              for (std::int64_t co = 0; co < cout; ++co) {
                orow[co] += v * krow[co];
              }
            }
          }
        }
      }
    }
  }
  return out;
}

struct ConvGrads {
  Tensor input_grad;   // matches input shape
  Tensor kernel_grad;  // matches kernels shape
  Tensor bias_grad;    // matches bias shape
};

inline ConvGrads conv2d_backward(const Tensor& input, const ConvParams& p,
                                 const Tensor& out_grad) {
  detail::check_conv_shapes(input, p);
  const std::int64_t n_batch = input.dim(0), h = input.dim(1), w = input.dim(2);
  const std::int64_t cin = input.dim(3), cout = p.kernels.dim(3);
  if (out_grad.rank() != 4 || out_grad.dim(0) != n_batch ||
      out_grad.dim(1) != h || out_grad.dim(2) != w || out_grad.dim(3) != cout) {
    throw ShapeError("conv2d_backward out_grad shape mismatch: " +
                     out_grad.shape_string());
  }
  ConvGrads g{Tensor(input.shape()), Tensor(p.kernels.shape()),
              Tensor(p.bias.shape())};
  const double* in = input.data();
  const double* ker = p.kernels.data();
  const double* gy = out_grad.data();
  double* gin = g.input_grad.data();
  double* gker = g.kernel_grad.data();
  double* gbias = g.bias_grad.data();
  for (std::int64_t n = 0; n < n_batch; ++n) {
    for (std::int64_t y = 0; y < h; ++y) {
      for (std::int64_t x = 0; x < w; ++x) {
        const double* gyrow = gy + ((n * h + y) * w + x) * cout;
        for (std::int64_t co = 0; co < cout; ++co) gbias[co] += gyrow[co];
        for (std::int64_t dy = 0; dy < 3; ++dy) {
          const std::int64_t iy = y + dy - 1;
          if (iy < 0 || iy >= h) continue;
          for (std::int64_t dx = 0; dx < 3; ++dx) {
            const std::int64_t ix = x + dx - 1;
            if (ix < 0 || ix >= w) continue;
            const double* irow = in + ((n * h + iy) * w + ix) * cin;
            double* girow = gin + ((n * h + iy) * w + ix) * cin;
            const double* kbase = ker + (dy * 3 + dx) * cin * cout;
            double* gkbase = gker + (dy * 3 + dx) * cin * cout;
            for (std::int64_t ci = 0; ci < cin; ++ci) {
              const double* krow = kbase + ci * cout;
              double* gkrow = gkbase + ci * cout;
              const double v = irow[ci];
              double acc = 0.0;
              for (std::int64_t co = 0; co < cout; ++co) {
                acc += krow[co] * gyrow[co];
                gkrow[co] += v * gyrow[co];
              }
              girow[ci] += acc;
            }
          }
        }
      }
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// LeakyReLU
// ---------------------------------------------------------------------------

inline void check_leaky_alpha(double alpha) {
  if (!(alpha >= 0.0 && alpha < 1.0)) {
    throw InputError("leaky_relu alpha must lie in [0,1), got " +
                     std::to_string(alpha));
  }
}

inline Tensor leaky_relu(const Tensor& input, double alpha) {
  check_leaky_alpha(alpha);
  Tensor out(input.shape());
  const double* in = input.data();
  double* op = out.data();
  for (std::int64_t i = 0, n = input.size(); i < n; ++i) {
    op[i] = in[i] > 0.0 ? in[i] : alpha * in[i];
  }
  return out;
}

inline Tensor leaky_relu_backward(const Tensor& input, double alpha,
                                  const Tensor& out_grad) {
  check_leaky_alpha(alpha);
  if (!input.same_shape(out_grad)) {
    throw ShapeError("leaky_relu_backward shape mismatch");
  }
  Tensor out(input.shape());
  const double* in = input.data();
  const double* gy = out_grad.data();
  double* op = out.data();
  for (std::int64_t i = 0, n = input.size(); i < n; ++i) {
    op[i] = in[i] > 0.0 ? gy[i] : alpha * gy[i];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Batch normalization over the channel axis of [N,H,W,C] tensors.
// Train mode normalizes with the biased batch statistics and folds them into
// the running averages; infer mode uses the running statistics only.
// ---------------------------------------------------------------------------

struct BatchNormParams {
  Tensor gamma;         // [C]
  Tensor beta;          // [C]
  Tensor running_mean;  // [C]
  Tensor running_var;   // [C]
  double momentum = 0.99;
  double epsilon = 1e-5;
};

struct BatchNormCache {
  Tensor normalized;            // x-hat, same shape as the input
  std::vector<double> inv_std;  // per channel, 1/sqrt(var+eps)
};

struct BatchNormTrainResult {
  Tensor output;
  BatchNormCache cache;
  Tensor new_running_mean;  // momentum-blended state; caller commits it
  Tensor new_running_var;
};

namespace detail {

inline void check_bn_shapes(const Tensor& input, const BatchNormParams& p) {
  if (input.rank() != 4) {
    throw ShapeError("batch_norm input must be rank-4 [N,H,W,C], got " +
                     input.shape_string());
  }
  const std::int64_t c = input.dim(3);
  for (const Tensor* t :
       {&p.gamma, &p.beta, &p.running_mean, &p.running_var}) {
    if (t->rank() != 1 || t->dim(0) != c) {
      throw ShapeError("batch_norm parameter shape mismatch for " +
                       std::to_string(c) + " channels");
    }
  }
  if (!(p.epsilon > 0.0)) {
    throw InputError("batch_norm epsilon must be positive");
  }
  if (!(p.momentum > 0.0 && p.momentum < 1.0)) {
    throw InputError("batch_norm momentum must lie in (0,1)");
  }
}

}  // namespace detail

inline BatchNormTrainResult batch_norm_train(const Tensor& input,
                                             const BatchNormParams& p) {
  detail::check_bn_shapes(input, p);
  const std::int64_t c = input.dim(3);
  const std::int64_t m = input.size() / c;  // N*H*W elements per channel
  if (m < 2) {
    throw DegenerateBatchError(
        "batch_norm in train mode needs at least 2 elements per channel, got " +
        std::to_string(m));
  }
  std::vector<double> mean(static_cast<std::size_t>(c), 0.0);
  std::vector<double> var(static_cast<std::size_t>(c), 0.0);
  const double* in = input.data();
  for (std::int64_t i = 0; i < m; ++i) {
    const double* row = in + i * c;
    for (std::int64_t ch = 0; ch < c; ++ch) mean[ch] += row[ch];
  }
  for (std::int64_t ch = 0; ch < c; ++ch) mean[ch] /= static_cast<double>(m);
  for (std::int64_t i = 0; i < m; ++i) {
    const double* row = in + i * c;
    for (std::int64_t ch = 0; ch < c; ++ch) {
      const double d = row[ch] - mean[ch];
      var[ch] += d * d;
    }
  }
  for (std::int64_t ch = 0; ch < c; ++ch) var[ch] /= static_cast<double>(m);

  BatchNormTrainResult r{Tensor(input.shape()),
                         BatchNormCache{Tensor(input.shape()), {}},
                         Tensor(p.running_mean.shape()),
                         Tensor(p.running_var.shape())};
  r.cache.inv_std.resize(static_cast<std::size_t>(c));
  for (std::int64_t ch = 0; ch < c; ++ch) {
    r.cache.inv_std[ch] = 1.0 / std::sqrt(var[ch] + p.epsilon);
    r.new_running_mean[ch] =
        p.momentum * p.running_mean[ch] + (1.0 - p.momentum) * mean[ch];
    r.new_running_var[ch] =
        p.momentum * p.running_var[ch] + (1.0 - p.momentum) * var[ch];
  }
  const double* gamma = p.gamma.data();
  const double* beta = p.beta.data();
  double* xhat = r.cache.normalized.data();
  double* op = r.output.data();
  for (std::int64_t i = 0; i < m; ++i) {
    const double* row = in + i * c;
    double* xrow = xhat + i * c;
    double* orow = op + i * c;
    for (std::int64_t ch = 0; ch < c; ++ch) {
      const double xh = (row[ch] - mean[ch]) * r.cache.inv_std[ch];
      xrow[ch] = xh;
      orow[ch] = gamma[ch] * xh + beta[ch];
    }
  }
  return r;
}

inline Tensor batch_norm_infer(const Tensor& input, const BatchNormParams& p) {
  detail::check_bn_shapes(input, p);
  const std::int64_t c = input.dim(3);
  const std::int64_t m = input.size() / c;
  Tensor out(input.shape());
  std::vector<double> scale(static_cast<std::size_t>(c));
  std::vector<double> shift(static_cast<std::size_t>(c));
  for (std::int64_t ch = 0; ch < c; ++ch) {
    const double inv = 1.0 / std::sqrt(p.running_var[ch] + p.epsilon);
    scale[ch] = p.gamma[ch] * inv;
    shift[ch] = p.beta[ch] - p.running_mean[ch] * scale[ch];
  }
  const double* in = input.data();
  double* op = out.data();
  for (std::int64_t i = 0; i < m; ++i) {
    const double* row = in + i * c;
    double* orow = op + i * c;
    for (std::int64_t ch = 0; ch < c; ++ch) {
      orow[ch] = row[ch] * scale[ch] + shift[ch];
    }
  }
  return out;
}

inline Tensor batch_norm(const Tensor& input, const BatchNormParams& p,
                         Mode mode) {
  if (mode == Mode::infer) return batch_norm_infer(input, p);
  return batch_norm_train(input, p).output;
}

struct BatchNormGrads {
  Tensor input_grad;
  Tensor gamma_grad;
  Tensor beta_grad;
};

// Gradient through the batch statistics:
//   dx = gamma*inv_std*(dy - mean(dy) - xhat*mean(dy*xhat))
inline BatchNormGrads batch_norm_backward(const BatchNormCache& cache,
                                          const BatchNormParams& p,
                                          const Tensor& out_grad) {
  if (!cache.normalized.same_shape(out_grad)) {
    throw ShapeError("batch_norm_backward shape mismatch");
  }
  const std::int64_t c = out_grad.dim(3);
  const std::int64_t m = out_grad.size() / c;
  BatchNormGrads g{Tensor(out_grad.shape()), Tensor(p.gamma.shape()),
                   Tensor(p.beta.shape())};
  const double* gy = out_grad.data();
  const double* xhat = cache.normalized.data();
  double* dgamma = g.gamma_grad.data();
  double* dbeta = g.beta_grad.data();
  for (std::int64_t i = 0; i < m; ++i) {
    const double* gyrow = gy + i * c;
    const double* xrow = xhat + i * c;
    for (std::int64_t ch = 0; ch < c; ++ch) {
      dgamma[ch] += gyrow[ch] * xrow[ch];
      dbeta[ch] += gyrow[ch];
    }
  }
  const double* gamma = p.gamma.data();
  double* gin = g.input_grad.data();
  const double inv_m = 1.0 / static_cast<double>(m);
  for (std::int64_t i = 0; i < m; ++i) {
    const double* gyrow = gy + i * c;
    const double* xrow = xhat + i * c;
    double* girow = gin + i * c;
    for (std::int64_t ch = 0; ch < c; ++ch) {
      girow[ch] = gamma[ch] * cache.inv_std[ch] *
                  (gyrow[ch] - inv_m * dbeta[ch] - xrow[ch] * inv_m * dgamma[ch]);
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// 2x2 max pooling, stride 2. H and W must be even. Backward routes the
// upstream gradient to the argmax; ties go to the lowest flat input index.
// ---------------------------------------------------------------------------

struct MaxPoolResult {
  Tensor output;                    // [N,H/2,W/2,C]
  std::vector<std::int64_t> argmax;  // flat input index per output element
  std::vector<std::int64_t> input_shape;
};

inline MaxPoolResult max_pool_2x2(const Tensor& input) {
  if (input.rank() != 4) {
    throw ShapeError("max_pool_2x2 input must be rank-4, got " +
                     input.shape_string());
  }
  const std::int64_t n_batch = input.dim(0), h = input.dim(1), w = input.dim(2);
  const std::int64_t c = input.dim(3);
  if (h % 2 != 0 || w % 2 != 0) {
    throw ShapeError("max_pool_2x2 needs even spatial dims, got " +
                     input.shape_string());
  }
  const std::int64_t oh = h / 2, ow = w / 2;
  MaxPoolResult r{Tensor({n_batch, oh, ow, c}), {}, input.shape()};
  r.argmax.resize(static_cast<std::size_t>(r.output.size()));
  const double* in = input.data();
  double* op = r.output.data();
  std::int64_t oi = 0;
  for (std::int64_t n = 0; n < n_batch; ++n) {
    for (std::int64_t y = 0; y < oh; ++y) {
      for (std::int64_t x = 0; x < ow; ++x) {
        for (std::int64_t ch = 0; ch < c; ++ch, ++oi) {
          double best = -std::numeric_limits<double>::infinity();
          std::int64_t best_idx = -1;
          for (std::int64_t dy = 0; dy < 2; ++dy) {
            for (std::int64_t dx = 0; dx < 2; ++dx) {
              const std::int64_t idx =
                  ((n * h + 2 * y + dy) * w + 2 * x + dx) * c + ch;
              if (in[idx] > best) {  // strict: first (lowest) index wins ties
                best = in[idx];
                best_idx = idx;
              }
            }
          }
          op[oi] = best;
          r.argmax[static_cast<std::size_t>(oi)] = best_idx;
        }
      }
    }
  }
  return r;
}

inline Tensor max_pool_2x2_backward(const MaxPoolResult& pooled,
                                    const Tensor& out_grad) {
  if (!pooled.output.same_shape(out_grad)) {
    throw ShapeError("max_pool_2x2_backward shape mismatch");
  }
  Tensor gin(pooled.input_shape);
  double* gp = gin.data();
  const double* gy = out_grad.data();
  for (std::int64_t i = 0, n = out_grad.size(); i < n; ++i) {
    gp[pooled.argmax[static_cast<std::size_t>(i)]] += gy[i];
  }
  return gin;
}

// ---------------------------------------------------------------------------
// Inverted dropout. Train mode zeroes each element with probability `rate`
// and scales survivors by 1/(1-rate); infer mode (and rate zero) is the
// exact identity and consumes no randomness.
// ---------------------------------------------------------------------------

struct DropoutResult {
  Tensor output;
  std::vector<std::uint8_t> kept;  // empty when the op was an identity
  double scale = 1.0;
};

inline DropoutResult dropout(const Tensor& input, double rate, Mode mode,
                             SeededRng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw InputError("dropout rate must lie in [0,1), got " +
                     std::to_string(rate));
  }
  DropoutResult r;
  if (mode == Mode::infer || rate == 0.0) {
    r.output = input;
    return r;
  }
  r.scale = 1.0 / (1.0 - rate);
  r.kept.resize(static_cast<std::size_t>(input.size()));
  r.output = Tensor(input.shape());
  const double* in = input.data();
  double* op = r.output.data();
  for (std::int64_t i = 0, n = input.size(); i < n; ++i) {
    const bool keep = rng.uniform() >= rate;
    r.kept[static_cast<std::size_t>(i)] = keep ? 1 : 0;
    op[i] = keep ? in[i] * r.scale : 0.0;
  }
  return r;
}

inline Tensor dropout_backward(const DropoutResult& forward,
                               const Tensor& out_grad) {
  if (!forward.output.same_shape(out_grad)) {
    throw ShapeError("dropout_backward shape mismatch");
  }
  if (forward.kept.empty()) {
    return out_grad;  // identity pass
  }
  Tensor gin(out_grad.shape());
  const double* gy = out_grad.data();
  double* gp = gin.data();
  for (std::int64_t i = 0, n = out_grad.size(); i < n; ++i) {
    gp[i] = forward.kept[static_cast<std::size_t>(i)] ? gy[i] * forward.scale
                                                      : 0.0;
  }
  return gin;
}

// ---------------------------------------------------------------------------
// Dense (fully connected), row-major [N,F] inputs.
// ---------------------------------------------------------------------------

struct DenseParams {
  Tensor weights;  // [in_features, out_features]
  Tensor bias;     // [out_features]
};

inline Tensor dense_forward(const Tensor& input, const DenseParams& p) {
  if (input.rank() != 2 || p.weights.rank() != 2) {
    throw ShapeError("dense expects rank-2 input and weights");
  }
  if (input.dim(1) != p.weights.dim(0)) {
    throw ShapeError("dense feature mismatch: input " + input.shape_string() +
                     " vs weights " + p.weights.shape_string());
  }
  if (p.bias.rank() != 1 || p.bias.dim(0) != p.weights.dim(1)) {
    throw ShapeError("dense bias shape mismatch");
  }
  Tensor out = matmul(input, p.weights);
  const double* bias = p.bias.data();
  double* op = out.data();
  const std::int64_t rows = out.dim(0), cols = out.dim(1);
  for (std::int64_t i = 0; i < rows; ++i) {
    double* orow = op + i * cols;
    for (std::int64_t j = 0; j < cols; ++j) orow[j] += bias[j];
  }
  return out;
}

struct DenseGrads {
  Tensor input_grad;   // [N, in]
  Tensor weight_grad;  // [in, out]
  Tensor bias_grad;    // [out]
};

inline DenseGrads dense_backward(const Tensor& input, const DenseParams& p,
                                 const Tensor& out_grad) {
  const std::int64_t n = input.dim(0), fin = input.dim(1);
  const std::int64_t fout = p.weights.dim(1);
  if (out_grad.rank() != 2 || out_grad.dim(0) != n || out_grad.dim(1) != fout) {
    throw ShapeError("dense_backward out_grad shape mismatch");
  }
  DenseGrads g{Tensor({n, fin}), Tensor({fin, fout}), Tensor({fout})};
  const double* in = input.data();
  const double* wp = p.weights.data();
  const double* gy = out_grad.data();
  double* gin = g.input_grad.data();
  double* gw = g.weight_grad.data();
  double* gb = g.bias_grad.data();
  for (std::int64_t i = 0; i < n; ++i) {
    const double* gyrow = gy + i * fout;
    const double* irow = in + i * fin;
    double* girow = gin + i * fin;
    for (std::int64_t j = 0; j < fout; ++j) gb[j] += gyrow[j];
    for (std::int64_t k = 0; k < fin; ++k) {
      const double* wrow = wp + k * fout;
      double* gwrow = gw + k * fout;
      const double v = irow[k];
      double acc = 0.0;
      for (std::int64_t j = 0; j < fout; ++j) {
        acc += gyrow[j] * wrow[j];
        gwrow[j] += v * gyrow[j];
      }
      girow[k] = acc;
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// Tanh
// ---------------------------------------------------------------------------

inline Tensor tanh_activation(const Tensor& input) {
  Tensor out(input.shape());
  const double* in = input.data();
  double* op = out.data();
  for (std::int64_t i = 0, n = input.size(); i < n; ++i) {
    op[i] = std::tanh(in[i]);
  }
  return out;
}

inline Tensor tanh_backward(const Tensor& output, const Tensor& out_grad) {
  if (!output.same_shape(out_grad)) {
    throw ShapeError("tanh_backward shape mismatch");
  }
  Tensor gin(output.shape());
  const double* o = output.data();
  const double* gy = out_grad.data();
  double* gp = gin.data();
  for (std::int64_t i = 0, n = output.size(); i < n; ++i) {
    gp[i] = gy[i] * (1.0 - o[i] * o[i]);
  }
  return gin;
}

// ---------------------------------------------------------------------------
// Softmax over two classes, numerically stable (max-subtracted) per row.
// ---------------------------------------------------------------------------

inline Tensor softmax(const Tensor& logits) {
  if (logits.rank() != 2 || logits.dim(1) != 2) {
    throw ShapeError("softmax expects [N,2] logits, got " +
                     logits.shape_string());
  }
  const std::int64_t n = logits.dim(0);
  Tensor out({n, 2});
  for (std::int64_t i = 0; i < n; ++i) {
    const double a = logits(i, 0), b = logits(i, 1);
    const double m = a > b ? a : b;
    const double ea = std::exp(a - m), eb = std::exp(b - m);
    const double z = ea + eb;
    out(i, 0) = ea / z;
    out(i, 1) = eb / z;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Mean categorical cross-entropy over softmax probabilities, with the fused
// gradient w.r.t. the pre-softmax logits: (probs - onehot)/N.
// ---------------------------------------------------------------------------

struct CrossEntropyResult {
  double loss = 0.0;
  Tensor logit_grad;  // [N,2]
};

inline CrossEntropyResult cross_entropy_with_grad(
    const Tensor& probs, std::span<const std::uint8_t> labels) {
  if (probs.rank() != 2 || probs.dim(1) != 2) {
    throw ShapeError("cross_entropy expects [N,2] probabilities");
  }
  const std::int64_t n = probs.dim(0);
  if (static_cast<std::int64_t>(labels.size()) != n) {
    throw InputError("cross_entropy labels length " +
                     std::to_string(labels.size()) + " does not match batch " +
                     std::to_string(n));
  }
  CrossEntropyResult r;
  r.logit_grad = Tensor({n, 2});
  const double inv_n = 1.0 / static_cast<double>(n);
  double loss = 0.0;
  for (std::int64_t i = 0; i < n; ++i) {
    const std::uint8_t label = labels[static_cast<std::size_t>(i)];
    if (label > 1) {
      throw LabelError("class label must be 0 or 1, got " +
                       std::to_string(static_cast<int>(label)) + " at row " +
                       std::to_string(i));
    }
    const double p0 = probs(i, 0), p1 = probs(i, 1);
    const double row_sum = p0 + p1;
    if (std::abs(row_sum - 1.0) > 1e-9) {
      throw InputError("cross_entropy row " + std::to_string(i) +
                       " does not sum to 1 (got " + std::to_string(row_sum) +
                       ")");
    }
    const double p_label = label == 0 ? p0 : p1;
    loss -= std::log(p_label > 1e-12 ? p_label : 1e-12);
    r.logit_grad(i, 0) = (p0 - (label == 0 ? 1.0 : 0.0)) * inv_n;
    r.logit_grad(i, 1) = (p1 - (label == 1 ? 1.0 : 0.0)) * inv_n;
  }
  r.loss = loss * inv_n;
  return r;
}

// ---------------------------------------------------------------------------
// Residual merge: elementwise sum of the branch output and the skip input.
// Backward copies the upstream gradient to both operands unchanged.
// ---------------------------------------------------------------------------

inline Tensor residual_add(const Tensor& branch_out, const Tensor& skip_in) {
  return add_elementwise(branch_out, skip_in);
}

}  // namespace attacknet
