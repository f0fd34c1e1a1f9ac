#pragma once

#include <cstdint>

#include "ldct/rng.hpp"
#include "ldct/tensor.hpp"

namespace ldct {

enum class Mode { training, inference };

// ---------------------------------------------------------------------------
// Convolution, stride 1, zero padding (kh-1)/2 x (kw-1)/2 (extents preserved).
// Kernels are (out_ch, in_ch, kh, kw); kh and kw must be odd. Bias, when
// present, holds one value per output channel.

template <typename T>
struct ConvGrads {
  Tensor<T> input_grad;
  Tensor<T> kernel_grad;
  Tensor<T> bias_grad;  // empty when the layer has no bias
};

template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& input, const Tensor<T>& kernels,
                         const Tensor<T>* bias = nullptr);

template <typename T>
ConvGrads<T> conv2d_backward(const Tensor<T>& upstream_grad,
                             const Tensor<T>& cached_input,
                             const Tensor<T>& kernels, bool has_bias);

// ---------------------------------------------------------------------------
// ReLU. The subgradient at exactly 0 is 0.

template <typename T>
Tensor<T> relu_forward(const Tensor<T>& input);

template <typename T>
Tensor<T> relu_backward(const Tensor<T>& upstream_grad,
                        const Tensor<T>& cached_input);

// ---------------------------------------------------------------------------
// Batch normalization over (batch, height, width) per channel.

template <typename T>
struct BnCache {
  Tensor<T> xhat;              // normalized activations from the last training pass
  std::vector<T> inv_std;      // per-channel 1/sqrt(var + eps)
  bool valid = false;
};

template <typename T>
struct BatchNormState {
  Parameter<T> gamma;          // (1, C, 1, 1), init 1
  Parameter<T> beta;           // (1, C, 1, 1), init 0
  Tensor<T> running_mean;      // (1, C, 1, 1)
  Tensor<T> running_var;       // (1, C, 1, 1)
  T momentum = T(0.9);         // running <- momentum*running + (1-momentum)*batch
  T epsilon = T(1e-5);
  bool stats_ready = false;    // at least one training-mode pass has run
  BnCache<T> cache;

  BatchNormState() = default;
  explicit BatchNormState(std::size_t channels);

  std::size_t channels() const { return gamma.value.channels(); }
};

/// Training mode standardizes with batch statistics and updates the running
/// averages; inference mode standardizes with the running statistics and
/// requires them to be initialized.
template <typename T>
Tensor<T> batchnorm_forward(const Tensor<T>& input, BatchNormState<T>& state,
                            Mode mode);

template <typename T>
struct BnGrads {
  Tensor<T> input_grad;
  Tensor<T> gamma_grad;
  Tensor<T> beta_grad;
};

/// Exact gradients of the training-mode map, including the dependence of the
/// batch statistics on the input. Requires the cache of a training forward.
template <typename T>
BnGrads<T> batchnorm_backward(const Tensor<T>& upstream_grad,
                              const BatchNormState<T>& state);

// ---------------------------------------------------------------------------
// Fully connected layer. The input is flattened to (batch, features);
// weights are (out_features, in_features) stored as a (out, in, 1, 1) tensor.

template <typename T>
Tensor<T> linear_forward(const Tensor<T>& input, const Tensor<T>& weights,
                         const Tensor<T>* bias = nullptr);

template <typename T>
struct LinearGrads {
  Tensor<T> input_grad;   // restored to the cached input's shape
  Tensor<T> weight_grad;
  Tensor<T> bias_grad;
};

template <typename T>
LinearGrads<T> linear_backward(const Tensor<T>& upstream_grad,
                               const Tensor<T>& cached_input,
                               const Tensor<T>& weights, bool has_bias);

// ---------------------------------------------------------------------------
// Loss: sum of squared differences over 2*batch.

template <typename T>
struct LossResult {
  double loss = 0.0;
  Tensor<T> prediction_grad;  // (prediction - target) / batch
};

template <typename T>
LossResult<T> l2_loss(const Tensor<T>& prediction, const Tensor<T>& target);

// ---------------------------------------------------------------------------
// Xavier initialization: uniform on [-sqrt(3/fan_in), +sqrt(3/fan_in)],
// i.e. variance 1/fan_in. Biases are zero-initialized by the caller.

template <typename T>
Tensor<T> xavier_init(const Shape4& shape, std::size_t fan_in, Rng& rng);

}  // namespace ldct
