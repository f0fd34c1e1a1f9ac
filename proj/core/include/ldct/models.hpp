#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "ldct/layers.hpp"

namespace ldct {

enum class NetworkKind { dncnn, mlp };
enum class MlpActivation { tanh, relu };

/// Structural description of a denoiser.
///
/// dncnn: Conv(in->F)+ReLU, depth_modules x [Conv(F->F)+BN+ReLU], Conv(F->1).
/// CNN5/CNN10/CNN15 name the depth_modules count; the first and last
/// convolutions are additional. Middle convolutions carry no bias (the BN
/// shift absorbs it); the first and last do.
///
/// mlp: Linear(patch^2*in -> hidden) + act, Linear(hidden -> hidden) + act,
/// Linear(hidden -> patch^2). No residual: it predicts the clean patch.
struct NetworkSpec {
  NetworkKind kind = NetworkKind::dncnn;
  int depth_modules = 5;
  int in_channels = 1;
  int feature_channels = 64;
  int kernel = 3;
  bool residual = true;
  int mlp_patch = 13;
  int mlp_hidden = 511;
  MlpActivation mlp_activation = MlpActivation::tanh;
};

NetworkSpec dncnn_spec(int depth_modules, int in_channels,
                       int feature_channels = 64);
NetworkSpec mlp_spec(int in_channels);

/// Throws ParameterError when the spec violates its invariants.
void validate_spec(const NetworkSpec& spec);

template <typename T>
struct ConvLayer {
  Parameter<T> weight;                 // (out, in, kh, kw)
  std::optional<Parameter<T>> bias;    // (1, out, 1, 1)
  Tensor<T> cached_input;
};

template <typename T>
struct ReluLayer {
  Tensor<T> cached_input;
};

template <typename T>
struct TanhLayer {
  Tensor<T> cached_output;
};

template <typename T>
struct LinearLayer {
  Parameter<T> weight;  // (out, in, 1, 1)
  Parameter<T> bias;    // (1, out, 1, 1)
  Tensor<T> cached_input;
};

template <typename T>
struct NamedLayer {
  std::string name;
  std::variant<ConvLayer<T>, BatchNormState<T>, ReluLayer<T>, TanhLayer<T>,
               LinearLayer<T>>
      op;
};

template <typename T>
class NetworkT {
 public:
  NetworkSpec spec;
  std::vector<NamedLayer<T>> layers;
  std::uint64_t creation_seed = 0;

  Mode mode() const { return mode_; }
  void set_mode(Mode m) { mode_ = m; }

  /// Runs the layer stack. Training mode caches layer inputs for backward
  /// and updates batch-norm running statistics.
  Tensor<T> forward(const Tensor<T>& input);

  /// Backpropagates from the output gradient, adding parameter gradients
  /// into each Parameter::grad, and returns the input gradient. Must follow
  /// a training-mode forward.
  Tensor<T> backward(const Tensor<T>& upstream_grad);

  std::vector<Parameter<T>*> parameters();
  std::size_t parameter_count() const;
  void zero_grad();

 private:
  Mode mode_ = Mode::training;
};

using Network = NetworkT<float>;

/// Builds a network with Xavier weights, zero biases, BN gamma=1 / beta=0.
template <typename T>
NetworkT<T> build_network(const NetworkSpec& spec, Rng& rng);

template <typename T>
Tensor<T> forward(NetworkT<T>& network, const Tensor<T>& input, Mode mode);

/// denoised = primary_input_slice - network(full_input), inference mode.
/// Only residual networks support this; the MLP predicts images directly.
template <typename T>
Tensor<T> predict_denoised(NetworkT<T>& network,
                           const Tensor<T>& primary_input_slice,
                           const Tensor<T>& full_input);

/// Checkpoint directory: manifest.json (spec, layer list, BN statistics,
/// creation seed, format version) plus one .ten blob per parameter named
/// <layer>.<param>.ten. Round-trips are bitwise lossless.
void save_network(const Network& network, const std::filesystem::path& dir);
Network load_network(const std::filesystem::path& dir);

const char* to_string(NetworkKind kind);
const char* to_string(MlpActivation act);

}  // namespace ldct
