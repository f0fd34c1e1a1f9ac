#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <vector>

#include "ldct/models.hpp"

namespace ldct {

/// Training hyperparameters. Defaults follow the CNN training recipe:
/// ADAM with the customary moment decays, learning rate 1e-4, L2 weight
/// penalty 1e-4, minibatches of 100 patches, 90,000 iterations (the MLP
/// baseline trains for 900,000).
struct TrainConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_penalty = 1e-4;
  std::size_t minibatch = 100;
  std::size_t total_iterations = 90'000;
  std::uint64_t seed = 1;
  std::size_t loss_record_interval = 100;
};

void validate_config(const TrainConfig& config);

template <typename T>
struct AdamState {
  std::vector<Tensor<T>> first_moment;
  std::vector<Tensor<T>> second_moment;
  long long step_count = 0;
};

/// One ADAM step. The effective gradient is g + weight_penalty * theta for
/// penalized parameters (conv/linear weights); biases and batch-norm
/// scale/shift see the raw gradient. Applies the bias-corrected update and
/// zeroes gradients. A non-finite gradient aborts the step with NumericError
/// before any parameter or moment is touched.
template <typename T>
void adam_step(const std::vector<Parameter<T>*>& parameters,
               AdamState<T>& state, const TrainConfig& config);

struct LossTracePoint {
  std::size_t iteration = 0;  // 1-based count of completed iterations
  double loss = 0.0;
};

struct TrainingDiverged : NumericError {
  std::size_t iteration;
  explicit TrainingDiverged(std::size_t it)
      : NumericError("training loss became non-finite at iteration " +
                     std::to_string(it)),
        iteration(it) {}
};

/// Fills the next (input, target) minibatch; must be deterministic given the
/// run's seed.
using BatchSource = std::function<void(TensorF& input, TensorF& target)>;

struct TrainResult {
  std::vector<LossTracePoint> trace;
};

/// Runs config.total_iterations steps at a constant learning rate, recording
/// the minibatch loss every loss_record_interval iterations. Leaves the
/// network in training mode with running statistics up to date.
TrainResult training_loop(Network& network, const BatchSource& next_batch,
                          const TrainConfig& config);

/// CSV with header "iteration,loss".
void write_loss_trace_csv(const std::vector<LossTracePoint>& trace,
                          const std::filesystem::path& path);

}  // namespace ldct
