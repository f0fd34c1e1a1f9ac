#include "ldct/optim.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

namespace ldct {

void validate_config(const TrainConfig& config) {
  if (!(config.beta1 > 0.0 && config.beta1 < 1.0) ||
      !(config.beta2 > 0.0 && config.beta2 < 1.0)) {
    throw ParameterError("adam moment decays must lie in (0, 1)");
  }
  if (!(config.learning_rate > 0.0)) {
    throw ParameterError("learning_rate must be positive");
  }
  if (config.minibatch < 1) {
    throw ParameterError("minibatch must be >= 1");
  }
  if (config.weight_penalty < 0.0) {
    throw ParameterError("weight_penalty must be non-negative");
  }
  if (config.loss_record_interval < 1) {
    throw ParameterError("loss_record_interval must be >= 1");
  }
}

template <typename T>
void adam_step(const std::vector<Parameter<T>*>& parameters,
               AdamState<T>& state, const TrainConfig& config) {
  validate_config(config);

  if (state.first_moment.empty()) {
    state.first_moment.reserve(parameters.size());
    state.second_moment.reserve(parameters.size());
    for (const Parameter<T>* p : parameters) {
      state.first_moment.emplace_back(p->value.shape());
      state.second_moment.emplace_back(p->value.shape());
    }
  }
  if (state.first_moment.size() != parameters.size()) {
    throw ContractError("adam state does not match the parameter list");
  }

  // Poisoned-update guard: abort before mutating anything.
  for (const Parameter<T>* p : parameters) {
    if (!p->grad.all_finite()) {
      throw NumericError("non-finite gradient in parameter '" + p->name +
                         "'; step aborted");
    }
  }

  const long long t = state.step_count + 1;
  const T beta1 = static_cast<T>(config.beta1);
  const T beta2 = static_cast<T>(config.beta2);
  const T eps = static_cast<T>(config.epsilon);
  const T lr = static_cast<T>(config.learning_rate);
  const T penalty = static_cast<T>(config.weight_penalty);
  const T bc1 = static_cast<T>(1.0 - std::pow(config.beta1, static_cast<double>(t)));
  const T bc2 = static_cast<T>(1.0 - std::pow(config.beta2, static_cast<double>(t)));

  for (std::size_t pi = 0; pi < parameters.size(); ++pi) {
    Parameter<T>& p = *parameters[pi];
    Tensor<T>& m = state.first_moment[pi];
    Tensor<T>& v = state.second_moment[pi];
    if (!p.value.same_shape(m)) {
      throw ContractError("adam moment shape does not match parameter '" +
                          p.name + "'");
    }
    const bool penalized = p.penalized && penalty > T{0};
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const T g = penalized ? p.grad[i] + penalty * p.value[i] : p.grad[i];
      m[i] = beta1 * m[i] + (T{1} - beta1) * g;
      v[i] = beta2 * v[i] + (T{1} - beta2) * g * g;
      const T m_hat = m[i] / bc1;
      const T v_hat = v[i] / bc2;
      p.value[i] -= lr * m_hat / (std::sqrt(v_hat) + eps);
    }
    p.zero_grad();
  }
  state.step_count = t;
}

template void adam_step<float>(const std::vector<Parameter<float>*>&,
                               AdamState<float>&, const TrainConfig&);
template void adam_step<double>(const std::vector<Parameter<double>*>&,
                                AdamState<double>&, const TrainConfig&);

TrainResult training_loop(Network& network, const BatchSource& next_batch,
                          const TrainConfig& config) {
  validate_config(config);
  TrainResult result;
  if (config.total_iterations == 0) return result;

  network.set_mode(Mode::training);
  std::vector<Parameter<float>*> params = network.parameters();
  AdamState<float> state;
  TensorF input;
  TensorF target;

  for (std::size_t it = 0; it < config.total_iterations; ++it) {
    next_batch(input, target);
    const TensorF output = network.forward(input);
    LossResult<float> loss = l2_loss(output, target);
    if (!std::isfinite(loss.loss)) {
      throw TrainingDiverged(it + 1);
    }
    network.backward(loss.prediction_grad);
    adam_step(params, state, config);
    if ((it + 1) % config.loss_record_interval == 0) {
      result.trace.push_back({it + 1, loss.loss});
    }
  }
  return result;
}

void write_loss_trace_csv(const std::vector<LossTracePoint>& trace,
                          const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) {
    throw FormatError("cannot write loss trace: " + path.string());
  }
  f << "iteration,loss\n";
  char line[64];
  for (const LossTracePoint& p : trace) {
    std::snprintf(line, sizeof(line), "%zu,%.17g\n", p.iteration, p.loss);
    f << line;
  }
}

}  // namespace ldct
