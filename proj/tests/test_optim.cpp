#include <doctest.h>

#include <cmath>
#include <fstream>

#include "ldct/optim.hpp"
#include "test_util.hpp"

using namespace ldct;

namespace {

template <typename T>
Parameter<T> scalar_param(T value, bool penalized) {
  return Parameter<T>(Tensor<T>(1, 1, 1, 1, value), "p", penalized);
}

TrainConfig no_penalty_config() {
  TrainConfig c;
  c.weight_penalty = 0.0;
  return c;
}

}  // namespace

TEST_CASE("first adam step moves by about the learning rate") {
  auto p = scalar_param<float>(0.0f, false);
  p.grad.fill(1.0f);
  AdamState<float> state;
  const TrainConfig config = no_penalty_config();
  adam_step<float>({&p}, state, config);
  // m_hat = 1, v_hat = 1 after bias correction, so the step is lr/(1+eps).
  CHECK(std::fabs(std::fabs(p.value[0]) - config.learning_rate) <=
        config.learning_rate * 1e-3);
  CHECK(p.value[0] < 0.0f);
  CHECK(p.grad[0] == 0.0f);  // gradients zeroed after application
  CHECK(state.step_count == 1);
}

TEST_CASE("zero gradient and zero penalty change nothing") {
  auto p = scalar_param<float>(0.75f, true);
  AdamState<float> state;
  adam_step<float>({&p}, state, no_penalty_config());
  CHECK(p.value[0] == 0.75f);
}

TEST_CASE("two constant-gradient steps match the hand trace in 64-bit") {
  auto p = scalar_param<double>(0.0, false);
  AdamState<double> state;
  const TrainConfig config = no_penalty_config();
  for (int step = 0; step < 2; ++step) {
    p.grad.fill(1.0);
    adam_step<double>({&p}, state, config);
  }
  // With g = 1 every step, both bias-corrected moments stay exactly 1, so
  // theta_t = -t * lr / (1 + eps).
  const double expected = -2.0 * config.learning_rate / (1.0 + config.epsilon);
  CHECK(std::fabs(p.value[0] - expected) <= std::fabs(expected) * 1e-9);
}

TEST_CASE("weight penalty couples into the gradient only for weights") {
  TrainConfig config;
  config.weight_penalty = 1e-2;

  auto weight = scalar_param<float>(0.5f, true);
  auto bias = scalar_param<float>(0.5f, false);
  AdamState<float> sw, sb;
  // Zero raw gradients: only the penalty can move the weight.
  adam_step<float>({&weight}, sw, config);
  adam_step<float>({&bias}, sb, config);
  CHECK(weight.value[0] < 0.5f);
  CHECK(bias.value[0] == 0.5f);
}

TEST_CASE("update magnitude is bounded by 2 lr") {
  Rng rng(41);
  TrainConfig config = no_penalty_config();
  auto p = Parameter<float>(test::random_tensor<float>({1, 1, 4, 4}, rng), "p");
  AdamState<float> state;
  TensorF before = p.value;
  for (int step = 0; step < 50; ++step) {
    for (std::size_t i = 0; i < p.grad.size(); ++i) {
      p.grad[i] = static_cast<float>(rng.uniform(-3.0, 3.0));
    }
    before = p.value;
    adam_step<float>({&p}, state, config);
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      CHECK(std::fabs(p.value[i] - before[i]) <= 2.0 * config.learning_rate);
    }
  }
}

TEST_CASE("non-finite gradient aborts the step untouched") {
  auto p = scalar_param<float>(1.0f, false);
  AdamState<float> state;
  adam_step<float>({&p}, state, no_penalty_config());  // warm the state
  const float value_after_one = p.value[0];

  p.grad.fill(std::numeric_limits<float>::quiet_NaN());
  CHECK_THROWS_AS(adam_step<float>({&p}, state, no_penalty_config()),
                  NumericError);
  CHECK(p.value[0] == value_after_one);
  CHECK(state.step_count == 1);
}

TEST_CASE("config validation") {
  TrainConfig c;
  c.beta1 = 1.0;
  CHECK_THROWS_AS(validate_config(c), ParameterError);
  c = TrainConfig{};
  c.learning_rate = 0.0;
  CHECK_THROWS_AS(validate_config(c), ParameterError);
  c = TrainConfig{};
  c.minibatch = 0;
  CHECK_THROWS_AS(validate_config(c), ParameterError);
}

namespace {

BatchSource constant_batch_source(float input_value, float target_value) {
  return [=](TensorF& in, TensorF& tgt) {
    in = TensorF(4, 1, 8, 8, input_value);
    tgt = TensorF(4, 1, 8, 8, target_value);
  };
}

NetworkSpec tiny_spec() { return dncnn_spec(1, 1, 4); }

}  // namespace

TEST_CASE("zero-iteration training leaves parameters bitwise unchanged") {
  Rng rng(42);
  Network net = build_network<float>(tiny_spec(), rng);
  std::vector<TensorF> snapshot;
  for (Parameter<float>* p : net.parameters()) snapshot.push_back(p->value);

  TrainConfig config;
  config.total_iterations = 0;
  const TrainResult result =
      training_loop(net, constant_batch_source(0.1f, 0.0f), config);
  CHECK(result.trace.empty());
  const auto params = net.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    CHECK(params[i]->value == snapshot[i]);
  }
}

TEST_CASE("training is deterministic for a fixed seed") {
  auto run = [] {
    Rng rng(43);
    Network net = build_network<float>(tiny_spec(), rng);
    Rng data_rng(44);
    TrainConfig config;
    config.total_iterations = 30;
    config.minibatch = 4;
    training_loop(
        net,
        [&](TensorF& in, TensorF& tgt) {
          in = test::random_tensor<float>({4, 1, 8, 8}, data_rng);
          tgt = test::random_tensor<float>({4, 1, 8, 8}, data_rng, -0.1, 0.1);
        },
        config);
    return net;
  };
  Network a = run();
  Network b = run();
  const auto pa = a.parameters();
  const auto pb = b.parameters();
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i]->value == pb[i]->value);
  }
}

TEST_CASE("training reduces the loss on a constant problem") {
  Rng rng(45);
  Network net = build_network<float>(tiny_spec(), rng);
  TrainConfig config;
  config.total_iterations = 200;
  config.learning_rate = 1e-3;
  config.loss_record_interval = 10;
  const TrainResult result =
      training_loop(net, constant_batch_source(0.5f, 0.25f), config);
  REQUIRE(result.trace.size() == 20);
  CHECK(result.trace.front().iteration == 10);
  CHECK(result.trace.back().iteration == 200);
  CHECK(result.trace.back().loss < result.trace.front().loss);
}

TEST_CASE("divergence reports the iteration index") {
  Rng rng(46);
  Network net = build_network<float>(tiny_spec(), rng);
  TrainConfig config;
  config.total_iterations = 10;
  // A poisoned target drives the loss itself non-finite (a NaN input would
  // be masked to zero by the first ReLU before reaching the loss).
  const float poison = std::numeric_limits<float>::quiet_NaN();
  try {
    training_loop(net, constant_batch_source(0.1f, poison), config);
    FAIL("expected TrainingDiverged");
  } catch (const TrainingDiverged& e) {
    CHECK(e.iteration == 1);
  }
}

TEST_CASE("loss trace csv format") {
  test::TempDir dir("trace");
  const std::vector<LossTracePoint> trace{{100, 0.5}, {200, 0.25}};
  const auto path = dir.path / "loss.csv";
  write_loss_trace_csv(trace, path);
  std::ifstream f(path);
  std::string line;
  std::getline(f, line);
  CHECK(line == "iteration,loss");
  std::getline(f, line);
  CHECK(line.substr(0, 4) == "100,");
}
