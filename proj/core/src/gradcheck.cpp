#include "ldct/gradcheck.hpp"

#include <cmath>

#include "ldct/models.hpp"

namespace ldct {

GradCheckReport finite_diff_check(
    const std::function<double(std::span<const double>)>& f,
    std::span<double> point, std::span<const double> analytic,
    const GradCheckOptions& options) {
  if (point.size() != analytic.size()) {
    throw ShapeError("finite_diff_check: gradient length does not match point");
  }

  GradCheckReport rep;
  auto numeric_at = [&](std::size_t i, double h) -> double {
    const double x0 = point[i];
    point[i] = x0 + h;
    const double fp = f(point);
    point[i] = x0 - h;
    const double fm = f(point);
    point[i] = x0;
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      return std::numeric_limits<double>::quiet_NaN();
    }
    return (fp - fm) / (2.0 * h);
  };
  auto rel_error = [&](double numeric, double exact) -> double {
    const double denom = std::max({std::fabs(numeric), std::fabs(exact),
                                   options.denominator_floor});
    return std::fabs(numeric - exact) / denom;
  };

  bool all_finite = true;
  for (std::size_t i = 0; i < point.size(); ++i) {
    if (options.exclude && options.exclude(i)) {
      ++rep.excluded;
      continue;
    }
    const double h = options.step_scale * std::max(1.0, std::fabs(point[i]));
    double numeric = numeric_at(i, h);
    if (std::isnan(numeric)) {
      rep.nonfinite = true;
      all_finite = false;
      continue;
    }
    double rel = rel_error(numeric, analytic[i]);
    if (rel > options.tolerance && options.refine_on_failure) {
      // Shrink the stencil until a nearby activation kink leaves it; the
      // contamination scales with h, so a genuinely biased gradient (the
      // +10% negative control) keeps failing at every step size.
      for (double refined_h = h / 2.0;
           rel > options.tolerance && refined_h > h / 128.0;
           refined_h /= 2.0) {
        numeric = numeric_at(i, refined_h);
        if (std::isnan(numeric)) {
          rep.nonfinite = true;
          all_finite = false;
          break;
        }
        rel = std::min(rel, rel_error(numeric, analytic[i]));
      }
      if (rep.nonfinite) continue;
    }
    if (rel > rep.max_rel_error) {
      rep.max_rel_error = rel;
      rep.worst_index = i;
    }
    ++rep.checked;
  }
  rep.pass = all_finite && rep.max_rel_error <= options.tolerance;
  return rep;
}

GradCheckReport merge_reports(const GradCheckReport& a, const GradCheckReport& b) {
  GradCheckReport m;
  m.max_rel_error = std::max(a.max_rel_error, b.max_rel_error);
  m.worst_index = a.max_rel_error >= b.max_rel_error ? a.worst_index : b.worst_index;
  m.checked = a.checked + b.checked;
  m.excluded = a.excluded + b.excluded;
  m.nonfinite = a.nonfinite || b.nonfinite;
  m.pass = a.pass && b.pass;
  return m;
}

namespace {

TensorD random_tensor(const Shape4& shape, Rng& rng, double lo = -1.0,
                      double hi = 1.0) {
  TensorD t(shape);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

double dot(const TensorD& a, const TensorD& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

void corrupt_tensor(TensorD& t) {
  for (std::size_t i = 0; i < t.size(); ++i) t[i] *= 1.1;
}

/// Runs one finite_diff_check over a tensor that the objective reads in place.
GradCheckReport check_tensor(
    const std::function<double(std::span<const double>)>& f, TensorD& point,
    const TensorD& analytic, const GradCheckOptions& options = {}) {
  return finite_diff_check(f, point.values(), analytic.values(), options);
}

GradCheckRow conv_case(Rng& rng, bool corrupt) {
  TensorD input = random_tensor({1, 2, 5, 5}, rng);
  TensorD kernels = random_tensor({3, 2, 3, 3}, rng, -0.5, 0.5);
  TensorD bias = random_tensor({1, 3, 1, 1}, rng, -0.2, 0.2);
  const TensorD u = random_tensor({1, 3, 5, 5}, rng);

  auto objective = [&](std::span<const double>) {
    return dot(conv2d_forward(input, kernels, &bias), u);
  };
  ConvGrads<double> g = conv2d_backward(u, input, kernels, true);
  if (corrupt) corrupt_tensor(g.kernel_grad);

  GradCheckReport rep = check_tensor(objective, input, g.input_grad);
  rep = merge_reports(rep, check_tensor(objective, kernels, g.kernel_grad));
  rep = merge_reports(rep, check_tensor(objective, bias, g.bias_grad));
  return {"conv2d", rep};
}

GradCheckRow relu_case(Rng& rng, bool corrupt) {
  TensorD input = random_tensor({1, 1, 4, 4}, rng);
  input[3] = 0.0;  // probe the kink exactly
  input[9] = 0.0;
  const TensorD u = random_tensor({1, 1, 4, 4}, rng);

  auto objective = [&](std::span<const double>) {
    return dot(relu_forward(input), u);
  };
  TensorD analytic = relu_backward(u, input);
  if (corrupt) corrupt_tensor(analytic);

  GradCheckOptions opts;
  opts.exclude = [&](std::size_t i) { return std::fabs(input[i]) <= 1e-3; };
  return {"relu", check_tensor(objective, input, analytic, opts)};
}

GradCheckRow batchnorm_case(Rng& rng, bool corrupt) {
  TensorD input = random_tensor({2, 2, 3, 3}, rng);
  BatchNormState<double> state(2);
  for (std::size_t c = 0; c < 2; ++c) {
    state.gamma.value[c] = rng.uniform(0.5, 1.5);
    state.beta.value[c] = rng.uniform(-0.5, 0.5);
  }
  const TensorD u = random_tensor({2, 2, 3, 3}, rng);

  auto objective = [&](std::span<const double>) {
    BatchNormState<double> scratch = state;
    return dot(batchnorm_forward(input, scratch, Mode::training), u);
  };
  BatchNormState<double> cache_state = state;
  batchnorm_forward(input, cache_state, Mode::training);
  BnGrads<double> g = batchnorm_backward(u, cache_state);
  if (corrupt) corrupt_tensor(g.input_grad);

  GradCheckReport rep = check_tensor(objective, input, g.input_grad);
  rep = merge_reports(rep,
                      check_tensor(objective, state.gamma.value, g.gamma_grad));
  rep = merge_reports(rep,
                      check_tensor(objective, state.beta.value, g.beta_grad));
  return {"batchnorm", rep};
}

GradCheckRow linear_case(Rng& rng, bool corrupt) {
  TensorD input = random_tensor({2, 5, 1, 1}, rng);
  TensorD weights = random_tensor({3, 5, 1, 1}, rng, -0.6, 0.6);
  TensorD bias = random_tensor({1, 3, 1, 1}, rng, -0.2, 0.2);
  const TensorD u = random_tensor({2, 3, 1, 1}, rng);

  auto objective = [&](std::span<const double>) {
    return dot(linear_forward(input, weights, &bias), u);
  };
  LinearGrads<double> g = linear_backward(u, input, weights, true);
  if (corrupt) corrupt_tensor(g.weight_grad);

  GradCheckReport rep = check_tensor(objective, input, g.input_grad);
  rep = merge_reports(rep, check_tensor(objective, weights, g.weight_grad));
  rep = merge_reports(rep, check_tensor(objective, bias, g.bias_grad));
  return {"linear", rep};
}

GradCheckRow loss_case(Rng& rng, bool corrupt) {
  TensorD pred = random_tensor({2, 1, 3, 3}, rng);
  const TensorD target = random_tensor({2, 1, 3, 3}, rng);

  auto objective = [&](std::span<const double>) {
    return l2_loss(pred, target).loss;
  };
  TensorD analytic = l2_loss(pred, target).prediction_grad;
  if (corrupt) corrupt_tensor(analytic);

  GradCheckOptions opts;
  opts.tolerance = 1e-6;  // quadratic loss; the stencil is exact to rounding
  return {"l2_loss", check_tensor(objective, pred, analytic, opts)};
}

GradCheckRow network_case(Rng& rng, bool corrupt) {
  NetworkSpec spec = dncnn_spec(/*depth_modules=*/3, /*in_channels=*/1,
                                /*feature_channels=*/5);
  NetworkT<double> net = build_network<double>(spec, rng);
  TensorD input = random_tensor({2, 1, 6, 6}, rng, -0.5, 0.5);
  const TensorD target = random_tensor({2, 1, 6, 6}, rng, -0.5, 0.5);

  auto objective = [&](std::span<const double>) {
    NetworkT<double> scratch = net;
    return l2_loss(scratch.forward(input), target).loss;
  };

  net.set_mode(Mode::training);
  net.zero_grad();
  LossResult<double> loss = l2_loss(net.forward(input), target);
  TensorD input_grad = net.backward(loss.prediction_grad);
  if (corrupt) corrupt_tensor(net.parameters().front()->grad);

  GradCheckReport rep = check_tensor(objective, input, input_grad);
  for (Parameter<double>* p : net.parameters()) {
    rep = merge_reports(rep, check_tensor(objective, p->value, p->grad));
  }
  return {"network_cnn3", rep};
}

}  // namespace

std::vector<GradCheckRow> run_layer_gradchecks(std::uint64_t seed,
                                               GradCheckCorruption corrupt) {
  Rng rng(derive_seed(seed, 0xfdc));
  std::vector<GradCheckRow> rows;
  rows.push_back(conv_case(rng, corrupt == GradCheckCorruption::conv));
  rows.push_back(relu_case(rng, corrupt == GradCheckCorruption::relu));
  rows.push_back(batchnorm_case(rng, corrupt == GradCheckCorruption::batchnorm));
  rows.push_back(linear_case(rng, corrupt == GradCheckCorruption::linear));
  rows.push_back(loss_case(rng, corrupt == GradCheckCorruption::loss));
  rows.push_back(network_case(rng, corrupt == GradCheckCorruption::network));
  return rows;
}

}  // namespace ldct
