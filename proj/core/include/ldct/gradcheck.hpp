#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace ldct {

struct GradCheckOptions {
  double tolerance = 1e-4;
  /// Central-difference step: h = step_scale * max(1, |x|).
  double step_scale = 1e-4;
  /// Relative error denominator: max(|analytic|, |numeric|, floor).
  double denominator_floor = 1e-3;
  /// Indices to skip (kink points such as ReLU inputs at 0); they are
  /// counted as excluded, never failed.
  std::function<bool(std::size_t)> exclude;
  /// When the h step disagrees, retry with h/2 before declaring failure.
  /// Filters out kink contamination of the difference stencil; a biased
  /// analytic gradient still fails at every step size.
  bool refine_on_failure = true;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t excluded = 0;
  std::size_t worst_index = 0;
  bool nonfinite = false;
  bool pass = false;
};

/// Compares `analytic` against central finite differences of `f` at `point`,
/// elementwise, in 64-bit arithmetic. `point` is perturbed in place and
/// restored before returning.
GradCheckReport finite_diff_check(
    const std::function<double(std::span<const double>)>& f,
    std::span<double> point, std::span<const double> analytic,
    const GradCheckOptions& options = {});

GradCheckReport merge_reports(const GradCheckReport& a, const GradCheckReport& b);

enum class GradCheckCorruption { none, conv, batchnorm, linear, relu, loss, network };

struct GradCheckRow {
  std::string primitive;
  GradCheckReport report;
};

/// Finite-difference suite over every layer primitive plus a small composed
/// residual CNN (3 middle modules), evaluated in double precision.
/// `corrupt` biases the named analytic gradient by +10% as a negative control.
std::vector<GradCheckRow> run_layer_gradchecks(
    std::uint64_t seed, GradCheckCorruption corrupt = GradCheckCorruption::none);

}  // namespace ldct
