#pragma once

// Precision-independent view of the gradient checks. The f32 engine's analytic
// gradients are compared against central differences evaluated by the f64
// build on identical inputs, and the f64 build is also checked against itself.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

namespace fda {

struct GradSample {
  std::string leaf;
  int64_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

struct GradCaseResult {
  std::string name;
  bool network = false;
  std::vector<GradSample> samples;
};

struct GradRunParams {
  double h = 1e-3;
  int samples = 96;
  uint64_t seed = 7;
};

// Both builds' namespaces are inline (see tensor.hpp); always call these qualified.
namespace nn {
inline namespace f32 {
std::vector<GradCaseResult> run_registered(const GradRunParams& p);
}
inline namespace f64 {
std::vector<GradCaseResult> run_registered(const GradRunParams& p);
}
}  // namespace nn

struct GradSuiteOptions {
  /// Step of the f64 central differences used as the oracle.
  double h = 1e-5;
  /// Tolerance for f32 analytic vs f64 numeric.
  double tol = 1e-3;
  /// Tolerance for the f64 build against its own differences: single layers,
  /// then whole network paths.
  double tol_f64 = 1e-6;
  double tol_f64_network = 1e-5;
  /// Coordinates whose f64 analytic and numeric gradients are both below this
  /// are structurally zero and are checked absolutely instead of relatively.
  double zero_atol = 1e-7;
  /// Absolute bound on the f32 analytic gradient at structurally zero coordinates.
  double zero_atol_f32 = 1e-6;
  int samples = 96;
  int min_coords = 64;
  uint64_t seed = 7;
};

struct GradSuiteRow {
  std::string name;
  int coords = 0;       // relatively checked coordinates
  int zero_coords = 0;  // structurally zero coordinates
  double max_rel_f32 = 0.0;
  double max_rel_f64 = 0.0;
  double max_zero_abs_f32 = 0.0;
  std::string worst;
  bool passed = false;
};

/// |a - n| / max(1e-8, |a| + |n|).
inline double grad_rel_error(double analytic, double numeric) {
  const double den = std::abs(analytic) + std::abs(numeric);
  return std::abs(analytic - numeric) / (den > 1e-8 ? den : 1e-8);
}

std::vector<GradSuiteRow> run_gradient_suite(const GradSuiteOptions& opts = {});

}  // namespace fda
