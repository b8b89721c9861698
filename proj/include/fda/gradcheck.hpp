#pragma once

// Central finite-difference verification of reverse-mode gradients.

#include <functional>
#include <string>
#include <vector>

#include "fda/gradsuite.hpp"
#include "fda/tensor.hpp"

namespace fda::nn {
inline namespace FDA_NN_ABI {

struct GradCheckOptions {
  double h = 1e-3;
  double tol = 1e-3;
  int samples = 64;
  uint64_t seed = 7;
  /// Coordinates where both gradients are at most this are compared absolutely.
  double zero_atol = 0.0;
};

/// Tolerance defaults for the compiled scalar type.
GradCheckOptions default_check_options();

struct GradCheckReport {
  std::string name;
  int coords = 0;
  double max_rel_err = 0.0;
  double max_abs_err = 0.0;
  std::string worst;
  bool passed = false;
  std::vector<GradSample> samples;
};

struct Leaf {
  std::string name;
  Tensor tensor;
};

/// Checks d<r, f(x)>/dx for a fixed random cotangent r against central
/// differences on `opts.samples` distinct coordinates spread over the leaves.
/// The projection is accumulated in double. Per coordinate the error is
/// |analytic - numeric| / max(1e-8, |analytic| + |numeric|). Random inputs and
/// cotangents are rounded to float so that both builds see identical values.
GradCheckReport grad_check(const std::string& name, const std::function<Tensor()>& f, const std::vector<Leaf>& leaves,
                           const GradCheckOptions& opts);

struct GradCheckCase {
  std::string name;
  std::function<GradCheckReport(const GradCheckOptions&)> run;
};

/// Every primitive, both losses, a composed block and the two network paths.
const std::vector<GradCheckCase>& registered_checks();

}  // namespace FDA_NN_ABI
}  // namespace fda::nn
