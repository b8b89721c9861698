#include "fda/gradsuite.hpp"

#include <algorithm>
#include <cmath>

namespace fda {

std::vector<GradSuiteRow> run_gradient_suite(const GradSuiteOptions& opts) {
  const GradRunParams p{opts.h, opts.samples, opts.seed};
  const auto single = nn::f32::run_registered(p);
  const auto dbl = nn::f64::run_registered(p);
  std::vector<GradSuiteRow> rows;
  for (size_t c = 0; c < single.size(); ++c) {
    const auto& s32 = single[c].samples;
    const auto& s64 = dbl[c].samples;
    GradSuiteRow row;
    row.name = single[c].name;
    bool ok = dbl[c].name == row.name && s32.size() == s64.size();
    double worst = -1.0;
    for (size_t i = 0; ok && i < s32.size(); ++i) {
      const GradSample& a = s32[i];
      const GradSample& b = s64[i];
      if (a.leaf != b.leaf || a.index != b.index) {
        ok = false;
        break;
      }
      if (std::abs(b.analytic) <= opts.zero_atol && std::abs(b.numeric) <= opts.zero_atol) {
        ++row.zero_coords;
        row.max_zero_abs_f32 = std::max(row.max_zero_abs_f32, std::abs(a.analytic));
        continue;
      }
      ++row.coords;
      const double e32 = grad_rel_error(a.analytic, b.numeric);
      row.max_rel_f32 = std::max(row.max_rel_f32, e32);
      row.max_rel_f64 = std::max(row.max_rel_f64, grad_rel_error(b.analytic, b.numeric));
      if (e32 > worst) {
        worst = e32;
        row.worst = a.leaf + "[" + std::to_string(a.index) + "] f32=" + std::to_string(a.analytic) +
                    " fd64=" + std::to_string(b.numeric);
      }
    }
    const int available = static_cast<int>(s32.size());
    row.passed = ok && row.coords >= std::min(opts.min_coords, available - row.zero_coords) &&
                 row.max_rel_f32 <= opts.tol && row.max_rel_f64 <= (single[c].network ? opts.tol_f64_network : opts.tol_f64) &&
                 row.max_zero_abs_f32 <= opts.zero_atol_f32;
    rows.push_back(row);
  }
  return rows;
}

}  // namespace fda
