#include "doctest.h"
#include "fda/gradsuite.hpp"

using namespace fda;

TEST_CASE("f32 gradients agree with f64 central differences") {
  const auto rows = run_gradient_suite();
  CHECK(rows.size() >= 23);
  for (const auto& r : rows) {
    INFO(r.name << " coords=" << r.coords << " rel32=" << r.max_rel_f32 << " rel64=" << r.max_rel_f64 << " "
                << r.worst);
    CHECK(r.passed);
    CHECK(r.coords >= 64);
  }
}

TEST_CASE("relative error formula") {
  CHECK(grad_rel_error(1.0, 1.0) == 0.0);
  CHECK(grad_rel_error(1.0, -1.0) == 1.0);
  CHECK(grad_rel_error(0.0, 1e-9) == doctest::Approx(0.1));
}
