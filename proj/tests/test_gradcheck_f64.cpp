#include "doctest.h"
#include "fda/gradcheck.hpp"

using namespace fda::nn;

static_assert(sizeof(Real) == 8);

TEST_CASE("f64 build passes its own finite-difference checks") {
  for (const auto& c : registered_checks()) {
    GradCheckOptions o = default_check_options();
    if (c.name.rfind("forward_", 0) == 0) o.tol = 1e-5;
    const GradCheckReport r = c.run(o);
    INFO(r.name << " rel=" << r.max_rel_err << " " << r.worst);
    CHECK(r.passed);
  }
}
