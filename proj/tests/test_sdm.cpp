#include <cmath>
#include <limits>

#include "doctest.h"
#include "fda/phantom.hpp"
#include "fda/sdm.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace fda;
using namespace fda::sdm;

namespace {

int64_t brute_surface_count(const MaskVolume& m) {
  int64_t n = 0;
  const Shape3 s = m.shape;
  for (int64_t z = 0; z < s.d; ++z)
    for (int64_t y = 0; y < s.h; ++y)
      for (int64_t x = 0; x < s.w; ++x) {
        if (!m.at(z, y, x)) continue;
        bool border = z == 0 || y == 0 || x == 0 || z == s.d - 1 || y == s.h - 1 || x == s.w - 1;
        border = border || !m.at(z - 1, y, x) || !m.at(z + 1, y, x) || !m.at(z, y - 1, x) || !m.at(z, y + 1, x) ||
                 !m.at(z, y, x - 1) || !m.at(z, y, x + 1);
        n += border;
      }
  return n;
}

}  // namespace

TEST_CASE("extract_surface") {
  SUBCASE("isolated voxel is surface") {
    MaskVolume m({3, 3, 3});
    m.at(1, 1, 1) = 1;
    const auto s = extract_surface(m);
    REQUIRE(s.size() == 1);
    CHECK(s[0] == Voxel{1, 1, 1});
  }
  SUBCASE("solid 4x4x4 cube: 64 - 8 interior = 56") {
    const MaskVolume m = fda::testing::box_mask({6, 6, 6}, {1, 1, 1}, {4, 4, 4});
    CHECK(extract_surface(m).size() == 56);
    CHECK(brute_surface_count(m) == 56);
  }
  SUBCASE("grid boundary counts as background") {
    const MaskVolume m = fda::testing::box_mask({4, 4, 4}, {0, 0, 0}, {3, 3, 3});
    CHECK(extract_surface(m).size() == 56);
  }
  SUBCASE("empty") { CHECK(extract_surface(MaskVolume({3, 3, 3})).empty()); }
}

TEST_CASE("signed distance: unit neighbours of a single voxel") {
  MaskVolume m({5, 5, 5});
  m.at(2, 2, 2) = 1;
  const Grid<double> raw = signed_distance(m);
  CHECK(raw.at(2, 2, 2) == 0.0);
  for (const Voxel& d : neighborhood(6)) CHECK(raw.at(2 + d.z, 2 + d.y, 2 + d.x) == 1.0);
  CHECK(raw.at(0, 0, 0) == doctest::Approx(std::sqrt(12.0)));
}

TEST_CASE("empty foreground is rejected") {
  CHECK_THROWS_AS(sdm_compute(MaskVolume({4, 4, 4})), ValidationError);
}

TEST_CASE("exact transform equals brute force on random masks") {
  for (uint64_t seed = 0; seed < 12; ++seed) {
    CounterRng rng(seed);
    const Shape3 s{1 + int64_t(rng.below(16)), 1 + int64_t(rng.below(16)), 1 + int64_t(rng.below(16))};
    MaskVolume m = fda::testing::random_mask(s, rng.uniform(0.05, 0.9), seed + 100);
    if (count_foreground(m) == 0) m.data[0] = 1;
    const auto oracle = fda::testing::brute_force_signed_sq(m);
    const MaskVolume surf = surface_mask(m);
    const Grid<int64_t> sq = squared_distance_transform(surf);
    for (int64_t i = 0; i < s.numel(); ++i) {
      CHECK(sq.data[i] == std::abs(oracle[i]));
    }
  }
}

TEST_CASE("16^3 random mask matches the all-pairs oracle exactly") {
  const MaskVolume m = fda::testing::random_mask({16, 16, 16}, 0.3, 42);
  const auto oracle = fda::testing::brute_force_signed_sq(m);
  const Grid<double> raw = signed_distance(m);
  for (int64_t i = 0; i < m.shape.numel(); ++i) {
    const double expect = (oracle[i] < 0 ? -1.0 : 1.0) * std::sqrt(double(std::abs(oracle[i])));
    CHECK(raw.data[i] == expect);
  }
}

TEST_CASE("spacing-aware transform against brute force") {
  const MaskVolume m0 = fda::testing::random_mask({7, 9, 6}, 0.2, 5);
  MaskVolume m = m0;
  m.spacing = {2.0, 0.5, 0.75};
  const Grid<double> sq = squared_distance_transform(surface_mask(m), m.spacing);
  const auto surf = extract_surface(m);
  for (int64_t z = 0; z < 7; ++z)
    for (int64_t y = 0; y < 9; ++y)
      for (int64_t x = 0; x < 6; ++x) {
        double best = std::numeric_limits<double>::infinity();
        for (const Voxel& c : surf) {
          const double dz = (z - c.z) * 2.0, dy = (y - c.y) * 0.5, dx = (x - c.x) * 0.75;
          best = std::min(best, dz * dz + dy * dy + dx * dx);
        }
        CHECK(sq.at(z, y, x) == doctest::Approx(best).epsilon(1e-12));
      }
}

TEST_CASE("sign partition, Lipschitz bound and mirror symmetry") {
  const MaskVolume m = fda::testing::random_mask({8, 7, 6}, 0.35, 9);
  const Grid<double> raw = signed_distance(m);
  const MaskVolume surf = surface_mask(m);
  for (size_t i = 0; i < raw.data.size(); ++i) {
    if (surf.data[i]) CHECK(raw.data[i] == 0.0);
    else if (m.data[i]) CHECK(raw.data[i] < 0.0);
    else CHECK(raw.data[i] > 0.0);
  }
  const Shape3 s = m.shape;
  for (int64_t a = 0; a < s.numel(); a += 7)
    for (int64_t b = 0; b < s.numel(); b += 5) {
      const double dz = double(a / (s.h * s.w) - b / (s.h * s.w));
      const double dy = double((a / s.w) % s.h - (b / s.w) % s.h);
      const double dx = double(a % s.w - b % s.w);
      CHECK(std::abs(raw.data[a] - raw.data[b]) <= std::sqrt(dz * dz + dy * dy + dx * dx) + 1e-12);
    }
  MaskVolume mirrored(s);
  for (int64_t z = 0; z < s.d; ++z)
    for (int64_t y = 0; y < s.h; ++y)
      for (int64_t x = 0; x < s.w; ++x) mirrored.at(z, y, s.w - 1 - x) = m.at(z, y, x);
  const Grid<double> raw_m = signed_distance(mirrored);
  for (int64_t z = 0; z < s.d; ++z)
    for (int64_t y = 0; y < s.h; ++y)
      for (int64_t x = 0; x < s.w; ++x) CHECK(raw_m.at(z, y, s.w - 1 - x) == raw.at(z, y, x));
}

TEST_CASE("sdm_normalize") {
  SUBCASE("thin structure: no interior, +1 outside") {
    MaskVolume m({5, 5, 5});
    for (int x = 0; x < 5; ++x) m.at(2, 2, x) = 1;
    const SdmVolume s = sdm_compute(m);
    CHECK(s.max_in == 0.0);
    CHECK(*std::min_element(s.values.data.begin(), s.values.data.end()) == 0.0f);
    CHECK(*std::max_element(s.values.data.begin(), s.values.data.end()) == 1.0f);
  }
  SUBCASE("raw -4..+10 maps onto [-1, 1]") {
    Grid<double> raw({1, 1, 15});
    for (int i = 0; i < 15; ++i) raw.data[i] = i - 4;
    const SdmVolume s = sdm_normalize(raw);
    CHECK(s.values.data.front() == -1.0f);
    CHECK(s.values.data.back() == 1.0f);
    CHECK(s.values.data[4] == 0.0f);
    CHECK(s.values.data[2] == doctest::Approx(-0.5));
    CHECK(s.values.data[9] == doctest::Approx(0.5));
  }
  SUBCASE("single scale shares the larger side") {
    Grid<double> raw({1, 1, 15});
    for (int i = 0; i < 15; ++i) raw.data[i] = i - 4;
    const SdmVolume s = sdm_normalize(raw, true);
    CHECK(s.values.data.front() == doctest::Approx(-0.4));
    CHECK(s.values.data.back() == 1.0f);
  }
  SUBCASE("all-foreground: exterior empty, no positive values") {
    const MaskVolume m = fda::testing::box_mask({5, 5, 5}, {0, 0, 0}, {4, 4, 4});
    const SdmVolume s = sdm_compute(m);
    CHECK(s.max_out == 0.0);
    CHECK(*std::max_element(s.values.data.begin(), s.values.data.end()) == 0.0f);
    CHECK(*std::min_element(s.values.data.begin(), s.values.data.end()) == -1.0f);
  }
}

TEST_CASE("depth-2 phantom SDM attains exactly -1 and +1") {
  phantom::PhantomSpec spec;
  spec.shape = {32, 32, 32};
  spec.depth = 2;
  spec.root_radius = 3.0;
  const auto sample = phantom::generate_phantom(spec);
  const SdmVolume s = sdm_compute(sample.mask);
  CHECK(*std::min_element(s.values.data.begin(), s.values.data.end()) == -1.0f);
  CHECK(*std::max_element(s.values.data.begin(), s.values.data.end()) == 1.0f);
  const Volume v = to_volume(s);
  CHECK(v.kind == VolumeKind::Sdm);
  CHECK(v.aux["max_in"].get<double>() == s.max_in);
  CHECK(v.aux["max_out"].get<double>() == s.max_out);
}
