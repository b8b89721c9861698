#include <cmath>

#include "doctest.h"
#include "fda/metrics.hpp"
#include "fda/phantom.hpp"
#include "test_util.hpp"

using namespace fda;
using namespace fda::phantom;

namespace {

PhantomSpec deep_spec(uint64_t seed) {
  PhantomSpec s;
  s.shape = {64, 64, 64};
  s.depth = 4;
  s.seed = seed;
  s.branch_angle_deg = 45.0;
  s.length_decay = 0.8;
  s.root_length = 18.0;
  s.radius_decay = 0.72;
  return s;
}

}  // namespace

TEST_CASE("depth 1 is a single straight tube") {
  PhantomSpec s;
  s.depth = 1;
  const auto p = generate_phantom(s);
  REQUIRE(p.centerline.size() == 1);
  CHECK(p.centerline[0].generation == 0);
  CHECK(p.centerline[0].parent == -1);
  CHECK(p.centerline[0].points.size() == 2);
  const auto& a = p.centerline[0].points[0];
  const auto& b = p.centerline[0].points[1];
  CHECK(a[1] == b[1]);
  CHECK(a[2] == b[2]);
  CHECK(b[0] < a[0]);  // grows along -z
}

TEST_CASE("branch count is 2^depth - 1") {
  for (int depth = 1; depth <= 4; ++depth) {
    PhantomSpec s = deep_spec(3);
    s.depth = depth;
    const auto p = generate_phantom(s);
    CHECK(p.centerline.size() == (size_t(1) << depth) - 1);
    for (size_t i = 1; i < p.centerline.size(); ++i) {
      const auto& b = p.centerline[i];
      CHECK(b.generation == p.centerline[b.parent].generation + 1);
      CHECK(b.radius == doctest::Approx(p.centerline[b.parent].radius * s.radius_decay));
    }
  }
}

TEST_CASE("generation is deterministic in the seed") {
  PhantomSpec s;
  s.seed = 99;
  const auto a = generate_phantom(s);
  const auto b = generate_phantom(s);
  CHECK(a.image.data == b.image.data);
  CHECK(a.mask.data == b.mask.data);
  s.seed = 100;
  const auto c = generate_phantom(s);
  CHECK(c.mask.data != a.mask.data);

  const NoiseSpec n;
  CHECK(corrupt_to_noisy(a, n).image.data == corrupt_to_noisy(b, n).image.data);
}

TEST_CASE("mask is one 26-connected component containing the centerline") {
  for (uint64_t seed = 1; seed <= 6; ++seed) {
    PhantomSpec s;
    s.seed = seed;
    s.depth = 1 + int(seed % 3);
    const auto p = generate_phantom(s);
    CHECK(label_components(p.mask, 26).sizes.size() == 1);
    for (const auto& b : p.centerline)
      for (const Voxel& v : voxelize_polyline(b.points)) CHECK(p.mask.at(v) == 1);
  }
}

TEST_CASE("image intensities follow the lumen profile") {
  PhantomSpec s;
  const auto p = generate_phantom(s);
  const float lumen = s.background_level + s.wall_contrast;
  for (size_t i = 0; i < p.image.data.size(); ++i) {
    const float v = p.image.data[i];
    CHECK(v <= s.background_level);
    CHECK(v >= lumen);
  }
  const auto& root = p.centerline[0].points;
  const Voxel mid{std::llround((root[0][0] + root[1][0]) / 2), std::llround(root[0][1]), std::llround(root[0][2])};
  CHECK(p.image.at(mid) == doctest::Approx(lumen));
  CHECK(p.image.at(0, 0, 0) == doctest::Approx(s.background_level));
}

TEST_CASE("spec errors") {
  PhantomSpec s;
  SUBCASE("radius underflow") {
    s.depth = 6;
    CHECK_THROWS_AS(generate_phantom(s), ValidationError);
  }
  SUBCASE("tree exits the volume") {
    s.shape = {20, 20, 20};
    s.root_length = 15;
    CHECK_THROWS_AS(generate_phantom(s), ValidationError);
  }
  SUBCASE("root radius below one voxel") {
    s.root_radius = 0.5;
    CHECK_THROWS_AS(generate_phantom(s), ValidationError);
  }
  SUBCASE("radius decay outside (0,1)") {
    s.radius_decay = 1.0;
    CHECK_THROWS_AS(generate_phantom(s), ValidationError);
  }
  SUBCASE("depth 0") {
    s.depth = 0;
    CHECK_THROWS_AS(generate_phantom(s), ValidationError);
  }
}

TEST_CASE("corrupt_to_noisy") {
  const auto clean = generate_phantom(PhantomSpec{});
  SUBCASE("no patches, no noise: identity") {
    NoiseSpec n;
    n.n_patches = 0;
    n.gaussian_noise_sigma = 0;
    const auto out = corrupt_to_noisy(clean, n);
    CHECK(out.image.data == clean.image.data);
  }
  SUBCASE("anatomy is preserved and appearance changes") {
    NoiseSpec n;
    n.n_patches = 1;
    n.gaussian_noise_sigma = 0;
    const auto out = corrupt_to_noisy(clean, n);
    CHECK(out.mask.data == clean.mask.data);
    CHECK(centerline_to_json(out.centerline) == centerline_to_json(clean.centerline));
    double mad = 0.0;
    for (size_t i = 0; i < out.image.data.size(); ++i) mad += std::abs(out.image.data[i] - clean.image.data[i]);
    CHECK(mad / double(out.image.data.size()) > 0.0);
  }
  SUBCASE("invalid noise spec") {
    NoiseSpec n;
    n.patch_radius_range = {5, 2};
    CHECK_THROWS_AS(corrupt_to_noisy(clean, n), ValidationError);
  }
}

TEST_CASE("skeleton branch count matches 2^depth - 1 within one") {
  for (int depth = 1; depth <= 4; ++depth)
    for (uint64_t seed = 1; seed <= 3; ++seed) {
      PhantomSpec s = depth == 4 ? deep_spec(seed) : PhantomSpec{};
      s.depth = depth;
      s.seed = seed;
      const auto p = generate_phantom(s);
      const auto branches = metrics::parse_branches(metrics::skeletonize(p.mask), s.spacing);
      const int expected = (1 << depth) - 1;
      CHECK(std::abs(int(branches.branches.size()) - expected) <= 1);
    }
}

TEST_CASE("phantom files re-save byte-identically") {
  fda::testing::TempDir dir("phantom");
  PhantomSpec s;
  s.seed = 7;
  save_sample(generate_phantom(s), dir / "a");
  const auto loaded = load_sample(dir / "a");
  save_sample(loaded, dir / "b");
  for (const char* f : {"image.volmeta", "image.volraw", "mask.volmeta", "mask.volraw", "centerline.json"})
    CHECK(fda::testing::file_bytes(dir / "a" / f) == fda::testing::file_bytes(dir / "b" / f));
}

TEST_CASE("spec JSON round trip") {
  PhantomSpec s = deep_spec(12);
  s.spacing = {0.5, 0.6, 0.7};
  const PhantomSpec back = phantom_spec_from_json(to_json(s));
  CHECK(to_json(back) == to_json(s));
  NoiseSpec n;
  n.seed = 4;
  n.patch_radius_range = {1, 2};
  CHECK(to_json(noise_spec_from_json(to_json(n))) == to_json(n));
}

TEST_CASE("branch labels and subtrees") {
  PhantomSpec s;
  s.depth = 3;
  const auto p = generate_phantom(s);
  CHECK(subtree(p.centerline, 0).size() == 7);
  CHECK(subtree(p.centerline, 1) == std::vector<int>{1, 3, 4});
  const auto labels = branch_labels(p);
  for (size_t i = 0; i < labels.data.size(); ++i) CHECK((labels.data[i] >= 0) == (p.mask.data[i] == 1));
}
