#include "doctest.h"
#include "fda/metrics.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace fda;
using namespace fda::metrics;

namespace {

phantom::PhantomSample y_phantom(uint64_t seed = 1) {
  phantom::PhantomSpec s;
  s.depth = 2;
  s.seed = seed;
  return phantom::generate_phantom(s);
}

struct Topology {
  int endpoints = 0;
  int junction_clusters = 0;
};

Topology count_topology(const MaskVolume& skel) {
  MaskVolume junctions(skel.shape);
  Topology t;
  for (int64_t z = 0; z < skel.shape.d; ++z)
    for (int64_t y = 0; y < skel.shape.h; ++y)
      for (int64_t x = 0; x < skel.shape.w; ++x) {
        if (!skel.at(z, y, x)) continue;
        const int n = neighbor_count(skel, z, y, x);
        t.endpoints += n == 1;
        if (n >= 3) junctions.at(z, y, x) = 1;
      }
  t.junction_clusters = static_cast<int>(label_components(junctions, 26).sizes.size());
  return t;
}

MaskVolume ring(Shape3 s, double r_major, double r_minor) {
  MaskVolume m(s);
  const double cz = (s.d - 1) / 2.0, cy = (s.h - 1) / 2.0, cx = (s.w - 1) / 2.0;
  for (int64_t z = 0; z < s.d; ++z)
    for (int64_t y = 0; y < s.h; ++y)
      for (int64_t x = 0; x < s.w; ++x) {
        const double q = std::hypot(y - cy, x - cx) - r_major;
        if (q * q + (z - cz) * (z - cz) <= r_minor * r_minor) m.at(z, y, x) = 1;
      }
  return m;
}

}  // namespace

TEST_CASE("skeletonize: thin tube is already a skeleton") {
  MaskVolume m({5, 5, 12});
  for (int x = 1; x < 11; ++x) m.at(2, 2, x) = 1;
  CHECK(skeletonize(m).voxels.data == m.data);
}

TEST_CASE("skeletonize: solid cylinder r=3, L=20 thins to its axis") {
  MaskVolume m({30, 15, 15});
  for (int z = 5; z < 25; ++z)
    for (int y = 0; y < 15; ++y)
      for (int x = 0; x < 15; ++x)
        if ((y - 7) * (y - 7) + (x - 7) * (x - 7) <= 9) m.at(z, y, x) = 1;
  const auto sk = skeletonize(m).voxels;
  const int64_t n = count_foreground(sk);
  CHECK(n >= 16);
  CHECK(n <= 22);
  CHECK(count_topology(sk).endpoints == 2);
  CHECK(count_topology(sk).junction_clusters == 0);
  for (int64_t i = 0; i < sk.shape.numel(); ++i) CHECK(sk.data[i] <= m.data[i]);
}

TEST_CASE("skeletonize: Y phantom has one junction and three end points") {
  for (uint64_t seed = 1; seed <= 4; ++seed) {
    const auto sk = skeletonize(y_phantom(seed).mask).voxels;
    const Topology t = count_topology(sk);
    CHECK(t.endpoints == 3);
    CHECK(t.junction_clusters == 1);
  }
}

TEST_CASE("skeletonize preserves components and Euler characteristic") {
  SUBCASE("ring keeps its tunnel") {
    const MaskVolume m = ring({9, 24, 24}, 7.0, 2.5);
    CHECK(euler_characteristic(m) == 0);
    const auto sk = skeletonize(m).voxels;
    CHECK(euler_characteristic(sk) == 0);
    CHECK(count_topology(sk).endpoints == 0);
  }
  SUBCASE("hollow box keeps its cavity") {
    MaskVolume m = fda::testing::box_mask({9, 9, 9}, {1, 1, 1}, {7, 7, 7});
    for (int z = 3; z <= 5; ++z)
      for (int y = 3; y <= 5; ++y)
        for (int x = 3; x <= 5; ++x) m.at(z, y, x) = 0;
    CHECK(euler_characteristic(m) == 2);
    CHECK(euler_characteristic(skeletonize(m).voxels) == 2);
  }
  SUBCASE("solid ball thins to a short stub") {
    MaskVolume m({11, 11, 11});
    for (int z = 0; z < 11; ++z)
      for (int y = 0; y < 11; ++y)
        for (int x = 0; x < 11; ++x)
          if ((z - 5) * (z - 5) + (y - 5) * (y - 5) + (x - 5) * (x - 5) <= 16) m.at(z, y, x) = 1;
    const auto sk = skeletonize(m).voxels;
    CHECK(count_foreground(sk) <= 3);
    CHECK(euler_characteristic(sk) == 1);
    CHECK(label_components(sk, 26).sizes.size() == 1);
  }
  SUBCASE("random masks") {
    for (uint64_t seed = 0; seed < 10; ++seed) {
      const MaskVolume m = fda::testing::random_mask({10, 10, 10}, 0.45, seed);
      const auto sk = skeletonize(m).voxels;
      CHECK(label_components(sk, 26).sizes.size() == label_components(m, 26).sizes.size());
      CHECK(euler_characteristic(sk) == euler_characteristic(m));
    }
  }
  SUBCASE("empty mask is rejected") { CHECK_THROWS_AS(skeletonize(MaskVolume({3, 3, 3})), ValidationError); }
}

TEST_CASE("simple point examples") {
  bool nb[27] = {};
  nb[13] = true;
  CHECK_FALSE(is_simple_point(nb));  // isolated voxel
  nb[12] = true;
  CHECK(is_simple_point(nb));  // end of a line
  nb[14] = true;
  CHECK_FALSE(is_simple_point(nb));  // middle of a line
}

TEST_CASE("parse_branches") {
  SUBCASE("straight path") {
    MaskVolume m({3, 3, 10});
    for (int x = 0; x < 10; ++x) m.at(1, 1, x) = 1;
    const auto b = parse_branches({m}, {});
    REQUIRE(b.branches.size() == 1);
    CHECK(b.branches[0].path.size() == 10);
    CHECK(b.branches[0].length_mm == doctest::Approx(9.0));
  }
  SUBCASE("spacing scales lengths") {
    MaskVolume m({3, 3, 10});
    for (int x = 0; x < 10; ++x) m.at(1, 1, x) = 1;
    CHECK(parse_branches({m}, {1.0, 1.0, 0.5}).total_length_mm() == doctest::Approx(4.5));
  }
  SUBCASE("hand-made Y") {
    MaskVolume m({12, 12, 12});
    for (int z = 0; z <= 5; ++z) m.at(z, 6, 6) = 1;
    for (int k = 1; k <= 5; ++k) m.at(5 + k, 6, 6 + k) = 1, m.at(5 + k, 6, 6 - k) = 1;
    CHECK(parse_branches({m}, {}).branches.size() == 3);
  }
  SUBCASE("phantoms: Y gives 3, depth 3 gives 7") {
    CHECK(parse_branches(skeletonize(y_phantom().mask), {}).branches.size() == 3);
    phantom::PhantomSpec s;
    s.depth = 3;
    for (uint64_t seed = 1; seed <= 4; ++seed) {
      s.seed = seed;
      CHECK(parse_branches(skeletonize(phantom::generate_phantom(s).mask), {}).branches.size() == 7);
    }
  }
  SUBCASE("closed loop is one branch") {
    const auto sk = skeletonize(ring({9, 24, 24}, 7.0, 2.5));
    CHECK(parse_branches(sk, {}).branches.size() == 1);
  }
}

TEST_CASE("length and branch rates") {
  const auto p = y_phantom();
  const auto gt = branches_from_centerline(p.centerline, p.mask.shape, p.mask.spacing);
  REQUIRE(gt.branches.size() == 3);
  SUBCASE("perfect prediction") {
    CHECK(length_rate(gt, p.mask) == doctest::Approx(100.0));
    CHECK(branch_rate(gt, p.mask) == doctest::Approx(100.0));
  }
  SUBCASE("empty prediction") {
    const MaskVolume empty(p.mask.shape);
    CHECK(length_rate(gt, empty) == 0.0);
    CHECK(branch_rate(gt, empty) == 0.0);
  }
  SUBCASE("one child subtree removed") {
    const MaskVolume pred = fda::testing::mask_without_subtree(p, 2);
    const double expected = fda::testing::retained_length_percent(p, {2});
    CHECK(expected < 100.0);
    CHECK(length_rate(gt, pred) == doctest::Approx(expected).epsilon(1e-9));
    CHECK(branch_rate(gt, pred) == doctest::Approx(200.0 / 3.0));
    const auto flags = detected_branches(gt, pred);
    CHECK(flags == std::vector<bool>{true, true, false});
  }
  SUBCASE("empty ground truth is an error") {
    CHECK_THROWS_AS(length_rate(BranchSet{}, p.mask), ValidationError);
    CHECK_THROWS_AS(branch_rate(BranchSet{}, p.mask), ValidationError);
  }
}

TEST_CASE("dsc") {
  const MaskVolume a = fda::testing::box_mask({10, 10, 10}, {0, 0, 0}, {3, 4, 4});  // 100 voxels
  CHECK(dsc(a, a) == 100.0);
  CHECK(dsc(a, fda::testing::box_mask({10, 10, 10}, {5, 5, 5}, {9, 9, 9})) == 0.0);
  const MaskVolume b = fda::testing::box_mask({10, 10, 10}, {2, 0, 0}, {5, 4, 4});  // overlaps a in 50
  CHECK(dsc(a, b) == doctest::Approx(50.0));
  CHECK(dsc(MaskVolume({2, 2, 2}), MaskVolume({2, 2, 2})) == 100.0);
}

TEST_CASE("evaluate") {
  const auto p = y_phantom(3);
  SUBCASE("perfect prediction with and without the phantom centerline") {
    for (const auto& cl : {std::optional(p.centerline), std::optional<std::vector<phantom::CenterlineBranch>>()}) {
      const MetricsReport r = evaluate(p.mask, p.mask, cl);
      CHECK(r.length_rate == doctest::Approx(100.0));
      CHECK(r.branch_rate == doctest::Approx(100.0));
      CHECK(r.dsc >= 99.9);
    }
  }
  SUBCASE("a disconnected false positive is removed before scoring") {
    MaskVolume pred = p.mask;
    pred.at(0, 0, 0) = 1;
    pred.at(0, 0, 1) = 1;
    const MetricsReport r = evaluate(pred, p.mask, p.centerline);
    CHECK(r.dsc == doctest::Approx(100.0));
  }
  SUBCASE("filtering is idempotent") {
    MaskVolume pred = fda::testing::mask_without_subtree(p, 1);
    for (int x = 0; x < 4; ++x) pred.at(1, 1, x) = 1;
    const auto a = to_json(evaluate(pred, p.mask, p.centerline));
    const auto b = to_json(evaluate(largest_component(pred), p.mask, p.centerline));
    CHECK(a == b);
  }
  SUBCASE("adding true positives never lowers a metric") {
    MaskVolume pred = fda::testing::mask_without_subtree(p, 2);
    MetricsReport prev = evaluate(pred, p.mask, p.centerline);
    CounterRng rng(5);
    for (int step = 0; step < 40; ++step) {
      for (int k = 0; k < 10; ++k) {
        const size_t i = rng.below(pred.data.size());
        if (p.mask.data[i]) pred.data[i] = 1;
      }
      const MetricsReport r = evaluate(pred, p.mask, p.centerline);
      CHECK(r.length_rate >= prev.length_rate - 1e-9);
      CHECK(r.branch_rate >= prev.branch_rate - 1e-9);
      CHECK(r.dsc >= prev.dsc - 1e-9);
      for (double v : {r.length_rate, r.branch_rate, r.dsc}) {
        CHECK(v >= 0.0);
        CHECK(v <= 100.0);
      }
      prev = r;
    }
  }
}
