#include <cmath>
#include <queue>
#include <set>

#include "doctest.h"
#include "fda/infer.hpp"
#include "test_util.hpp"

using namespace fda;
using namespace fda::infer;

namespace {

ImageVolume random_image(Shape3 s, uint64_t seed) {
  CounterRng rng(seed);
  ImageVolume v(s);
  for (auto& x : v.data) x = static_cast<float>(rng.uniform());
  return v;
}

// Depends on both the tile contents and the position inside the tile, so
// overlapping tiles disagree.
std::vector<float> position_stub(const ImageVolume& t) {
  std::vector<float> out(t.data.size());
  for (size_t i = 0; i < out.size(); ++i)
    out[i] = static_cast<float>(1.0 / (1.0 + std::exp(-(t.data[i] - 0.5 + 0.001 * static_cast<double>(i)))));
  return out;
}

// Every admissible tile origin along an axis, listed independently of tile_starts.
std::vector<int64_t> reference_starts(int64_t dim, int64_t patch, int64_t stride) {
  std::vector<int64_t> out;
  for (int64_t o = 0; o + patch <= dim; ++o)
    if (o % stride == 0 || o == dim - patch) out.push_back(o);
  return out;
}

ImageVolume reference_tiler(const ImageVolume& img, const InferConfig& cfg) {
  const Shape3 s = img.shape, p = cfg.patch;
  Grid<double> sum(s);
  Grid<int> cnt(s);
  for (int64_t oz : reference_starts(s.d, p.d, cfg.stride.d))
    for (int64_t oy : reference_starts(s.h, p.h, cfg.stride.h))
      for (int64_t ox : reference_starts(s.w, p.w, cfg.stride.w)) {
        ImageVolume tile(p);
        for (int64_t z = 0; z < p.d; ++z)
          for (int64_t y = 0; y < p.h; ++y)
            for (int64_t x = 0; x < p.w; ++x) tile.at(z, y, x) = img.at(oz + z, oy + y, ox + x);
        const auto r = position_stub(tile);
        for (int64_t z = 0; z < p.d; ++z)
          for (int64_t y = 0; y < p.h; ++y)
            for (int64_t x = 0; x < p.w; ++x) {
              sum.at(oz + z, oy + y, ox + x) += r[static_cast<size_t>(p.index(z, y, x))];
              cnt.at(oz + z, oy + y, ox + x) += 1;
            }
      }
  ImageVolume out(s);
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] = static_cast<float>(sum.data[i] / cnt.data[i]);
  return out;
}

MaskVolume largest_by_flood_fill(const MaskVolume& m) {
  Grid<int> label(m.shape, {}, -1);
  std::vector<int64_t> sizes;
  const Shape3 s = m.shape;
  for (int64_t z = 0; z < s.d; ++z)
    for (int64_t y = 0; y < s.h; ++y)
      for (int64_t x = 0; x < s.w; ++x) {
        if (!m.at(z, y, x) || label.at(z, y, x) >= 0) continue;
        const int id = static_cast<int>(sizes.size());
        sizes.push_back(0);
        std::queue<Voxel> q;
        q.push({z, y, x});
        label.at(z, y, x) = id;
        while (!q.empty()) {
          const Voxel v = q.front();
          q.pop();
          ++sizes[static_cast<size_t>(id)];
          for (int dz = -1; dz <= 1; ++dz)
            for (int dy = -1; dy <= 1; ++dy)
              for (int dx = -1; dx <= 1; ++dx) {
                const Voxel n{v.z + dz, v.y + dy, v.x + dx};
                if (s.contains(n.z, n.y, n.x) && m.at(n) && label.at(n) < 0) {
                  label.at(n) = id;
                  q.push(n);
                }
              }
        }
      }
  MaskVolume out(s);
  if (sizes.empty()) return out;
  const int best = static_cast<int>(std::max_element(sizes.begin(), sizes.end()) - sizes.begin());
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] = label.data[i] == best;
  return out;
}

}  // namespace

TEST_CASE("tile starts") {
  CHECK(tile_starts(48, 32, 16) == std::vector<int64_t>{0, 16});
  CHECK(tile_starts(40, 32, 16) == std::vector<int64_t>{0, 8});
  CHECK(tile_starts(32, 32, 16) == std::vector<int64_t>{0});
  CHECK(tile_starts(80, 32, 32) == std::vector<int64_t>{0, 32, 48});
  CHECK_THROWS_AS(tile_starts(16, 32, 16), ValidationError);
  for (int64_t dim = 8; dim < 40; ++dim)
    for (int64_t stride : {1, 3, 4, 8}) CHECK(tile_starts(dim, 8, stride) == reference_starts(dim, 8, stride));
}

TEST_CASE("config validation") {
  InferConfig c;
  c.stride = {33, 16, 16};
  CHECK_THROWS_AS(validate(c), ValidationError);
  c = {};
  c.threshold = 1.0;
  CHECK_THROWS_AS(validate(c), ValidationError);
  const auto j = infer_config_from_json(nlohmann::json::parse(R"({"patch": [16, 16, 16]})"));
  CHECK(j.stride == Shape3{8, 8, 8});
  c.threshold = 0.4;
  CHECK(to_json(infer_config_from_json(to_json(c))) == to_json(c));
}

TEST_CASE("single tile equals the network output") {
  nn::FdaModel model(nn::FdaConfig::toy(), 12);
  InferConfig cfg;
  cfg.patch = cfg.stride = {16, 16, 16};
  const ImageVolume img = random_image({16, 16, 16}, 4);
  const ImageVolume out = sliding_window_predict(model, img, cfg);
  nn::NoGradGuard g;
  const auto direct = model.forward_noisy(nn::Tensor::from({1, 1, 16, 16, 16}, img.data)).data();
  CHECK(out.data == direct);
  for (float v : out.data) {
    CHECK(v >= 0.0f);
    CHECK(v <= 1.0f);
  }
}

TEST_CASE("constant predictor gives a constant volume") {
  InferConfig cfg;
  cfg.patch = {8, 8, 8};
  cfg.stride = {3, 5, 4};
  const TilePredictor stub = [](const ImageVolume& t) { return std::vector<float>(t.data.size(), 0.3f); };
  const ImageVolume out = sliding_window_predict(stub, random_image({19, 13, 22}, 2), cfg);
  for (float v : out.data) CHECK(v == 0.3f);
}

TEST_CASE("overlap averaging matches a naive reference tiler") {
  InferConfig cfg;
  cfg.patch = {8, 8, 8};
  cfg.stride = {4, 4, 4};

  SUBCASE("1.5 patches in-plane: coverage in {1, 2, 4}") {
    const Shape3 s{8, 12, 12};
    const Grid<int32_t> cov = coverage(s, cfg);
    CHECK(std::set<int32_t>(cov.data.begin(), cov.data.end()) == std::set<int32_t>{1, 2, 4});
    const ImageVolume img = random_image(s, 5);
    const ImageVolume a = sliding_window_predict(position_stub, img, cfg);
    const ImageVolume b = reference_tiler(img, cfg);
    for (size_t i = 0; i < a.data.size(); ++i) CHECK(a.data[i] == doctest::Approx(b.data[i]).epsilon(1e-6));
  }

  SUBCASE("irregular volume and strides") {
    cfg.stride = {3, 5, 8};
    const ImageVolume img = random_image({17, 14, 21}, 6);
    const ImageVolume a = sliding_window_predict(position_stub, img, cfg);
    const ImageVolume b = reference_tiler(img, cfg);
    for (size_t i = 0; i < a.data.size(); ++i) CHECK(a.data[i] == doctest::Approx(b.data[i]).epsilon(1e-6));
  }
}

TEST_CASE("thread count does not change the output") {
  InferConfig cfg;
  cfg.patch = {8, 8, 8};
  cfg.stride = {3, 3, 3};
  const ImageVolume img = random_image({20, 17, 14}, 8);
  const ImageVolume one = sliding_window_predict(position_stub, img, cfg);
  for (int t : {2, 3, 7}) {
    cfg.threads = t;
    CHECK(sliding_window_predict(position_stub, img, cfg).data == one.data);
  }
}

TEST_CASE("volumes smaller than the patch are reflect-padded and cropped back") {
  InferConfig cfg;
  cfg.patch = {16, 16, 16};
  cfg.stride = {8, 8, 8};
  const ImageVolume img = random_image({5, 16, 23}, 9);
  const TilePredictor identity = [](const ImageVolume& t) { return t.data; };
  const ImageVolume out = sliding_window_predict(identity, img, cfg);
  CHECK(out.shape == img.shape);
  CHECK(out.data == img.data);
  const TilePredictor wrong = [](const ImageVolume&) { return std::vector<float>(3, 0.0f); };
  CHECK_THROWS_AS(sliding_window_predict(wrong, img, cfg), ValidationError);
}

TEST_CASE("postprocess") {
  InferConfig cfg;
  SUBCASE("all above threshold") {
    const ImageVolume p({6, 6, 6}, {}, 0.9f);
    const MaskVolume m = postprocess(p, cfg);
    CHECK(count_foreground(m) == 216);
  }
  SUBCASE("nothing above threshold, threshold is strict") {
    const ImageVolume p({6, 6, 6}, {}, 0.5f);
    CHECK(count_foreground(postprocess(p, cfg)) == 0);
  }
  SUBCASE("two blobs keep the larger") {
    ImageVolume p({12, 12, 12});
    const auto big = fda::testing::box_mask(p.shape, {0, 0, 0}, {3, 3, 3});
    const auto small = fda::testing::box_mask(p.shape, {8, 8, 8}, {10, 10, 10});
    for (size_t i = 0; i < p.data.size(); ++i) p.data[i] = (big.data[i] || small.data[i]) ? 0.8f : 0.1f;
    const MaskVolume m = postprocess(p, cfg);
    CHECK(m.data == big.data);
  }
  SUBCASE("random probabilities against a flood-fill oracle") {
    for (uint64_t seed = 1; seed <= 10; ++seed) {
      const ImageVolume p = random_image({10, 11, 9}, seed);
      InferConfig c;
      c.threshold = 0.8;
      const MaskVolume thr = threshold(p, c.threshold);
      const MaskVolume m = postprocess(p, c);
      CHECK(count_foreground(m) == count_foreground(largest_by_flood_fill(thr)));
      for (size_t i = 0; i < m.data.size(); ++i)
        if (m.data[i]) CHECK(thr.data[i] == 1);
    }
  }
}
