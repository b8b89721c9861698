#include <set>

#include "doctest.h"
#include "fda/model.hpp"
#include "fda/rng.hpp"

using namespace fda;
using namespace fda::nn;

namespace {

Tensor image(const Shape5& s, uint64_t seed) {
  CounterRng rng(seed);
  std::vector<Real> v(static_cast<size_t>(s.numel()));
  for (auto& x : v) x = static_cast<Real>(rng.uniform(0.0, 255.0));
  return Tensor::from(s, std::move(v));
}

void zero_group(FdaModel& m, const std::string& prefix) {
  for (auto& e : m.params().entries())
    if (e.name.rfind(prefix, 0) == 0)
      for (auto& v : e.tensor.data()) v = 0;
}

}  // namespace

TEST_CASE("config") {
  CHECK(FdaConfig::toy().channels == std::vector<int64_t>{8, 16, 32, 64});
  CHECK(FdaConfig::full().channels == std::vector<int64_t>{32, 64, 128, 256});
  CHECK(FdaConfig::toy().r_c == 2);
  FdaConfig c;
  c.channels = {8, 8, 16};
  CHECK_THROWS_AS(validate(c), ValidationError);
  c = FdaConfig::toy();
  c.r_c = 0;
  CHECK_THROWS_AS(validate(c), ValidationError);
  c = FdaConfig::toy();
  c.use_cse = false;
  c.mix_skips = SkipMode::noisy_only;
  const FdaConfig back = fda_config_from_json(to_json(c));
  CHECK_FALSE(back.use_cse);
  CHECK(back.mix_skips == SkipMode::noisy_only);
  CHECK(back.channels == c.channels);
}

TEST_CASE("shapes and ranges") {
  FdaModel m(FdaConfig::toy(), 1);
  const Tensor x = image({1, 1, 16, 16, 16}, 2);
  const Tensor s = m.forward_clean(x);
  const Tensor p = m.forward_noisy(x);
  CHECK(s.shape() == Shape5{1, 1, 16, 16, 16});
  CHECK(p.shape() == Shape5{1, 1, 16, 16, 16});
  for (Real v : s.data()) CHECK((v > -1 && v < 1));
  for (Real v : p.data()) CHECK((v > 0 && v < 1));
  SUBCASE("level shape algebra") {
    const auto feats = m.encode("enc_clean", image({1, 1, 16, 16, 24}, 3));
    REQUIRE(feats.size() == 4);
    for (int64_t l = 0; l < 4; ++l)
      CHECK(feats[l].shape() == Shape5{1, FdaConfig::toy().channels[l], 16 >> l, 16 >> l, 24 >> l});
  }
  SUBCASE("bad inputs") {
    CHECK_THROWS_AS(m.forward_clean(image({1, 1, 12, 16, 16}, 4)), ValidationError);
    CHECK_THROWS_AS(m.forward_noisy(image({1, 2, 16, 16, 16}, 4)), ValidationError);
    CHECK_THROWS_AS(m.encode("enc_other", x), ValidationError);
  }
}

TEST_CASE("parameter groups") {
  FdaModel m(FdaConfig::toy(), 1);
  const auto groups = m.param_groups();
  CHECK(groups.size() == 6);
  for (const char* g : {"enc_clean", "enc_noisy", "dec_clean", "dec_mix", "proj", "cse"}) CHECK(groups.count(g));
  size_t n = 0;
  std::set<std::string> seen;
  for (const auto& [g, names] : groups) {
    n += names.size();
    for (const auto& name : names) CHECK(seen.insert(name).second);
  }
  CHECK(n == m.params().size());
  CHECK(groups.at("cse").size() == 8);
  SUBCASE("deterministic init") {
    FdaModel a(FdaConfig::toy(), 5), b(FdaConfig::toy(), 5), c(FdaConfig::toy(), 6);
    CHECK(a.params().get("enc_clean.l0.b0.conv.w").data() == b.params().get("enc_clean.l0.b0.conv.w").data());
    CHECK(a.params().get("enc_clean.l0.b0.conv.w").data() != c.params().get("enc_clean.l0.b0.conv.w").data());
    CHECK(a.params().get("enc_clean.l0.b0.in.gamma").data()[0] == 1);
    CHECK(a.params().get("enc_clean.l0.b0.prelu.a").data()[0] == Real(0.25));
    CHECK(a.params().get("proj.clean.l0.b").data()[0] == 0);
  }
}

TEST_CASE("forward_clean and forward_noisy share enc_clean storage") {
  FdaModel m(FdaConfig::toy(), 3);
  const Tensor x = image({1, 1, 8, 8, 8}, 4);
  const auto c0 = m.forward_clean(x).data();
  const auto n0 = m.forward_noisy(x).data();
  for (auto& v : m.params().get("enc_clean.l0.b0.conv.w").data()) v *= Real(1.5);
  CHECK(m.forward_clean(x).data() != c0);
  CHECK(m.forward_noisy(x).data() != n0);
  SUBCASE("gradients from both paths reach enc_clean") {
    m.params().zero_grad();
    backward(sum(m.forward_noisy(x)));
    CHECK(m.params().get("enc_clean.l1.b0.conv.w").has_grad());
    CHECK_FALSE(m.params().get("dec_clean.head.w").has_grad());
    m.params().zero_grad();
    backward(sum(m.forward_clean(x)));
    CHECK(m.params().get("enc_clean.l1.b0.conv.w").has_grad());
    CHECK_FALSE(m.params().get("enc_noisy.l1.b0.conv.w").has_grad());
    CHECK_FALSE(m.params().get("dec_mix.head.w").has_grad());
  }
}

TEST_CASE("aggregation is the exact sum of the two projections") {
  FdaModel m(FdaConfig::toy(), 7);
  const Tensor x = image({1, 1, 16, 16, 16}, 8);
  NoisyTrace t;
  m.forward_noisy(x, &t);
  REQUIRE(t.aggregated.size() == 4);
  for (int64_t l = 0; l < 4; ++l) {
    const std::string s = ".l" + std::to_string(l);
    const Tensor pc = conv3d(t.clean[l], m.params().get("proj.clean" + s + ".w"), m.params().get("proj.clean" + s + ".b"), 1, 0);
    const Tensor pn = conv3d(t.noisy[l], m.params().get("proj.noisy" + s + ".w"), m.params().get("proj.noisy" + s + ".b"), 1, 0);
    CHECK(add(pc, pn).data() == t.aggregated[l].data());
  }
  SUBCASE("clean-stream features equal the standalone encoder") {
    const auto feats = m.encode("enc_clean", x);
    for (int64_t l = 0; l < 4; ++l) CHECK(feats[l].data() == t.clean[l].data());
  }
}

TEST_CASE("zeroed noisy stream equals the single-stream variant exactly") {
  FdaModel m(FdaConfig::toy(), 9);
  zero_group(m, "enc_noisy");
  zero_group(m, "proj.noisy");
  const Tensor x = image({1, 1, 16, 16, 16}, 10);
  const auto both = m.forward_noisy(x).data();
  m.config().use_noisy_stream = false;
  CHECK(m.forward_noisy(x).data() == both);
}

TEST_CASE("ablation switches") {
  FdaModel m(FdaConfig::toy(), 11);
  const Tensor x = image({1, 1, 8, 8, 8}, 12);
  SUBCASE("w/o cSE bypasses the blocks") {
    const auto with = m.forward_clean(x).data();
    m.config().use_cse = false;
    const auto without = m.forward_clean(x).data();
    CHECK(with != without);
    m.params().zero_grad();
    backward(sum(m.forward_clean(x)));
    CHECK_FALSE(m.params().get("cse.l0.w1").has_grad());
  }
  SUBCASE("w/o SDM switches the clean head to a probability") {
    m.config().use_sdm = false;
    const Tensor y = m.forward_clean(x);
    for (Real v : y.data()) CHECK((v > 0 && v < 1));
  }
  SUBCASE("noisy-only skips change the mixed decoder input") {
    const auto agg = m.forward_noisy(x).data();
    m.config().mix_skips = SkipMode::noisy_only;
    CHECK(m.forward_noisy(x).data() != agg);
  }
}
