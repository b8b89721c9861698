#include <cstring>
#include <fstream>

#include "doctest.h"
#include "fda/checkpoint.hpp"
#include "test_util.hpp"

using namespace fda;
using namespace fda::train;
using fda::testing::TempDir;

namespace {

void fill_moments(Adam& opt) {
  float k = 0.5f;
  for (auto& m : opt.m())
    for (auto& x : m) x = (k += 0.25f);
  for (auto& v : opt.v())
    for (auto& x : v) x = (k *= 0.999f);
  opt.set_steps(42);
}

}  // namespace

TEST_CASE("round trip restores parameters, moments and metadata") {
  TempDir dir("ckpt");
  nn::FdaConfig cfg = nn::FdaConfig::toy();
  cfg.use_cse = false;
  nn::FdaModel model(cfg, 17);
  Adam opt(model.params());
  fill_moments(opt);
  const auto path = checkpoint_path(dir.path(), 7);
  CHECK(path.filename() == "ckpt_7.fda");
  save_checkpoint(path, model, opt, 7);

  const Checkpoint ck = load_checkpoint(path);
  CHECK(ck.step == 42);
  CHECK(ck.epoch == 7);
  CHECK(nn::to_json(ck.model->config()) == nn::to_json(cfg));
  const auto& a = model.params().entries();
  const auto& b = ck.model->params().entries();
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].name == b[i].name);
    CHECK(a[i].tensor.data() == b[i].tensor.data());
  }

  nn::FdaModel other(cfg, 99);
  Adam restored(other.params());
  restore_optimizer(ck, restored);
  CHECK(restored.steps() == 42);
  CHECK(restored.m() == opt.m());
  CHECK(restored.v() == opt.v());

  TempDir dir2("ckpt2");
  save_checkpoint(dir2 / "again.fda", *ck.model, restored, 7);
  CHECK(fda::testing::file_bytes(dir2 / "again.fda") == fda::testing::file_bytes(path));
}

TEST_CASE("layout: magic, manifest length, manifest, little-endian f32 blobs") {
  TempDir dir("ckpt_layout");
  nn::FdaModel model(nn::FdaConfig::toy(), 3);
  Adam opt(model.params());
  fill_moments(opt);
  save_checkpoint(dir / "c.fda", model, opt, 1);
  const std::string bytes = fda::testing::file_bytes(dir / "c.fda");
  REQUIRE(bytes.size() > 16);
  CHECK(bytes.substr(0, 8) == "FDACKPT1");
  uint64_t len = 0;
  for (int i = 7; i >= 0; --i) len = (len << 8) | static_cast<unsigned char>(bytes[8 + static_cast<size_t>(i)]);
  const auto manifest = nlohmann::json::parse(bytes.substr(16, len));
  const auto& params = manifest.at("params");
  CHECK(params.size() == model.params().size());
  CHECK(manifest.at("step") == 42);

  int64_t total = 0;
  for (const auto& p : params) {
    int64_t n = 1;
    for (const auto& d : p.at("shape")) n *= d.get<int64_t>();
    total += n;
  }
  CHECK(bytes.size() == 16 + len + static_cast<size_t>(3 * total) * 4);

  size_t off = 16 + len;
  const auto& first = model.params().entries().front().tensor.data();
  for (size_t i = 0; i < first.size(); ++i) {
    uint32_t u = 0;
    for (int k = 3; k >= 0; --k) u = (u << 8) | static_cast<unsigned char>(bytes[off + i * 4 + static_cast<size_t>(k)]);
    float f;
    std::memcpy(&f, &u, 4);
    CHECK(f == first[i]);
  }
  off += static_cast<size_t>(total) * 4;
  float m0;
  std::memcpy(&m0, bytes.data() + off, 4);
  CHECK(m0 == opt.m()[0][0]);
}

TEST_CASE("damaged files are rejected") {
  TempDir dir("ckpt_bad");
  nn::FdaModel model(nn::FdaConfig::toy(), 3);
  Adam opt(model.params());
  save_checkpoint(dir / "c.fda", model, opt, 0);
  const std::string bytes = fda::testing::file_bytes(dir / "c.fda");

  auto write = [&](const std::string& name, const std::string& b) {
    std::ofstream(dir / name, std::ios::binary) << b;
    return dir / name;
  };
  CHECK_THROWS_AS(load_checkpoint(write("magic.fda", "XXXXXXXX" + bytes.substr(8))), IoError);
  CHECK_THROWS_AS(load_checkpoint(write("short.fda", bytes.substr(0, bytes.size() - 4))), IoError);
  CHECK_THROWS_AS(load_checkpoint(write("long.fda", bytes + "abcd")), IoError);
  CHECK_THROWS_AS(load_checkpoint(dir / "missing.fda"), IoError);
}
