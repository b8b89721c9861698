#include "fda/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace fda::train {

namespace {

constexpr char kMagic[8] = {'F', 'D', 'A', 'C', 'K', 'P', 'T', '1'};

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

void put_u64(std::string& out, uint64_t x) {
  char b[8];
  std::memcpy(b, &x, 8);
  out.append(b, 8);
}

template <typename T>
void put_floats(std::string& out, const std::vector<T>& xs) {
  const size_t at = out.size();
  out.resize(at + xs.size() * sizeof(float));
  for (size_t i = 0; i < xs.size(); ++i) {
    const float f = static_cast<float>(xs[i]);
    std::memcpy(out.data() + at + i * sizeof(float), &f, sizeof(float));
  }
}

class Reader {
 public:
  Reader(const std::string& bytes, const std::filesystem::path& path) : b_(bytes), path_(path) {}

  const char* take(size_t n) {
    if (n > b_.size() - pos_) throw IoError("truncated checkpoint " + path_.string());
    const char* p = b_.data() + pos_;
    pos_ += n;
    return p;
  }
  uint64_t u64() {
    uint64_t x;
    std::memcpy(&x, take(8), 8);
    return x;
  }
  std::vector<float> floats(size_t n) {
    std::vector<float> out(n);
    std::memcpy(out.data(), take(n * sizeof(float)), n * sizeof(float));
    return out;
  }
  bool done() const { return pos_ == b_.size(); }

 private:
  const std::string& b_;
  const std::filesystem::path& path_;
  size_t pos_ = 0;
};

nlohmann::ordered_json shape_json(const nn::Shape5& s) { return {s.n, s.c, s.d, s.h, s.w}; }

}  // namespace

std::filesystem::path checkpoint_path(const std::filesystem::path& dir, int64_t epoch) {
  return dir / ("ckpt_" + std::to_string(epoch) + ".fda");
}

void save_checkpoint(const std::filesystem::path& path, const nn::FdaModel& model, const Adam& opt, int64_t epoch) {
  const auto& entries = model.params().entries();
  if (opt.m().size() != entries.size()) throw ValidationError("optimizer state does not match the model");

  nlohmann::ordered_json manifest;
  manifest["format"] = "fda-checkpoint";
  manifest["version"] = 1;
  manifest["epoch"] = epoch;
  manifest["step"] = opt.steps();
  manifest["adam"] = {{"beta1", opt.config().beta1}, {"beta2", opt.config().beta2}, {"eps", opt.config().eps}};
  manifest["model"] = nn::to_json(model.config());
  auto& params = manifest["params"] = nlohmann::ordered_json::array();
  for (const auto& e : entries)
    params.push_back({{"name", e.name}, {"group", e.group}, {"shape", shape_json(e.tensor.shape())}});
  const std::string text = manifest.dump();

  std::string out(kMagic, sizeof(kMagic));
  put_u64(out, text.size());
  out += text;
  for (const auto& e : entries) put_floats(out, e.tensor.data());
  for (const auto& m : opt.m()) put_floats(out, m);
  for (const auto& v : opt.v()) put_floats(out, v);

  if (!path.parent_path().empty()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write " + tmp.string());
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw IoError("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint " + path.string());
  const std::string bytes{std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
  Reader r(bytes, path);
  if (std::memcmp(r.take(8), kMagic, 8) != 0) throw IoError("not a checkpoint: " + path.string());
  const uint64_t len = r.u64();
  const char* text = r.take(len);

  Checkpoint ck;
  try {
    ck.manifest = nlohmann::ordered_json::parse(text, text + len);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("bad checkpoint manifest in " + path.string() + ": " + e.what());
  }
  const auto& man = ck.manifest;
  if (man.value("version", 0) != 1) throw IoError("unsupported checkpoint version in " + path.string());
  ck.step = man.at("step").get<int64_t>();
  ck.epoch = man.at("epoch").get<int64_t>();
  ck.model = std::make_unique<nn::FdaModel>(nn::fda_config_from_json(man.at("model")), 0);

  auto& entries = ck.model->params().entries();
  const auto& params = man.at("params");
  if (params.size() != entries.size())
    throw ValidationError("checkpoint has " + std::to_string(params.size()) + " parameters, model expects " +
                          std::to_string(entries.size()));
  for (size_t i = 0; i < entries.size(); ++i) {
    if (params[i].at("name").get<std::string>() != entries[i].name)
      throw ValidationError("checkpoint parameter " + std::to_string(i) + " is " +
                            params[i].at("name").get<std::string>() + ", expected " + entries[i].name);
    const auto& s = entries[i].tensor.shape();
    if (params[i].at("shape") != shape_json(s))
      throw ValidationError("checkpoint shape mismatch for " + entries[i].name);
  }
  for (auto& e : entries) {
    const auto vals = r.floats(e.tensor.data().size());
    std::copy(vals.begin(), vals.end(), e.tensor.data().begin());
  }
  for (auto& e : entries) ck.m.push_back(r.floats(e.tensor.data().size()));
  for (auto& e : entries) ck.v.push_back(r.floats(e.tensor.data().size()));
  if (!r.done()) throw IoError("trailing bytes in checkpoint " + path.string());
  return ck;
}

void restore_optimizer(const Checkpoint& ck, Adam& opt) {
  if (ck.m.size() != opt.m().size()) throw ValidationError("optimizer state does not match the checkpoint");
  for (size_t i = 0; i < ck.m.size(); ++i) {
    if (ck.m[i].size() != opt.m()[i].size()) throw ValidationError("moment size mismatch");
    std::copy(ck.m[i].begin(), ck.m[i].end(), opt.m()[i].begin());
    std::copy(ck.v[i].begin(), ck.v[i].end(), opt.v()[i].begin());
  }
  opt.set_steps(ck.step);
}

}  // namespace fda::train
