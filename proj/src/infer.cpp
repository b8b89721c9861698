#include "fda/infer.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <thread>

namespace fda::infer {

namespace {

Shape3 shape_from_json(const nlohmann::json& j, const char* what) {
  if (!j.is_array() || j.size() != 3) throw ValidationError(std::string(what) + " must be [D, H, W]");
  return {j[0].get<int64_t>(), j[1].get<int64_t>(), j[2].get<int64_t>()};
}

int64_t reflect(int64_t i, int64_t n) {
  if (n == 1) return 0;
  const int64_t period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

ImageVolume reflect_pad(const ImageVolume& v, const Shape3& to) {
  ImageVolume out(to, v.spacing);
  for (int64_t z = 0; z < to.d; ++z)
    for (int64_t y = 0; y < to.h; ++y)
      for (int64_t x = 0; x < to.w; ++x)
        out.at(z, y, x) = v.at(reflect(z, v.shape.d), reflect(y, v.shape.h), reflect(x, v.shape.w));
  return out;
}

std::vector<Voxel> tile_origins(const Shape3& s, const InferConfig& cfg) {
  const auto zs = tile_starts(s.d, cfg.patch.d, cfg.stride.d);
  const auto ys = tile_starts(s.h, cfg.patch.h, cfg.stride.h);
  const auto xs = tile_starts(s.w, cfg.patch.w, cfg.stride.w);
  std::vector<Voxel> out;
  for (auto z : zs)
    for (auto y : ys)
      for (auto x : xs) out.push_back({z, y, x});
  return out;
}

Shape3 padded_shape(const Shape3& s, const Shape3& patch) {
  return {std::max(s.d, patch.d), std::max(s.h, patch.h), std::max(s.w, patch.w)};
}

}  // namespace

void validate(const InferConfig& cfg) {
  for (int a = 0; a < 3; ++a) {
    if (cfg.patch[a] < 1) throw ValidationError("patch dims must be >= 1");
    if (cfg.stride[a] < 1 || cfg.stride[a] > cfg.patch[a])
      throw ValidationError("stride must lie in [1, patch] on every axis");
  }
  if (!(cfg.threshold > 0.0 && cfg.threshold < 1.0)) throw ValidationError("threshold must lie in (0, 1)");
  if (cfg.threads < 1) throw ValidationError("threads must be >= 1");
}

nlohmann::ordered_json to_json(const InferConfig& cfg) {
  return {{"patch", {cfg.patch.d, cfg.patch.h, cfg.patch.w}},
          {"stride", {cfg.stride.d, cfg.stride.h, cfg.stride.w}},
          {"threshold", cfg.threshold},
          {"threads", cfg.threads}};
}

InferConfig infer_config_from_json(const nlohmann::json& j, InferConfig base) {
  if (!j.is_object()) throw ValidationError("infer config must be a JSON object");
  InferConfig c = base;
  try {
    if (j.contains("patch")) {
      c.patch = shape_from_json(j["patch"], "patch");
      if (!j.contains("stride")) c.stride = {c.patch.d / 2, c.patch.h / 2, c.patch.w / 2};
    }
    if (j.contains("stride")) c.stride = shape_from_json(j["stride"], "stride");
    c.threshold = j.value("threshold", c.threshold);
    c.threads = j.value("threads", c.threads);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed infer config: ") + e.what());
  }
  validate(c);
  return c;
}

std::vector<int64_t> tile_starts(int64_t dim, int64_t patch, int64_t stride) {
  if (dim < patch) throw ValidationError("axis shorter than the patch");
  std::vector<int64_t> out;
  for (int64_t s = 0; s + patch < dim; s += stride) out.push_back(s);
  if (out.empty() || out.back() != dim - patch) out.push_back(dim - patch);
  return out;
}

Grid<int32_t> coverage(const Shape3& s, const InferConfig& cfg) {
  validate(cfg);
  const Shape3 ps = padded_shape(s, cfg.patch);
  Grid<int32_t> cnt(ps);
  for (const auto& o : tile_origins(ps, cfg))
    for (int64_t z = 0; z < cfg.patch.d; ++z)
      for (int64_t y = 0; y < cfg.patch.h; ++y)
        for (int64_t x = 0; x < cfg.patch.w; ++x) ++cnt.at(o.z + z, o.y + y, o.x + x);
  Grid<int32_t> out(s);
  for (int64_t z = 0; z < s.d; ++z)
    for (int64_t y = 0; y < s.h; ++y)
      for (int64_t x = 0; x < s.w; ++x) out.at(z, y, x) = cnt.at(z, y, x);
  return out;
}

ImageVolume sliding_window_predict(const TilePredictor& predict, const ImageVolume& image, const InferConfig& cfg) {
  validate(cfg);
  if (image.shape.numel() == 0) throw ValidationError("empty image");
  const Shape3 ps = padded_shape(image.shape, cfg.patch);
  const ImageVolume padded = ps == image.shape ? image : reflect_pad(image, ps);
  const auto origins = tile_origins(ps, cfg);
  const Shape3 p = cfg.patch;

  std::vector<std::vector<float>> results(origins.size());
  auto run = [&](size_t t) {
    const Voxel& o = origins[t];
    ImageVolume tile(p, image.spacing);
    for (int64_t z = 0; z < p.d; ++z)
      for (int64_t y = 0; y < p.h; ++y) {
        const float* src = &padded.at(o.z + z, o.y + y, o.x);
        std::copy(src, src + p.w, &tile.at(z, y, 0));
      }
    auto r = predict(tile);
    if (static_cast<int64_t>(r.size()) != p.numel())
      throw ValidationError("tile predictor returned " + std::to_string(r.size()) + " values for a " + to_string(p) +
                            " tile");
    results[t] = std::move(r);
  };

  const size_t workers = std::min<size_t>(static_cast<size_t>(cfg.threads), origins.size());
  if (workers <= 1) {
    for (size_t t = 0; t < origins.size(); ++t) run(t);
  } else {
    std::atomic<size_t> next{0};
    std::vector<std::exception_ptr> errors(workers);
    std::vector<std::thread> pool;
    for (size_t w = 0; w < workers; ++w)
      pool.emplace_back([&, w] {
        try {
          for (size_t t = next++; t < origins.size(); t = next++) run(t);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    for (auto& th : pool) th.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }

  Grid<double> sum(ps);
  Grid<int32_t> cnt(ps);
  for (size_t t = 0; t < origins.size(); ++t) {
    const Voxel& o = origins[t];
    const auto& r = results[t];
    for (int64_t z = 0; z < p.d; ++z)
      for (int64_t y = 0; y < p.h; ++y)
        for (int64_t x = 0; x < p.w; ++x) {
          sum.at(o.z + z, o.y + y, o.x + x) += r[static_cast<size_t>(p.index(z, y, x))];
          ++cnt.at(o.z + z, o.y + y, o.x + x);
        }
  }
  ImageVolume out(image.shape, image.spacing);
  for (int64_t z = 0; z < image.shape.d; ++z)
    for (int64_t y = 0; y < image.shape.h; ++y)
      for (int64_t x = 0; x < image.shape.w; ++x)
        out.at(z, y, x) = static_cast<float>(sum.at(z, y, x) / cnt.at(z, y, x));
  return out;
}

ImageVolume sliding_window_predict(const nn::FdaModel& model, const ImageVolume& image, const InferConfig& cfg) {
  const int64_t div = model.config().divisor();
  for (int a = 0; a < 3; ++a)
    if (cfg.patch[a] % div != 0)
      throw ValidationError("patch dims must be multiples of " + std::to_string(div) + " for this model");
  auto predict = [&model](const ImageVolume& tile) {
    nn::NoGradGuard guard;
    const Shape3& s = tile.shape;
    const nn::Tensor x = nn::Tensor::from({1, 1, s.d, s.h, s.w}, std::vector<nn::Real>(tile.data.begin(), tile.data.end()));
    const nn::Tensor p = model.forward_noisy(x);
    return std::vector<float>(p.data().begin(), p.data().end());
  };
  return sliding_window_predict(predict, image, cfg);
}

MaskVolume threshold(const ImageVolume& prob, double t) {
  MaskVolume m(prob.shape, prob.spacing);
  for (size_t i = 0; i < m.data.size(); ++i) m.data[i] = prob.data[i] > t ? 1 : 0;
  return m;
}

MaskVolume postprocess(const ImageVolume& prob, const InferConfig& cfg) {
  validate(cfg);
  return largest_component(threshold(prob, cfg.threshold), 26);
}

}  // namespace fda::infer
