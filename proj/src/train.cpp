#include "fda/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numbers>

#include "fda/phantom.hpp"
#include "fda/sdm.hpp"

namespace fda::train {

namespace {

constexpr uint64_t kStepStream = 1;
constexpr uint64_t kModelStream = 2;

struct Box {
  int64_t lo[3];
  int64_t hi[3];
  bool empty = true;
};

Box bounding_box(const MaskVolume& m) {
  Box b;
  const Shape3& s = m.shape;
  for (int64_t z = 0; z < s.d; ++z)
    for (int64_t y = 0; y < s.h; ++y)
      for (int64_t x = 0; x < s.w; ++x) {
        if (!m.at(z, y, x)) continue;
        const int64_t c[3] = {z, y, x};
        for (int a = 0; a < 3; ++a) {
          b.lo[a] = b.empty ? c[a] : std::min(b.lo[a], c[a]);
          b.hi[a] = b.empty ? c[a] : std::max(b.hi[a], c[a]);
        }
        b.empty = false;
      }
  return b;
}

template <typename T>
Grid<T> crop_grid(const Grid<T>& g, const Voxel& o, const Shape3& p) {
  Grid<T> out(p, g.spacing);
  for (int64_t z = 0; z < p.d; ++z)
    for (int64_t y = 0; y < p.h; ++y) {
      const T* src = &g.at(o.z + z, o.y + y, o.x);
      std::copy(src, src + p.w, &out.at(z, y, 0));
    }
  return out;
}

float median(const std::vector<float>& v) {
  std::vector<float> c(v);
  const auto mid = c.begin() + static_cast<std::ptrdiff_t>(c.size() / 2);
  std::nth_element(c.begin(), mid, c.end());
  return *mid;
}

Shape3 shape_from_json(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 3) throw ValidationError("patch must be [D, H, W]");
  return {j[0].get<int64_t>(), j[1].get<int64_t>(), j[2].get<int64_t>()};
}

}  // namespace

void validate(const TrainConfig& cfg) {
  if (cfg.epochs < 0) throw ValidationError("epochs must be >= 0");
  if (cfg.steps_per_epoch < 1) throw ValidationError("steps_per_epoch must be >= 1");
  if (!(cfg.lr > 0.0) || !std::isfinite(cfg.lr)) throw ValidationError("lr must be > 0");
  if (!(cfg.lr_drop_factor > 0.0)) throw ValidationError("lr_drop_factor must be > 0");
  if (cfg.lr_drop_epoch < 0) throw ValidationError("lr_drop_epoch must be >= 0");
  if (cfg.checkpoint_every < 0) throw ValidationError("checkpoint_every must be >= 0");
  if (cfg.crop_margin < 0) throw ValidationError("crop_margin must be >= 0");
  if (!(cfg.augment.rot_deg >= 0.0 && cfg.augment.rot_deg <= 180.0))
    throw ValidationError("augment.rot_deg must lie in [0, 180]");
  nn::validate(cfg.model);
  nn::validate(cfg.loss);
  const int64_t div = std::max<int64_t>(8, cfg.model.divisor());
  for (int a = 0; a < 3; ++a)
    if (cfg.patch[a] < div || cfg.patch[a] % div != 0)
      throw ValidationError("patch dims must be positive multiples of " + std::to_string(div) + ", got " +
                            to_string(cfg.patch));
}

nlohmann::ordered_json to_json(const TrainConfig& cfg) {
  return {{"epochs", cfg.epochs},
          {"steps_per_epoch", cfg.steps_per_epoch},
          {"lr", cfg.lr},
          {"lr_drop_epoch", cfg.lr_drop_epoch},
          {"lr_drop_factor", cfg.lr_drop_factor},
          {"patch", {cfg.patch.d, cfg.patch.h, cfg.patch.w}},
          {"seed", cfg.seed},
          {"augment", {{"flip", cfg.augment.flip}, {"rot_deg", cfg.augment.rot_deg}}},
          {"adam", {{"beta1", cfg.adam.beta1}, {"beta2", cfg.adam.beta2}, {"eps", cfg.adam.eps}}},
          {"checkpoint_every", cfg.checkpoint_every},
          {"crop_margin", cfg.crop_margin},
          {"model", nn::to_json(cfg.model)},
          {"loss", nn::to_json(cfg.loss)}};
}

TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base) {
  if (!j.is_object()) throw ValidationError("train config must be a JSON object");
  TrainConfig c = std::move(base);
  try {
    c.epochs = j.value("epochs", c.epochs);
    c.steps_per_epoch = j.value("steps_per_epoch", c.steps_per_epoch);
    c.lr = j.value("lr", c.lr);
    c.lr_drop_epoch = j.value("lr_drop_epoch", c.lr_drop_epoch);
    c.lr_drop_factor = j.value("lr_drop_factor", c.lr_drop_factor);
    if (j.contains("patch")) c.patch = shape_from_json(j["patch"]);
    c.seed = j.value("seed", c.seed);
    if (j.contains("augment")) {
      const auto& a = j["augment"];
      c.augment.flip = a.value("flip", c.augment.flip);
      c.augment.rot_deg = a.value("rot_deg", c.augment.rot_deg);
    }
    if (j.contains("adam")) {
      const auto& a = j["adam"];
      c.adam.beta1 = a.value("beta1", c.adam.beta1);
      c.adam.beta2 = a.value("beta2", c.adam.beta2);
      c.adam.eps = a.value("eps", c.adam.eps);
    }
    c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
    c.crop_margin = j.value("crop_margin", c.crop_margin);
    if (j.contains("model")) c.model = nn::fda_config_from_json(j["model"]);
    if (j.contains("loss")) c.loss = nn::loss_config_from_json(j["loss"]);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed train config: ") + e.what());
  }
  validate(c);
  return c;
}

double lr_at(int64_t epoch, const TrainConfig& cfg) {
  return epoch < cfg.lr_drop_epoch ? cfg.lr : cfg.lr / cfg.lr_drop_factor;
}

Voxel crop_origin(const MaskVolume& mask, const Shape3& patch, int64_t margin, CounterRng& rng) {
  const Shape3& s = mask.shape;
  for (int a = 0; a < 3; ++a)
    if (s[a] < patch[a])
      throw ValidationError("volume " + to_string(s) + " is smaller than the patch " + to_string(patch));
  const Box box = bounding_box(mask);
  int64_t o[3];
  for (int a = 0; a < 3; ++a) {
    const int64_t lo = box.empty ? 0 : std::max<int64_t>(0, box.lo[a] - margin);
    const int64_t hi = box.empty ? s[a] - 1 : std::min<int64_t>(s[a] - 1, box.hi[a] + margin);
    const int64_t center = lo + static_cast<int64_t>(rng.below(static_cast<uint64_t>(hi - lo + 1)));
    o[a] = std::clamp<int64_t>(center - patch[a] / 2, 0, s[a] - patch[a]);
  }
  return {o[0], o[1], o[2]};
}

Patch crop(const Sample& s, const Voxel& origin, const Shape3& patch) {
  if (s.image.shape != s.mask.shape) throw ValidationError("sample image and mask shapes differ");
  for (int a = 0; a < 3; ++a) {
    const int64_t o = a == 0 ? origin.z : (a == 1 ? origin.y : origin.x);
    if (o < 0 || o + patch[a] > s.image.shape[a]) throw ValidationError("crop outside the volume");
  }
  return {crop_grid(s.image, origin, patch), crop_grid(s.mask, origin, patch)};
}

PatchPair sample_pair(const std::vector<Sample>& clean, const std::vector<Sample>& noisy, const Shape3& patch,
                      int64_t margin, CounterRng& rng) {
  if (clean.empty()) throw ValidationError("clean dataset is empty");
  if (noisy.empty()) throw ValidationError("noisy dataset is empty");
  PatchPair p;
  p.clean_index = static_cast<size_t>(rng.below(clean.size()));
  p.noisy_index = static_cast<size_t>(rng.below(noisy.size()));
  p.clean_origin = crop_origin(clean[p.clean_index].mask, patch, margin, rng);
  p.noisy_origin = crop_origin(noisy[p.noisy_index].mask, patch, margin, rng);
  p.clean = crop(clean[p.clean_index], p.clean_origin, patch);
  p.noisy = crop(noisy[p.noisy_index], p.noisy_origin, patch);
  return p;
}

Patch augment(const Patch& p, CounterRng& rng, const AugmentConfig& cfg) {
  const bool flip = rng.bernoulli(0.5);
  const double theta = rng.uniform(-cfg.rot_deg, cfg.rot_deg);
  return augment_with(p, cfg.flip && flip, theta);
}

Patch augment_with(const Patch& p, bool flip, double theta_deg) {
  if (p.image.shape != p.mask.shape) throw ValidationError("patch image and mask shapes differ");
  const Shape3 s = p.image.shape;
  Patch f = p;
  if (flip) {
    for (int64_t z = 0; z < s.d; ++z)
      for (int64_t y = 0; y < s.h; ++y) {
        std::reverse(&f.image.at(z, y, 0), &f.image.at(z, y, 0) + s.w);
        std::reverse(&f.mask.at(z, y, 0), &f.mask.at(z, y, 0) + s.w);
      }
  }
  if (theta_deg == 0.0) return f;

  const double th = theta_deg * std::numbers::pi / 180.0;
  const double c = std::cos(th), sn = std::sin(th);
  const double cy = 0.5 * static_cast<double>(s.h - 1), cx = 0.5 * static_cast<double>(s.w - 1);
  const double tol = 1e-9;
  const float fill = median(f.image.data);
  Patch out{ImageVolume(s, p.image.spacing), MaskVolume(s, p.mask.spacing)};
  for (int64_t y = 0; y < s.h; ++y)
    for (int64_t x = 0; x < s.w; ++x) {
      const double dy = static_cast<double>(y) - cy, dx = static_cast<double>(x) - cx;
      double sy = cy + c * dy + sn * dx;
      double sx = cx - sn * dy + c * dx;
      const int64_t ry = std::llround(sy), rx = std::llround(sx);
      const bool mask_in = ry >= 0 && rx >= 0 && ry < s.h && rx < s.w;
      const bool img_in =
          sy >= -tol && sx >= -tol && sy <= static_cast<double>(s.h - 1) + tol && sx <= static_cast<double>(s.w - 1) + tol;
      sy = std::clamp(sy, 0.0, static_cast<double>(s.h - 1));
      sx = std::clamp(sx, 0.0, static_cast<double>(s.w - 1));
      const int64_t y0 = static_cast<int64_t>(std::floor(sy)), x0 = static_cast<int64_t>(std::floor(sx));
      const int64_t y1 = std::min(y0 + 1, s.h - 1), x1 = std::min(x0 + 1, s.w - 1);
      const double ty = sy - static_cast<double>(y0), tx = sx - static_cast<double>(x0);
      for (int64_t z = 0; z < s.d; ++z) {
        out.mask.at(z, y, x) = mask_in ? f.mask.at(z, ry, rx) : 0;
        if (!img_in) {
          out.image.at(z, y, x) = fill;
          continue;
        }
        const double a = (1.0 - tx) * f.image.at(z, y0, x0) + tx * f.image.at(z, y0, x1);
        const double b = (1.0 - tx) * f.image.at(z, y1, x0) + tx * f.image.at(z, y1, x1);
        out.image.at(z, y, x) = static_cast<float>((1.0 - ty) * a + ty * b);
      }
    }
  return out;
}

ImageVolume sdm_target(const MaskVolume& mask) {
  if (count_foreground(mask) == 0) return ImageVolume(mask.shape, mask.spacing, 1.0f);
  return sdm::sdm_compute(mask).values;
}

nn::Tensor to_tensor(const ImageVolume& v) {
  const Shape3& s = v.shape;
  return nn::Tensor::from({1, 1, s.d, s.h, s.w}, std::vector<nn::Real>(v.data.begin(), v.data.end()));
}

nn::Tensor to_tensor(const MaskVolume& m) {
  const Shape3& s = m.shape;
  std::vector<nn::Real> d(m.data.size());
  for (size_t i = 0; i < d.size(); ++i) d[i] = m.data[i] ? nn::Real(1) : nn::Real(0);
  return nn::Tensor::from({1, 1, s.d, s.h, s.w}, std::move(d));
}

StepLosses compute_gradients(nn::FdaModel& model, const PatchPair& pair, const TrainConfig& cfg) {
  const nn::Tensor xc = to_tensor(pair.clean.image);
  const nn::Tensor xn = to_tensor(pair.noisy.image);
  const nn::Tensor gn = to_tensor(pair.noisy.mask);

  StepLosses out;
  nn::Tensor reg;
  const nn::Tensor fc = model.forward_clean(xc);
  if (model.config().use_sdm) {
    const auto r = nn::l_reg(fc, to_tensor(sdm_target(pair.clean.mask)), cfg.loss);
    reg = r.value;
  } else {
    reg = nn::l_seg(fc, to_tensor(pair.clean.mask), cfg.loss).value;
  }
  const auto seg = nn::l_seg(model.forward_noisy(xn), gn, cfg.loss);
  const nn::Tensor total = nn::l_total(seg.value, reg);

  out.l_seg = seg.value.item();
  out.l_reg = reg.item();
  out.l_total = total.item();
  out.dice = seg.dice;
  out.focal = seg.focal;
  if (!std::isfinite(out.l_total) || !std::isfinite(out.l_seg) || !std::isfinite(out.l_reg))
    throw NumericError("non-finite loss: l_seg=" + std::to_string(out.l_seg) + " l_reg=" + std::to_string(out.l_reg));

  model.params().zero_grad();
  nn::backward(total);
  return out;
}

StepLosses train_step(nn::FdaModel& model, const PatchPair& pair, Adam& opt, double lr, const TrainConfig& cfg) {
  const StepLosses l = compute_gradients(model, pair, cfg);
  opt.step(lr);
  return l;
}

PatchPair draw_step(const std::vector<Sample>& clean, const std::vector<Sample>& noisy, const TrainConfig& cfg,
                    int64_t step) {
  const CounterRng base = CounterRng(cfg.seed, kStepStream).split(static_cast<uint64_t>(step));
  CounterRng r_pair = base.split(0), r_clean = base.split(1), r_noisy = base.split(2);
  PatchPair p = sample_pair(clean, noisy, cfg.patch, cfg.crop_margin, r_pair);
  p.clean = augment(p.clean, r_clean, cfg.augment);
  p.noisy = augment(p.noisy, r_noisy, cfg.augment);
  return p;
}

uint64_t model_seed(const TrainConfig& cfg) { return CounterRng(cfg.seed, kModelStream).next_u64(); }

FitResult fit(const TrainConfig& cfg, const std::vector<Sample>& clean, const std::vector<Sample>& noisy,
              const std::filesystem::path& out_dir, const FitHooks& hooks) {
  validate(cfg);
  if (clean.empty()) throw ValidationError("clean dataset is empty");
  if (noisy.empty()) throw ValidationError("noisy dataset is empty");
  std::filesystem::create_directories(out_dir);

  nn::FdaModel model(cfg.model, model_seed(cfg));
  Adam opt(model.params(), cfg.adam);

  {
    std::ofstream cf(out_dir / "train_config.json");
    if (!cf) throw IoError("cannot write " + (out_dir / "train_config.json").string());
    cf << to_json(cfg).dump(2) << "\n";
  }

  FitResult res;
  res.log = out_dir / "train_log.jsonl";
  std::ofstream log(res.log, std::ios::trunc);
  if (!log) throw IoError("cannot write " + res.log.string());

  save_checkpoint(checkpoint_path(out_dir, 0), model, opt, 0);
  res.final_checkpoint = checkpoint_path(out_dir, 0);

  const auto t0 = std::chrono::steady_clock::now();
  for (int64_t e = 0; e < cfg.epochs; ++e) {
    const double lr = lr_at(e, cfg);
    for (int64_t s = 0; s < cfg.steps_per_epoch; ++s) {
      const int64_t k = e * cfg.steps_per_epoch + s;
      const PatchPair pair = draw_step(clean, noisy, cfg, k);
      const StepLosses l = train_step(model, pair, opt, lr, cfg);
      res.history.push_back(l);
      const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      nlohmann::ordered_json line = {{"step", k},        {"epoch", e},         {"l_seg", l.l_seg},
                                     {"l_reg", l.l_reg}, {"l_total", l.l_total}, {"dice", l.dice},
                                     {"focal", l.focal}, {"lr", lr},           {"wall_time", wall}};
      log << line.dump() << "\n";
      if (!log) throw IoError("cannot append to " + res.log.string());
      if (hooks.on_step) hooks.on_step(k, l);
    }
    const int64_t done = e + 1;
    if (done == cfg.epochs || (cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0)) {
      save_checkpoint(checkpoint_path(out_dir, done), model, opt, done);
      res.final_checkpoint = checkpoint_path(out_dir, done);
    }
  }
  res.steps = cfg.epochs * cfg.steps_per_epoch;
  return res;
}

std::vector<Sample> load_dataset(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw IoError("dataset directory not found: " + dir.string());
  std::vector<std::filesystem::path> subdirs;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.is_directory()) subdirs.push_back(e.path());
  std::sort(subdirs.begin(), subdirs.end());
  std::vector<Sample> out;
  for (const auto& d : subdirs) {
    auto ps = phantom::load_sample(d);
    out.push_back({d.filename().string(), clamp_normalize(ps.image), std::move(ps.mask)});
  }
  if (out.empty()) throw ValidationError("dataset " + dir.string() + " contains no samples");
  return out;
}

}  // namespace fda::train
