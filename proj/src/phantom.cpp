#include "fda/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include "fda/rng.hpp"

namespace fda::phantom {

namespace {

using Vec = Point3;

Vec operator+(const Vec& a, const Vec& b) { return {a[0] + b[0], a[1] + b[1], a[2] + b[2]}; }
Vec operator-(const Vec& a, const Vec& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
Vec operator*(double s, const Vec& a) { return {s * a[0], s * a[1], s * a[2]}; }
double dot(const Vec& a, const Vec& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
Vec cross(const Vec& a, const Vec& b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}
Vec normalized(const Vec& a) { return (1.0 / std::sqrt(dot(a, a))) * a; }

constexpr double kDeg = std::numbers::pi / 180.0;

struct Frame {
  Vec dir, u, v;  // orthonormal, dir along the branch
};

// Child frame: keep the parent's u as close as possible.
Frame reframe(const Vec& dir, const Frame& parent) {
  Vec u = parent.u - dot(parent.u, dir) * dir;
  if (dot(u, u) < 1e-12) u = parent.v - dot(parent.v, dir) * dir;
  u = normalized(u);
  return {dir, u, cross(dir, u)};
}

// Distance-to-capsule-axis for every voxel near a branch, min over branches.
// Returns the nearest distance minus radius (signed clearance) per voxel.
Grid<float> clearance_map(const Shape3& shape, const std::vector<CenterlineBranch>& branches) {
  Grid<float> out(shape, {}, std::numeric_limits<float>::infinity());
  for (const auto& b : branches) {
    const double reach = b.radius + 2.0;
    for (size_t i = 0; i + 1 < b.points.size(); ++i) {
      const Vec& a = b.points[i];
      const Vec& c = b.points[i + 1];
      int64_t lo[3], hi[3];
      for (int k = 0; k < 3; ++k) {
        lo[k] = std::max<int64_t>(0, static_cast<int64_t>(std::floor(std::min(a[k], c[k]) - reach)));
        hi[k] = std::min<int64_t>(shape[k] - 1, static_cast<int64_t>(std::ceil(std::max(a[k], c[k]) + reach)));
      }
      for (int64_t z = lo[0]; z <= hi[0]; ++z)
        for (int64_t y = lo[1]; y <= hi[1]; ++y)
          for (int64_t x = lo[2]; x <= hi[2]; ++x) {
            const double d = point_segment_distance({double(z), double(y), double(x)}, a, c) - b.radius;
            float& slot = out.at(z, y, x);
            slot = std::min(slot, static_cast<float>(d));
          }
    }
  }
  return out;
}

std::vector<double> gaussian_kernel(double sigma) {
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> k(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) sum += k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (double& v : k) v /= sum;
  return k;
}

// Separable Gaussian blur with clamp-to-edge boundaries.
void blur(std::vector<double>& field, const Shape3& s, double sigma) {
  if (sigma <= 0.0) return;
  const auto k = gaussian_kernel(sigma);
  const int r = static_cast<int>(k.size() / 2);
  std::vector<double> tmp(field.size());
  const int64_t stride[3] = {s.h * s.w, s.w, 1};
  for (int axis = 0; axis < 3; ++axis) {
    const int64_t n = s[axis];
    for (int64_t z = 0; z < s.d; ++z)
      for (int64_t y = 0; y < s.h; ++y)
        for (int64_t x = 0; x < s.w; ++x) {
          const int64_t pos[3] = {z, y, x};
          const int64_t base = s.index(z, y, x) - pos[axis] * stride[axis];
          double acc = 0.0;
          for (int t = -r; t <= r; ++t) {
            const int64_t q = std::clamp<int64_t>(pos[axis] + t, 0, n - 1);
            acc += k[t + r] * field[base + q * stride[axis]];
          }
          tmp[s.index(z, y, x)] = acc;
        }
    field.swap(tmp);
  }
}

}  // namespace

double point_segment_distance(const Point3& p, const Point3& a, const Point3& b) {
  const Vec ab = b - a;
  const double len2 = dot(ab, ab);
  double t = len2 > 0.0 ? dot(p - a, ab) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const Vec d = p - (a + t * ab);
  return std::sqrt(dot(d, d));
}

void validate(const PhantomSpec& spec) {
  if (spec.shape.d <= 0 || spec.shape.h <= 0 || spec.shape.w <= 0)
    throw ValidationError("phantom shape must be positive");
  if (!(spec.spacing.z > 0 && spec.spacing.y > 0 && spec.spacing.x > 0))
    throw ValidationError("phantom spacing must be positive");
  if (spec.depth < 1) throw ValidationError("phantom depth must be >= 1");
  if (spec.root_radius < 1.0) throw ValidationError("root_radius must be >= 1 voxel");
  if (!(spec.radius_decay > 0.0 && spec.radius_decay < 1.0))
    throw ValidationError("radius_decay must lie in (0, 1)");
  if (!(spec.length_decay > 0.0)) throw ValidationError("length_decay must be > 0");
  if (spec.root_length < 0.0) throw ValidationError("root_length must be >= 0");
  const double deepest = spec.root_radius * std::pow(spec.radius_decay, spec.depth - 1);
  if (deepest < 0.7)
    throw ValidationError("radius underflow: generation " + std::to_string(spec.depth - 1) +
                          " radius " + std::to_string(deepest) + " < 0.7 voxel");
}

void validate(const NoiseSpec& n) {
  if (n.n_patches < 0) throw ValidationError("n_patches must be >= 0");
  const auto check = [](std::pair<double, double> r, const char* what) {
    if (r.first < 0 || r.second < r.first) throw ValidationError(std::string(what) + " must be a non-negative range");
  };
  check(n.patch_radius_range, "patch_radius_range");
  check(n.patch_intensity_range, "patch_intensity_range");
  if (n.blur_sigma < 0 || n.gaussian_noise_sigma < 0) throw ValidationError("noise sigmas must be >= 0");
}

std::vector<Voxel> voxelize_polyline(const std::vector<Point3>& points) {
  std::vector<Voxel> out;
  const auto push = [&](const Point3& p) {
    const Voxel v{std::llround(p[0]), std::llround(p[1]), std::llround(p[2])};
    if (out.empty() || !(out.back() == v)) out.push_back(v);
  };
  if (points.empty()) return out;
  push(points.front());
  for (size_t i = 0; i + 1 < points.size(); ++i) {
    const Vec d = points[i + 1] - points[i];
    const double len = std::sqrt(dot(d, d));
    const int steps = std::max(1, static_cast<int>(std::ceil(len / 0.25)));
    for (int s = 1; s <= steps; ++s) push(points[i] + (double(s) / steps) * d);
  }
  return out;
}

PhantomSample generate_phantom(const PhantomSpec& spec) {
  validate(spec);
  const Shape3 shape = spec.shape;
  const CounterRng rng(spec.seed);

  PhantomSample out;
  std::vector<Frame> frames;
  std::vector<double> lengths;

  const double root_len = spec.root_length > 0.0 ? spec.root_length : 0.35 * double(shape.d);
  const Vec root_start{double(shape.d - 1), double(shape.h - 1) / 2.0, double(shape.w - 1) / 2.0};
  const Frame root_frame{{-1.0, 0.0, 0.0}, {0.0, 1.0, 0.0}, {0.0, 0.0, 1.0}};
  out.centerline.push_back({0, -1, spec.root_radius, {root_start, root_start + root_len * root_frame.dir}});
  frames.push_back(root_frame);
  lengths.push_back(root_len);

  const double half_angle = spec.branch_angle_deg * kDeg;
  for (size_t parent = 0; parent < out.centerline.size(); ++parent) {
    const CenterlineBranch p = out.centerline[parent];
    if (p.generation + 1 >= spec.depth) continue;
    // Each bifurcation plane turns 90 degrees from the parent's, plus seeded jitter.
    CounterRng local = rng.split(parent);
    const double azimuth = 0.5 * std::numbers::pi * (p.generation % 2) +
                           local.uniform(-1.0, 1.0) * spec.azimuth_jitter_deg * kDeg;
    const Frame f = frames[parent];
    const Vec e = std::cos(azimuth) * f.u + std::sin(azimuth) * f.v;
    for (int side : {+1, -1}) {
      const Vec dir = normalized(std::cos(half_angle) * f.dir + (side * std::sin(half_angle)) * e);
      const double len = lengths[parent] * spec.length_decay;
      const Vec start = p.points.back();
      out.centerline.push_back(
          {p.generation + 1, static_cast<int>(parent), p.radius * spec.radius_decay, {start, start + len * dir}});
      frames.push_back(reframe(dir, f));
      lengths.push_back(len);
    }
  }

  // Everything except the trachea inlet must stay inside the grid.
  for (size_t i = 0; i < out.centerline.size(); ++i) {
    const auto& b = out.centerline[i];
    for (size_t k = (i == 0 ? 1 : 0); k < b.points.size(); ++k)
      for (int a = 0; a < 3; ++a)
        if (b.points[k][a] - b.radius < 0.0 || b.points[k][a] + b.radius > double(shape[a] - 1))
          throw ValidationError("phantom tree exits volume bounds (branch " + std::to_string(i) +
                                "); enlarge shape or shrink the tree");
  }

  const Grid<float> clearance = clearance_map(shape, out.centerline);
  out.mask = MaskVolume(shape, spec.spacing, 0);
  out.image = ImageVolume(shape, spec.spacing, spec.background_level);
  for (size_t i = 0; i < clearance.data.size(); ++i) {
    const double c = clearance.data[i];
    out.mask.data[i] = c <= 0.0 ? 1 : 0;
    const double lumen = std::clamp(0.5 - c, 0.0, 1.0);  // one-voxel anti-aliased edge
    out.image.data[i] = static_cast<float>(spec.background_level + spec.wall_contrast * lumen);
  }
  // Thin branches may fall between voxel centres; the rasterized centerline keeps them connected.
  for (const auto& b : out.centerline)
    for (const Voxel& v : voxelize_polyline(b.points))
      if (shape.contains(v.z, v.y, v.x)) out.mask.at(v) = 1;
  return out;
}

PhantomSample corrupt_to_noisy(const PhantomSample& s, const NoiseSpec& n) {
  validate(n);
  PhantomSample out = s;
  const Shape3 shape = s.image.shape;
  const CounterRng rng(n.seed);

  std::vector<double> field(static_cast<size_t>(shape.numel()), 0.0);
  CounterRng patch_rng = rng.split(0);
  for (int p = 0; p < n.n_patches; ++p) {
    const Vec c{patch_rng.uniform(0.0, double(shape.d - 1)), patch_rng.uniform(0.0, double(shape.h - 1)),
                patch_rng.uniform(0.0, double(shape.w - 1))};
    const double radius = patch_rng.uniform(n.patch_radius_range.first, n.patch_radius_range.second);
    const double amp = patch_rng.uniform(n.patch_intensity_range.first, n.patch_intensity_range.second);
    for (int64_t z = 0; z < shape.d; ++z)
      for (int64_t y = 0; y < shape.h; ++y)
        for (int64_t x = 0; x < shape.w; ++x) {
          const Vec d = Vec{double(z), double(y), double(x)} - c;
          if (dot(d, d) <= radius * radius) field[shape.index(z, y, x)] += amp;
        }
  }
  blur(field, shape, n.blur_sigma);

  CounterRng noise_rng = rng.split(1);
  for (size_t i = 0; i < field.size(); ++i) {
    double v = out.image.data[i] + field[i];
    if (n.gaussian_noise_sigma > 0.0) v += n.gaussian_noise_sigma * noise_rng.normal();
    out.image.data[i] = static_cast<float>(v);
  }
  return out;
}

Grid<int32_t> branch_labels(const PhantomSample& s) {
  Grid<int32_t> out(s.mask.shape, s.mask.spacing, -1);
  for (int64_t z = 0; z < out.shape.d; ++z)
    for (int64_t y = 0; y < out.shape.h; ++y)
      for (int64_t x = 0; x < out.shape.w; ++x) {
        if (!s.mask.at(z, y, x)) continue;
        double best = std::numeric_limits<double>::infinity();
        int32_t label = -1;
        for (size_t b = 0; b < s.centerline.size(); ++b) {
          const auto& pts = s.centerline[b].points;
          for (size_t i = 0; i + 1 < pts.size(); ++i) {
            const double d = point_segment_distance({double(z), double(y), double(x)}, pts[i], pts[i + 1]);
            if (d < best) {
              best = d;
              label = static_cast<int32_t>(b);
            }
          }
        }
        out.at(z, y, x) = label;
      }
  return out;
}

std::vector<int> subtree(const std::vector<CenterlineBranch>& branches, int root) {
  std::vector<int> out{root};
  for (size_t i = 0; i < out.size(); ++i)
    for (size_t b = 0; b < branches.size(); ++b)
      if (branches[b].parent == out[i]) out.push_back(static_cast<int>(b));
  std::sort(out.begin(), out.end());
  return out;
}

nlohmann::json centerline_to_json(const std::vector<CenterlineBranch>& branches) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& b : branches) {
    nlohmann::json pts = nlohmann::json::array();
    for (const auto& p : b.points) pts.push_back({p[0], p[1], p[2]});
    arr.push_back({{"generation", b.generation}, {"parent", b.parent}, {"radius", b.radius}, {"points", pts}});
  }
  return arr;
}

std::vector<CenterlineBranch> centerline_from_json(const nlohmann::json& j) {
  if (!j.is_array()) throw ValidationError("centerline JSON must be an array of branches");
  std::vector<CenterlineBranch> out;
  for (const auto& jb : j) {
    CenterlineBranch b;
    b.generation = jb.at("generation").get<int>();
    b.parent = jb.value("parent", -1);
    b.radius = jb.value("radius", 0.0);
    for (const auto& p : jb.at("points")) b.points.push_back({p.at(0).get<double>(), p.at(1).get<double>(), p.at(2).get<double>()});
    out.push_back(std::move(b));
  }
  return out;
}

void save_centerline(const std::vector<CenterlineBranch>& branches, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << centerline_to_json(branches).dump(1) << "\n";
}

std::vector<CenterlineBranch> load_centerline(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return centerline_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("malformed centerline " + path.string() + ": " + e.what());
  }
}

PhantomSpec phantom_spec_from_json(const nlohmann::json& j, PhantomSpec s) {
  if (j.contains("shape")) {
    const auto v = j["shape"].get<std::vector<int64_t>>();
    if (v.size() != 3) throw ValidationError("phantom shape must have 3 entries");
    s.shape = {v[0], v[1], v[2]};
  }
  if (j.contains("spacing")) {
    const auto v = j["spacing"].get<std::vector<double>>();
    if (v.size() != 3) throw ValidationError("phantom spacing must have 3 entries");
    s.spacing = {v[0], v[1], v[2]};
  }
  s.depth = j.value("depth", s.depth);
  s.root_radius = j.value("root_radius", s.root_radius);
  s.radius_decay = j.value("radius_decay", s.radius_decay);
  s.branch_angle_deg = j.value("branch_angle_deg", s.branch_angle_deg);
  s.seed = j.value("seed", s.seed);
  s.wall_contrast = j.value("wall_contrast", s.wall_contrast);
  s.background_level = j.value("background_level", s.background_level);
  s.root_length = j.value("root_length", s.root_length);
  s.length_decay = j.value("length_decay", s.length_decay);
  s.azimuth_jitter_deg = j.value("azimuth_jitter_deg", s.azimuth_jitter_deg);
  return s;
}

NoiseSpec noise_spec_from_json(const nlohmann::json& j, NoiseSpec n) {
  const auto range = [&](const char* key, std::pair<double, double>& r) {
    if (!j.contains(key)) return;
    const auto v = j[key].get<std::vector<double>>();
    if (v.size() != 2) throw ValidationError(std::string(key) + " must have 2 entries");
    r = {v[0], v[1]};
  };
  n.n_patches = j.value("n_patches", n.n_patches);
  range("patch_radius_range", n.patch_radius_range);
  range("patch_intensity_range", n.patch_intensity_range);
  n.blur_sigma = j.value("blur_sigma", n.blur_sigma);
  n.gaussian_noise_sigma = j.value("gaussian_noise_sigma", n.gaussian_noise_sigma);
  n.seed = j.value("seed", n.seed);
  return n;
}

nlohmann::json to_json(const PhantomSpec& s) {
  return {{"shape", {s.shape.d, s.shape.h, s.shape.w}},
          {"spacing", {s.spacing.z, s.spacing.y, s.spacing.x}},
          {"depth", s.depth},
          {"root_radius", s.root_radius},
          {"radius_decay", s.radius_decay},
          {"branch_angle_deg", s.branch_angle_deg},
          {"seed", s.seed},
          {"wall_contrast", s.wall_contrast},
          {"background_level", s.background_level},
          {"root_length", s.root_length},
          {"length_decay", s.length_decay},
          {"azimuth_jitter_deg", s.azimuth_jitter_deg}};
}

nlohmann::json to_json(const NoiseSpec& n) {
  return {{"n_patches", n.n_patches},
          {"patch_radius_range", {n.patch_radius_range.first, n.patch_radius_range.second}},
          {"patch_intensity_range", {n.patch_intensity_range.first, n.patch_intensity_range.second}},
          {"blur_sigma", n.blur_sigma},
          {"gaussian_noise_sigma", n.gaussian_noise_sigma},
          {"seed", n.seed}};
}

void save_sample(const PhantomSample& s, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  save_image(s.image, dir / "image");
  save_mask(s.mask, dir / "mask");
  save_centerline(s.centerline, dir / "centerline.json");
}

PhantomSample load_sample(const std::filesystem::path& dir) {
  PhantomSample s;
  s.image = load_image(dir / "image");
  s.mask = load_mask(dir / "mask");
  if (std::filesystem::exists(dir / "centerline.json")) s.centerline = load_centerline(dir / "centerline.json");
  if (!(s.image.shape == s.mask.shape))
    throw ValidationError("image and mask shapes differ in " + dir.string());
  return s;
}

}  // namespace fda::phantom
