#include "fda/volume.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <deque>
#include <fstream>
#include <sstream>

namespace fda {

static_assert(std::endian::native == std::endian::little, "volume I/O assumes a little-endian host");

namespace {

using ojson = nlohmann::ordered_json;

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot open " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& p, const char* bytes, size_t n) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + p.string());
  out.write(bytes, static_cast<std::streamsize>(n));
  if (!out) throw IoError("short write to " + p.string());
}

}  // namespace

std::string to_string(VolumeKind kind) {
  switch (kind) {
    case VolumeKind::Image: return "image";
    case VolumeKind::Mask: return "mask";
    case VolumeKind::Sdm: return "sdm";
  }
  return "?";
}

VolumeKind volume_kind_from_string(const std::string& tag) {
  if (tag == "image") return VolumeKind::Image;
  if (tag == "mask") return VolumeKind::Mask;
  if (tag == "sdm") return VolumeKind::Sdm;
  throw ValidationError("unknown volume kind '" + tag + "'");
}

VolumeHeader Volume::header() const {
  VolumeHeader h;
  h.kind = kind;
  std::visit([&](const auto& g) { h.shape = g.shape; h.spacing = g.spacing; }, grid);
  h.aux = aux;
  return h;
}

const ImageVolume& Volume::real() const {
  if (!std::holds_alternative<ImageVolume>(grid))
    throw ValidationError("volume of kind " + to_string(kind) + " holds no f32 data");
  return std::get<ImageVolume>(grid);
}

const MaskVolume& Volume::mask() const {
  if (!std::holds_alternative<MaskVolume>(grid))
    throw ValidationError("volume of kind " + to_string(kind) + " is not a mask");
  return std::get<MaskVolume>(grid);
}

void validate(const Volume& v) {
  const bool wants_mask = v.kind == VolumeKind::Mask;
  if (wants_mask != std::holds_alternative<MaskVolume>(v.grid))
    throw ValidationError("storage type does not match volume kind " + to_string(v.kind));
  std::visit(
      [&](const auto& g) {
        if (g.shape.d <= 0 || g.shape.h <= 0 || g.shape.w <= 0)
          throw ValidationError("non-positive shape " + to_string(g.shape));
        if (g.size() != g.shape.numel())
          throw ValidationError("data length " + std::to_string(g.size()) + " != " +
                                std::to_string(g.shape.numel()));
        if (!(g.spacing.z > 0 && g.spacing.y > 0 && g.spacing.x > 0))
          throw ValidationError("spacing components must be > 0");
      },
      v.grid);
  if (v.kind == VolumeKind::Mask) {
    for (uint8_t b : v.mask().data)
      if (b > 1) throw ValidationError("mask values must be 0 or 1");
  } else if (v.kind == VolumeKind::Sdm) {
    for (float f : v.real().data)
      if (!(f >= -1.0f && f <= 1.0f)) throw ValidationError("sdm values must lie in [-1, 1]");
  } else {
    for (float f : v.real().data)
      if (!std::isfinite(f)) throw ValidationError("image contains non-finite values");
  }
}

std::pair<std::filesystem::path, std::filesystem::path> volume_paths(const std::filesystem::path& path) {
  std::filesystem::path base = path;
  if (base.extension() == ".volmeta" || base.extension() == ".volraw") base.replace_extension();
  std::filesystem::path meta = base, raw = base;
  meta += ".volmeta";
  raw += ".volraw";
  return {meta, raw};
}

Volume load_volume(const std::filesystem::path& path) {
  const auto [meta_path, raw_path] = volume_paths(path);
  ojson meta;
  try {
    meta = ojson::parse(read_file(meta_path));
  } catch (const ojson::parse_error& e) {
    throw IoError("malformed header " + meta_path.string() + ": " + e.what());
  }
  if (!meta.is_object() || !meta.contains("version") || !meta.contains("shape") ||
      !meta.contains("spacing") || !meta.contains("kind"))
    throw ValidationError("header " + meta_path.string() + " is missing required keys");
  if (meta["version"].get<int>() != kVolumeFormatVersion)
    throw ValidationError("unsupported volume format version " + meta["version"].dump());

  const auto shape_v = meta["shape"].get<std::vector<int64_t>>();
  const auto spacing_v = meta["spacing"].get<std::vector<double>>();
  if (shape_v.size() != 3 || spacing_v.size() != 3)
    throw ValidationError("shape and spacing must have three components");
  const Shape3 shape{shape_v[0], shape_v[1], shape_v[2]};
  const Spacing spacing{spacing_v[0], spacing_v[1], spacing_v[2]};
  if (shape.d <= 0 || shape.h <= 0 || shape.w <= 0)
    throw ValidationError("non-positive shape " + to_string(shape));

  Volume v;
  v.kind = volume_kind_from_string(meta["kind"].get<std::string>());
  if (meta.contains("aux")) v.aux = meta["aux"];

  const std::string raw = read_file(raw_path);
  const size_t elem = v.kind == VolumeKind::Mask ? 1 : 4;
  if (raw.size() != static_cast<size_t>(shape.numel()) * elem)
    throw ValidationError("length mismatch: header " + to_string(shape) + " expects " +
                          std::to_string(shape.numel()) + " values, raw file holds " +
                          std::to_string(raw.size() / elem) +
                          (raw.size() % elem ? " (plus trailing bytes)" : ""));
  if (v.kind == VolumeKind::Mask) {
    MaskVolume g(shape, spacing);
    std::copy(raw.begin(), raw.end(), reinterpret_cast<char*>(g.data.data()));
    v.grid = std::move(g);
  } else {
    ImageVolume g(shape, spacing);
    std::copy(raw.begin(), raw.end(), reinterpret_cast<char*>(g.data.data()));
    v.grid = std::move(g);
  }
  validate(v);
  return v;
}

void save_volume(const Volume& v, const std::filesystem::path& path) {
  validate(v);
  const auto [meta_path, raw_path] = volume_paths(path);
  const VolumeHeader h = v.header();
  ojson meta = ojson::object();
  meta["version"] = h.version;
  meta["shape"] = {h.shape.d, h.shape.h, h.shape.w};
  meta["spacing"] = {h.spacing.z, h.spacing.y, h.spacing.x};
  meta["kind"] = to_string(h.kind);
  if (!v.aux.is_null() && !v.aux.empty()) meta["aux"] = v.aux;
  const std::string text = meta.dump(2) + "\n";
  write_file(meta_path, text.data(), text.size());
  std::visit(
      [&](const auto& g) {
        write_file(raw_path, reinterpret_cast<const char*>(g.data.data()),
                   g.data.size() * sizeof(g.data[0]));
      },
      v.grid);
}

ImageVolume load_image(const std::filesystem::path& path) {
  Volume v = load_volume(path);
  if (v.kind == VolumeKind::Mask) throw ValidationError(path.string() + " is a mask, expected f32 data");
  return std::get<ImageVolume>(std::move(v.grid));
}

MaskVolume load_mask(const std::filesystem::path& path) {
  Volume v = load_volume(path);
  if (v.kind != VolumeKind::Mask) throw ValidationError(path.string() + " is not a mask");
  return std::get<MaskVolume>(std::move(v.grid));
}

void save_image(const ImageVolume& img, const std::filesystem::path& path) {
  save_volume(Volume{VolumeKind::Image, img}, path);
}

void save_mask(const MaskVolume& mask, const std::filesystem::path& path) {
  save_volume(Volume{VolumeKind::Mask, mask}, path);
}

ImageVolume clamp_normalize(const ImageVolume& v, double lo, double hi) {
  if (!(lo < hi)) throw ValidationError("clamp_normalize requires lo < hi");
  ImageVolume out(v.shape, v.spacing);
  const double scale = 255.0 / (hi - lo);
  std::transform(v.data.begin(), v.data.end(), out.data.begin(), [&](float f) {
    return static_cast<float>((std::clamp(static_cast<double>(f), lo, hi) - lo) * scale);
  });
  return out;
}

const std::vector<Voxel>& neighborhood(int connectivity) {
  static const auto build = [](int conn) {
    std::vector<Voxel> out;
    for (int dz = -1; dz <= 1; ++dz)
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const int nz = std::abs(dz) + std::abs(dy) + std::abs(dx);
          if (nz == 0) continue;
          if (conn == 6 && nz > 1) continue;
          if (conn == 18 && nz > 2) continue;
          out.push_back({dz, dy, dx});
        }
    return out;
  };
  static const std::vector<Voxel> n6 = build(6), n18 = build(18), n26 = build(26);
  switch (connectivity) {
    case 6: return n6;
    case 18: return n18;
    case 26: return n26;
    default: throw ValidationError("connectivity must be 6, 18 or 26");
  }
}

ComponentLabels label_components(const MaskVolume& m, int connectivity) {
  const auto& nbrs = neighborhood(connectivity);
  ComponentLabels out{Grid<int32_t>(m.shape, m.spacing, 0), {}};
  const Shape3 s = m.shape;
  std::vector<Voxel> stack;
  for (int64_t z = 0; z < s.d; ++z)
    for (int64_t y = 0; y < s.h; ++y)
      for (int64_t x = 0; x < s.w; ++x) {
        if (!m.at(z, y, x) || out.labels.at(z, y, x)) continue;
        const int32_t id = static_cast<int32_t>(out.sizes.size()) + 1;
        int64_t count = 0;
        out.labels.at(z, y, x) = id;
        stack.push_back({z, y, x});
        while (!stack.empty()) {
          const Voxel v = stack.back();
          stack.pop_back();
          ++count;
          for (const Voxel& d : nbrs) {
            const int64_t nz = v.z + d.z, ny = v.y + d.y, nx = v.x + d.x;
            if (!s.contains(nz, ny, nx) || !m.at(nz, ny, nx) || out.labels.at(nz, ny, nx)) continue;
            out.labels.at(nz, ny, nx) = id;
            stack.push_back({nz, ny, nx});
          }
        }
        out.sizes.push_back(count);
      }
  return out;
}

MaskVolume largest_component(const MaskVolume& m, int connectivity) {
  const ComponentLabels cl = label_components(m, connectivity);
  MaskVolume out(m.shape, m.spacing, 0);
  if (cl.sizes.empty()) return out;
  // Components are numbered in discovery order, so the first maximum holds the smallest index.
  const auto best = std::max_element(cl.sizes.begin(), cl.sizes.end()) - cl.sizes.begin();
  const int32_t keep = static_cast<int32_t>(best) + 1;
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] = cl.labels.data[i] == keep ? 1 : 0;
  return out;
}

int64_t count_foreground(const MaskVolume& m) {
  return std::count_if(m.data.begin(), m.data.end(), [](uint8_t b) { return b != 0; });
}

}  // namespace fda
