#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <variant>
#include <vector>

#include "fda/common.hpp"
#include "json.hpp"

namespace fda {

enum class VolumeKind { Image, Mask, Sdm };

std::string to_string(VolumeKind kind);
VolumeKind volume_kind_from_string(const std::string& tag);

/// Dense z-major scalar grid (D outer, W inner) with physical spacing.
template <class T>
struct Grid {
  Shape3 shape;
  Spacing spacing;
  std::vector<T> data;

  Grid() = default;
  Grid(Shape3 s, Spacing sp = {}, T fill = T{})
      : shape(s), spacing(sp), data(static_cast<size_t>(s.numel()), fill) {}

  T& at(int64_t z, int64_t y, int64_t x) { return data[static_cast<size_t>(shape.index(z, y, x))]; }
  const T& at(int64_t z, int64_t y, int64_t x) const {
    return data[static_cast<size_t>(shape.index(z, y, x))];
  }
  T& at(const Voxel& v) { return at(v.z, v.y, v.x); }
  const T& at(const Voxel& v) const { return at(v.z, v.y, v.x); }
  int64_t size() const { return static_cast<int64_t>(data.size()); }
};

using ImageVolume = Grid<float>;
using MaskVolume = Grid<uint8_t>;

inline constexpr int kVolumeFormatVersion = 1;

struct VolumeHeader {
  int version = kVolumeFormatVersion;
  Shape3 shape;
  Spacing spacing;
  VolumeKind kind = VolumeKind::Image;
  nlohmann::ordered_json aux = nlohmann::ordered_json::object();
};

/// A volume as stored on disk. Image and Sdm kinds carry f32 data, Mask carries u8.
struct Volume {
  VolumeKind kind = VolumeKind::Image;
  std::variant<ImageVolume, MaskVolume> grid;
  nlohmann::ordered_json aux = nlohmann::ordered_json::object();

  VolumeHeader header() const;
  const ImageVolume& real() const;
  const MaskVolume& mask() const;
};

/// Throws ValidationError if any Volume invariant is violated.
void validate(const Volume& v);

/// `<base>.volmeta` and `<base>.volraw`. A trailing extension on `path` is ignored.
std::pair<std::filesystem::path, std::filesystem::path> volume_paths(const std::filesystem::path& path);

Volume load_volume(const std::filesystem::path& path);
void save_volume(const Volume& v, const std::filesystem::path& path);

ImageVolume load_image(const std::filesystem::path& path);
MaskVolume load_mask(const std::filesystem::path& path);
void save_image(const ImageVolume& img, const std::filesystem::path& path);
void save_mask(const MaskVolume& mask, const std::filesystem::path& path);

/// Clip to [lo, hi] and rescale linearly onto [0, 255].
ImageVolume clamp_normalize(const ImageVolume& v, double lo = -1200.0, double hi = 600.0);

/// Neighbour offsets for 6-, 18- or 26-connectivity.
const std::vector<Voxel>& neighborhood(int connectivity);

struct ComponentLabels {
  Grid<int32_t> labels;          // 0 = background, 1..n = component id in discovery order
  std::vector<int64_t> sizes;    // sizes[i] = voxel count of component i+1
};

/// Connected components discovered in ascending voxel-index order.
ComponentLabels label_components(const MaskVolume& m, int connectivity = 26);

/// Keep only the largest connected foreground component. Ties go to the
/// component holding the smallest voxel index.
MaskVolume largest_component(const MaskVolume& m, int connectivity = 26);

int64_t count_foreground(const MaskVolume& m);

}  // namespace fda
