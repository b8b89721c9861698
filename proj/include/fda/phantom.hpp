#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <utility>
#include <vector>

#include "fda/volume.hpp"
#include "json.hpp"

namespace fda::phantom {

/// Recipe for a synthetic airway tree. Lengths and radii are in voxels.
struct PhantomSpec {
  Shape3 shape{48, 48, 48};
  Spacing spacing{};
  int depth = 3;                    // branching generations
  double root_radius = 3.0;
  double radius_decay = 0.7;        // child radius = parent radius * decay
  double branch_angle_deg = 35.0;   // bifurcation half-angle
  uint64_t seed = 1;
  float wall_contrast = -150.0f;    // lumen minus background, HU
  float background_level = -850.0f; // HU
  double root_length = 0.0;         // 0 selects 0.35 * D
  double length_decay = 0.75;
  double azimuth_jitter_deg = 30.0;
};

/// Noisy-domain appearance corruption: soft additive blobs plus pixel noise.
struct NoiseSpec {
  int n_patches = 6;
  std::pair<double, double> patch_radius_range{3.0, 7.0};
  std::pair<double, double> patch_intensity_range{250.0, 450.0};
  double blur_sigma = 1.5;
  double gaussian_noise_sigma = 25.0;
  uint64_t seed = 1;
};

using Point3 = std::array<double, 3>;  // (z, y, x) in voxel units

struct CenterlineBranch {
  int generation = 0;
  int parent = -1;
  double radius = 0.0;
  std::vector<Point3> points;
};

struct PhantomSample {
  ImageVolume image;
  MaskVolume mask;
  std::vector<CenterlineBranch> centerline;
};

void validate(const PhantomSpec& spec);
void validate(const NoiseSpec& spec);

/// Deterministic binary tree of capsules, 2^depth - 1 branches in breadth-first order.
PhantomSample generate_phantom(const PhantomSpec& spec);

/// Adds blurred blobs and Gaussian noise to the image; mask and centerline are untouched.
PhantomSample corrupt_to_noisy(const PhantomSample& s, const NoiseSpec& n);

/// Voxels visited by a densely sampled polyline, consecutive duplicates removed.
/// Consecutive voxels are 26-adjacent.
std::vector<Voxel> voxelize_polyline(const std::vector<Point3>& points);

/// Euclidean distance from p to segment [a, b].
double point_segment_distance(const Point3& p, const Point3& a, const Point3& b);

/// For every foreground voxel, the index of the nearest centerline branch
/// (ties to the lower index); -1 for background.
Grid<int32_t> branch_labels(const PhantomSample& s);

/// Indices of `root` and all of its descendants.
std::vector<int> subtree(const std::vector<CenterlineBranch>& branches, int root);

nlohmann::json centerline_to_json(const std::vector<CenterlineBranch>& branches);
std::vector<CenterlineBranch> centerline_from_json(const nlohmann::json& j);
void save_centerline(const std::vector<CenterlineBranch>& branches, const std::filesystem::path& path);
std::vector<CenterlineBranch> load_centerline(const std::filesystem::path& path);

PhantomSpec phantom_spec_from_json(const nlohmann::json& j, PhantomSpec base = {});
NoiseSpec noise_spec_from_json(const nlohmann::json& j, NoiseSpec base = {});
nlohmann::json to_json(const PhantomSpec& s);
nlohmann::json to_json(const NoiseSpec& s);

/// Writes image, mask and centerline.json into `dir`.
void save_sample(const PhantomSample& s, const std::filesystem::path& dir);
PhantomSample load_sample(const std::filesystem::path& dir);

}  // namespace fda::phantom
