#pragma once

#include <cstdint>
#include <vector>

#include "fda/volume.hpp"

namespace fda::sdm {

struct SdmOptions {
  bool spacing_aware = false;  // scale per-axis offsets by voxel spacing
  bool single_scale = false;   // divide both sides by max(max_in, max_out)
};

/// Normalized signed distance map. max_in / max_out are the largest interior
/// and exterior distances before normalization.
struct SdmVolume {
  ImageVolume values;
  double max_in = 0.0;
  double max_out = 0.0;
};

/// Foreground voxels with at least one 6-neighbour in the background; the
/// outside of the grid counts as background. Returned in ascending index order.
std::vector<Voxel> extract_surface(const MaskVolume& m);
MaskVolume surface_mask(const MaskVolume& m);

/// Exact squared Euclidean distance (voxel units) from every voxel to the
/// nearest source voxel, by separable lower-envelope passes in integer
/// arithmetic. Voxels with no reachable source hold -1.
Grid<int64_t> squared_distance_transform(const MaskVolume& sources);

/// As above with per-axis offsets scaled by `spacing` (mm). Unreachable = +inf.
Grid<double> squared_distance_transform(const MaskVolume& sources, const Spacing& spacing);

/// Signed distances before normalization: 0 on the surface, negative inside,
/// positive outside. Throws ValidationError on an empty mask.
Grid<double> signed_distance(const MaskVolume& m, bool spacing_aware = false);

/// Per-side scaling into [-1, 1] (or a single shared scale).
SdmVolume sdm_normalize(const Grid<double>& raw, bool single_scale = false);

SdmVolume sdm_compute(const MaskVolume& m, const SdmOptions& opt = {});

/// Volume of kind Sdm with max_in / max_out under "aux".
Volume to_volume(const SdmVolume& s);

}  // namespace fda::sdm
