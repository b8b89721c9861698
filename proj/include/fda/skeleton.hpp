#pragma once

#include <vector>

#include "fda/volume.hpp"

namespace fda::metrics {

/// Unit-width centerline of a mask; foreground 26-connected, background 6-connected.
struct Skeleton {
  MaskVolume voxels;
};

/// Topology-preserving iterative thinning. Border voxels are peeled in six
/// directional sub-iterations; a voxel is removed only if it is simple and not
/// an end point. Throws ValidationError on an empty mask.
Skeleton skeletonize(const MaskVolume& m);

/// True if deleting the centre of the 3x3x3 neighbourhood `nbhd` (z-major,
/// index 13 is the centre) preserves topology.
bool is_simple_point(const bool nbhd[27]);

/// Euler characteristic of the union of closed unit cubes at the foreground voxels.
int64_t euler_characteristic(const MaskVolume& m);

/// Number of 26-neighbours inside the mask.
int neighbor_count(const MaskVolume& m, int64_t z, int64_t y, int64_t x);

}  // namespace fda::metrics
