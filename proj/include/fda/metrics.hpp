#pragma once

#include <optional>
#include <vector>

#include "fda/phantom.hpp"
#include "fda/skeleton.hpp"
#include "fda/volume.hpp"
#include "json.hpp"

namespace fda::metrics {

struct Branch {
  std::vector<Voxel> path;  // consecutive voxels are 26-adjacent
  double length_mm = 0.0;
};

struct BranchSet {
  std::vector<Branch> branches;
  double total_length_mm() const;
};

double path_length_mm(const std::vector<Voxel>& path, const Spacing& spacing);

/// Splits a skeleton into maximal simple paths between end points and
/// junctions. Adjacent junction voxels are merged into one node, and nodes
/// that connect exactly two paths are dissolved.
BranchSet parse_branches(const Skeleton& s, const Spacing& spacing);

/// Ground-truth branches from a phantom centerline (voxelized polylines).
BranchSet branches_from_centerline(const std::vector<phantom::CenterlineBranch>& centerline, const Shape3& shape,
                                   const Spacing& spacing);

/// Percent of ground-truth centerline length whose segments have both end
/// voxels inside `pred`.
double length_rate(const BranchSet& gt, const MaskVolume& pred);

/// Percent of branches with at least `frac` of their voxels inside `pred`.
double branch_rate(const BranchSet& gt, const MaskVolume& pred, double frac = 0.8);
std::vector<bool> detected_branches(const BranchSet& gt, const MaskVolume& pred, double frac = 0.8);

/// 100 * 2|P n G| / (|P| + |G|); 100 when both are empty.
double dsc(const MaskVolume& pred, const MaskVolume& gt);

struct EvalOptions {
  double branch_fraction = 0.8;
  int connectivity = 26;
};

struct MetricsReport {
  double length_rate = 0.0;
  double branch_rate = 0.0;
  double dsc = 0.0;
  std::vector<bool> branch_detected;
  double gt_total_length_mm = 0.0;
  int64_t gt_branch_count = 0;
  double branch_fraction = 0.8;
  std::string centerline_source;  // "phantom" or "skeleton"
};

/// Scores the largest component of `pred` against `gt`. The phantom centerline
/// is used when given, otherwise the ground truth is skeletonized.
MetricsReport evaluate(const MaskVolume& pred, const MaskVolume& gt,
                       const std::optional<std::vector<phantom::CenterlineBranch>>& centerline = std::nullopt,
                       const EvalOptions& opt = {});

nlohmann::ordered_json to_json(const MetricsReport& r);

}  // namespace fda::metrics
