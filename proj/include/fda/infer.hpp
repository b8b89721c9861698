#pragma once

// Sliding-window whole-volume prediction and mask post-processing.

#include <functional>
#include <vector>

#include "fda/model.hpp"
#include "fda/volume.hpp"
#include "json.hpp"

namespace fda::infer {

struct InferConfig {
  Shape3 patch{32, 32, 32};
  Shape3 stride{16, 16, 16};
  double threshold = 0.5;  // voxels strictly above are foreground
  int threads = 1;
};

void validate(const InferConfig& cfg);
nlohmann::ordered_json to_json(const InferConfig& cfg);
InferConfig infer_config_from_json(const nlohmann::json& j, InferConfig base = {});

/// Maps a patch-sized image tile to patch-sized probabilities.
using TilePredictor = std::function<std::vector<float>(const ImageVolume& tile)>;

/// Tile origins along one axis: multiples of `stride`, with the last tile flush
/// to the end. Requires dim >= patch.
std::vector<int64_t> tile_starts(int64_t dim, int64_t patch, int64_t stride);

/// Number of tiles covering each voxel of a volume of shape `s` (after padding
/// small axes up to the patch size).
Grid<int32_t> coverage(const Shape3& s, const InferConfig& cfg);

/// Averages tile probabilities over their overlaps. Axes shorter than the patch
/// are reflect-padded and cropped back. Tiles may run on `cfg.threads` workers;
/// each writes its own buffer and buffers are summed in tile order, so the
/// output does not depend on scheduling.
ImageVolume sliding_window_predict(const TilePredictor& predict, const ImageVolume& image, const InferConfig& cfg);
/// forward_noisy on each tile.
ImageVolume sliding_window_predict(const nn::FdaModel& model, const ImageVolume& image, const InferConfig& cfg);

MaskVolume threshold(const ImageVolume& prob, double t);
/// Threshold, then keep the largest 26-connected component.
MaskVolume postprocess(const ImageVolume& prob, const InferConfig& cfg);

}  // namespace fda::infer
