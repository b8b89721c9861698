#pragma once

// Paired clean/noisy training: patch sampling, augmentation, Adam updates,
// learning-rate schedule and checkpointing.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "fda/checkpoint.hpp"
#include "fda/loss.hpp"
#include "fda/model.hpp"
#include "fda/optim.hpp"
#include "fda/rng.hpp"
#include "fda/volume.hpp"

namespace fda::train {

struct AugmentConfig {
  bool flip = true;       // W-axis flip with probability 0.5
  double rot_deg = 10.0;  // rotation about z drawn from U(-rot_deg, rot_deg)
};

struct TrainConfig {
  int64_t epochs = 20;
  int64_t steps_per_epoch = 10;
  double lr = 0.002;
  int64_t lr_drop_epoch = 17;
  double lr_drop_factor = 10.0;
  Shape3 patch{32, 32, 32};
  uint64_t seed = 1;
  AugmentConfig augment;
  AdamConfig adam;
  /// A checkpoint is written after every `checkpoint_every` epochs; the initial
  /// and final ones are always written. 0 keeps only those two.
  int64_t checkpoint_every = 0;
  /// Voxels added on each side of the airway bounding box when drawing crop centers.
  int64_t crop_margin = 4;
  nn::FdaConfig model = nn::FdaConfig::toy();
  nn::LossConfig loss;
};

void validate(const TrainConfig& cfg);
nlohmann::ordered_json to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base = {});

double lr_at(int64_t epoch, const TrainConfig& cfg);

/// A normalized image with its airway mask.
struct Sample {
  std::string name;
  ImageVolume image;
  MaskVolume mask;
};

struct Patch {
  ImageVolume image;
  MaskVolume mask;
};

struct PatchPair {
  Patch clean;
  Patch noisy;
  size_t clean_index = 0;
  size_t noisy_index = 0;
  Voxel clean_origin;
  Voxel noisy_origin;
};

/// Crop origin whose patch center falls in the airway bounding box grown by
/// `margin`, clamped so that the patch stays inside the volume.
Voxel crop_origin(const MaskVolume& mask, const Shape3& patch, int64_t margin, CounterRng& rng);
Patch crop(const Sample& s, const Voxel& origin, const Shape3& patch);
PatchPair sample_pair(const std::vector<Sample>& clean, const std::vector<Sample>& noisy, const Shape3& patch,
                      int64_t margin, CounterRng& rng);

/// Always consumes one flip draw and one angle draw.
Patch augment(const Patch& p, CounterRng& rng, const AugmentConfig& cfg);
/// Optional W flip, then rotation about the z axis through the slice center.
/// Bilinear in-plane resampling for the image (the rotation leaves z fixed),
/// nearest neighbour for the mask; samples from outside take the patch median
/// intensity and background label.
Patch augment_with(const Patch& p, bool flip, double theta_deg);

/// Normalized SDM of `mask`, or all +1 when the mask is empty.
ImageVolume sdm_target(const MaskVolume& mask);

nn::Tensor to_tensor(const ImageVolume& v);
nn::Tensor to_tensor(const MaskVolume& m);

struct StepLosses {
  double l_seg = 0.0;
  double l_reg = 0.0;
  double l_total = 0.0;
  double dice = 0.0;
  double focal = 0.0;
};

/// Gradients of the combined loss for an already augmented pair; parameters are
/// left untouched. The clean-path term is the SDM regression loss, or a
/// segmentation loss on the clean output when use_sdm is off.
StepLosses compute_gradients(nn::FdaModel& model, const PatchPair& pair, const TrainConfig& cfg);
/// compute_gradients followed by one Adam step. Throws NumericError on a
/// non-finite loss.
StepLosses train_step(nn::FdaModel& model, const PatchPair& pair, Adam& opt, double lr, const TrainConfig& cfg);

/// Draws the pair and augmentations of global step `step`.
PatchPair draw_step(const std::vector<Sample>& clean, const std::vector<Sample>& noisy, const TrainConfig& cfg,
                    int64_t step);

uint64_t model_seed(const TrainConfig& cfg);

struct FitResult {
  std::filesystem::path final_checkpoint;
  std::filesystem::path log;
  int64_t steps = 0;
  std::vector<StepLosses> history;
};

struct FitHooks {
  std::function<void(int64_t step, const StepLosses&)> on_step;
};

/// Trains from scratch and writes ckpt_<epoch>.fda files plus train_log.jsonl
/// into `out_dir`.
FitResult fit(const TrainConfig& cfg, const std::vector<Sample>& clean, const std::vector<Sample>& noisy,
              const std::filesystem::path& out_dir, const FitHooks& hooks = {});

/// Loads every sample subdirectory (image, mask, centerline.json) in name order
/// and normalizes the images.
std::vector<Sample> load_dataset(const std::filesystem::path& dir);

}  // namespace fda::train
