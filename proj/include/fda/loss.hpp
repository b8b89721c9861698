#pragma once

// Training objectives: SDM regression with a sign penalty, and Dice + focal
// segmentation loss.

#include "fda/tensor.hpp"
#include "json.hpp"

namespace fda::nn {
inline namespace FDA_NN_ABI {

enum class Reduction { sum, mean };
enum class FocalMode { two_sided, literal };

struct LossConfig {
  Reduction reduction = Reduction::mean;
  double dice_eps = 1e-5;
  double prob_clip = 1e-6;
  FocalMode focal = FocalMode::two_sided;
};

void validate(const LossConfig& cfg);
nlohmann::ordered_json to_json(const LossConfig& cfg);
LossConfig loss_config_from_json(const nlohmann::json& j);

/// `value` is differentiable; the terms are reported for logging and sum to it.
struct RegLoss {
  Tensor value;
  double l1 = 0.0;
  /// Minus the reduced product ratio.
  double ratio = 0.0;
};

struct SegLoss {
  Tensor value;
  double dice = 0.0;
  double focal = 0.0;
};

/// L1(f, y) - ratio(f, y), ratio = f y / (f y + f^2 + y^2) per voxel and 0 when
/// f = y = 0. The configured reduction applies to both terms. Only `f` receives
/// a gradient.
RegLoss l_reg(const Tensor& f, const Tensor& y, const LossConfig& cfg = {});

/// -(2 sum p g + eps) / (sum (p + g) + eps) - mean (1 - q)^2 log q, with p
/// clipped to [clip, 1 - clip]. q is the true-class probability in two-sided
/// mode and p itself in literal mode. Only `p` receives a gradient.
SegLoss l_seg(const Tensor& p, const Tensor& g, const LossConfig& cfg = {});

Tensor l_total(const Tensor& seg, const Tensor& reg);

}  // namespace FDA_NN_ABI
}  // namespace fda::nn
