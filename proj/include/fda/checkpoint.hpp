#pragma once

// Binary checkpoint: "FDACKPT1", u64 manifest length, JSON manifest, then
// little-endian f32 blobs for every parameter, every first moment and every
// second moment, each in manifest order.

#include <cstdint>
#include <filesystem>
#include <memory>

#include "fda/model.hpp"
#include "fda/optim.hpp"

namespace fda::train {

struct Checkpoint {
  std::unique_ptr<nn::FdaModel> model;
  int64_t step = 0;  // optimizer step count
  int64_t epoch = 0;
  std::vector<std::vector<float>> m;
  std::vector<std::vector<float>> v;
  nlohmann::ordered_json manifest;
};

/// Writes through a temporary file and renames it into place.
void save_checkpoint(const std::filesystem::path& path, const nn::FdaModel& model, const Adam& opt, int64_t epoch);
Checkpoint load_checkpoint(const std::filesystem::path& path);
/// Restores optimizer moments and step count from a loaded checkpoint.
void restore_optimizer(const Checkpoint& ck, Adam& opt);

std::filesystem::path checkpoint_path(const std::filesystem::path& dir, int64_t epoch);

}  // namespace fda::train
