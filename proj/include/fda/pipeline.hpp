#pragma once

// End-to-end experiment on synthetic phantoms: generate clean and noisy
// training sets plus held-out noisy test cases, train, predict and score.

#include <filesystem>
#include <string>
#include <vector>

#include "fda/infer.hpp"
#include "fda/metrics.hpp"
#include "fda/phantom.hpp"
#include "fda/train.hpp"

namespace fda::pipeline {

struct PipelineConfig {
  std::string preset = "toy";
  uint64_t seed = 1;
  int threads = 1;
  int n_clean = 4;
  int n_noisy = 2;
  int n_test = 4;
  phantom::PhantomSpec phantom;
  phantom::NoiseSpec noise;
  train::TrainConfig train;
  infer::InferConfig infer;
};

/// Desk-scale preset: 48^3 depth-3 phantoms, 32^3 patches, toy network.
PipelineConfig toy_preset(uint64_t seed);
PipelineConfig preset(const std::string& name, uint64_t seed);
/// Same experiment with the noisy-domain encoder disabled.
PipelineConfig single_stream(PipelineConfig cfg);

void validate(const PipelineConfig& cfg);
nlohmann::ordered_json to_json(const PipelineConfig& cfg);

struct CaseResult {
  std::string name;
  metrics::MetricsReport report;
};

struct PipelineResult {
  std::vector<CaseResult> cases;
  double mean_length = 0.0;
  double mean_branch = 0.0;
  double mean_dsc = 0.0;
  std::filesystem::path final_checkpoint;
  std::filesystem::path metrics_file;
};

/// Phantom `index` of a split ("clean", "noisy" or "test"). Noisy and test
/// samples are corrupted copies of their own trees.
phantom::PhantomSample make_phantom(const PipelineConfig& cfg, const std::string& split, int index);

/// Layout under `out_dir`: data/{clean,noisy,test}/<case>, train/, pred/<case>,
/// metrics.json.
PipelineResult run_pipeline(const PipelineConfig& cfg, const std::filesystem::path& out_dir);

nlohmann::ordered_json metrics_json(const PipelineResult& r);

}  // namespace fda::pipeline
