#pragma once

// Dual-stream airway segmentation network: a shared encoder used on both
// domains, a noisy-domain encoder, an SDM decoder on the clean path and a
// probability decoder on the aggregated noisy path.

#include <map>
#include <string>
#include <vector>

#include "fda/tensor.hpp"
#include "json.hpp"

namespace fda::nn {
inline namespace FDA_NN_ABI {

/// Source of the skip features feeding the mixed decoder.
enum class SkipMode { aggregated, noisy_only };

struct FdaConfig {
  std::vector<int64_t> channels{8, 16, 32, 64};
  int64_t r_c = 2;
  int64_t in_channels = 1;
  std::string preset = "toy";
  // Ablation switches. Parameters are created regardless so that checkpoints
  // and initial weights do not depend on them.
  bool use_cse = true;
  bool use_sdm = true;
  bool use_noisy_stream = true;
  SkipMode mix_skips = SkipMode::aggregated;

  int64_t levels() const { return static_cast<int64_t>(channels.size()); }
  /// Spatial dims must be multiples of this.
  int64_t divisor() const { return int64_t(1) << (levels() - 1); }

  static FdaConfig toy();
  static FdaConfig full();
};

void validate(const FdaConfig& cfg);
nlohmann::ordered_json to_json(const FdaConfig& cfg);
FdaConfig fda_config_from_json(const nlohmann::json& j);

/// Per-level features recorded by forward_noisy.
struct NoisyTrace {
  std::vector<Tensor> clean;
  std::vector<Tensor> noisy;
  std::vector<Tensor> aggregated;
};

class FdaModel {
 public:
  FdaModel(FdaConfig cfg, uint64_t seed);

  const FdaConfig& config() const { return cfg_; }
  /// Runtime switches (use_cse, use_sdm, ...) may be changed between calls.
  FdaConfig& config() { return cfg_; }
  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }

  /// Per-level encoder outputs before pooling; the last entry is the bottleneck.
  /// `stream` is "enc_clean" or "enc_noisy".
  std::vector<Tensor> encode(const std::string& stream, const Tensor& x) const;
  /// One-channel SDM prediction in (-1, 1) (sigmoid probability when use_sdm is off).
  Tensor forward_clean(const Tensor& x) const;
  /// One-channel airway probability in (0, 1).
  Tensor forward_noisy(const Tensor& x, NoisyTrace* trace = nullptr) const;

  /// Parameter names keyed by group.
  std::map<std::string, std::vector<std::string>> param_groups() const;
  void check_input(const Tensor& x) const;

 private:
  void add_conv(const std::string& name, const std::string& group, int64_t cin, int64_t cout, int64_t k, bool bias,
                uint64_t seed);
  void add_block(const std::string& name, const std::string& group, int64_t cin, int64_t cout, uint64_t seed);
  void add_decoder(const std::string& group, uint64_t seed);
  Tensor block(const std::string& name, const Tensor& x) const;
  Tensor decode(const std::string& group, const std::vector<Tensor>& feats) const;

  FdaConfig cfg_;
  ParamStore store_;
};

}  // namespace FDA_NN_ABI
}  // namespace fda::nn
