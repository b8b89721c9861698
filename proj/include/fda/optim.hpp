#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fda/tensor.hpp"

namespace fda::train {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with bias correction. Moments are stored per parameter in store order.
class Adam {
 public:
  Adam(nn::ParamStore& store, AdamConfig cfg = {});

  /// One update using the gradients currently held by the parameters. Missing
  /// gradients count as zero. Parameters whose name starts with a frozen prefix
  /// are left untouched together with their moments.
  void step(double lr);

  void set_frozen(std::vector<std::string> prefixes) { frozen_ = std::move(prefixes); }
  bool frozen(const std::string& name) const;

  int64_t steps() const { return t_; }
  void set_steps(int64_t t) { t_ = t; }
  const AdamConfig& config() const { return cfg_; }
  std::vector<std::vector<nn::Real>>& m() { return m_; }
  std::vector<std::vector<nn::Real>>& v() { return v_; }
  const std::vector<std::vector<nn::Real>>& m() const { return m_; }
  const std::vector<std::vector<nn::Real>>& v() const { return v_; }

 private:
  nn::ParamStore* store_;
  AdamConfig cfg_;
  int64_t t_ = 0;
  std::vector<std::vector<nn::Real>> m_;
  std::vector<std::vector<nn::Real>> v_;
  std::vector<std::string> frozen_;
};

}  // namespace fda::train
