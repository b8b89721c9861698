#include "fda/optim.hpp"

#include <cmath>

namespace fda::train {

Adam::Adam(nn::ParamStore& store, AdamConfig cfg) : store_(&store), cfg_(cfg) {
  if (!(cfg.beta1 >= 0.0 && cfg.beta1 < 1.0) || !(cfg.beta2 >= 0.0 && cfg.beta2 < 1.0))
    throw ValidationError("Adam betas must lie in [0, 1)");
  if (!(cfg.eps > 0.0)) throw ValidationError("Adam eps must be > 0");
  for (const auto& e : store.entries()) {
    m_.emplace_back(e.tensor.data().size(), nn::Real(0));
    v_.emplace_back(e.tensor.data().size(), nn::Real(0));
  }
}

bool Adam::frozen(const std::string& name) const {
  for (const auto& p : frozen_)
    if (name.compare(0, p.size(), p) == 0) return true;
  return false;
}

void Adam::step(double lr) {
  if (!(lr > 0.0)) throw ValidationError("learning rate must be > 0");
  auto& entries = store_->entries();
  if (entries.size() != m_.size()) throw ValidationError("Adam state does not match the parameter store");
  ++t_;
  const double b1 = cfg_.beta1, b2 = cfg_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (size_t i = 0; i < entries.size(); ++i) {
    auto& e = entries[i];
    if (frozen(e.name)) continue;
    auto& p = e.tensor.data();
    const bool has = e.tensor.has_grad();
    const std::vector<nn::Real>* g = has ? &e.tensor.grad() : nullptr;
    auto& m = m_[i];
    auto& v = v_[i];
    for (size_t k = 0; k < p.size(); ++k) {
      const double gk = has ? static_cast<double>((*g)[k]) : 0.0;
      const double mk = b1 * m[k] + (1.0 - b1) * gk;
      const double vk = b2 * v[k] + (1.0 - b2) * gk * gk;
      m[k] = static_cast<nn::Real>(mk);
      v[k] = static_cast<nn::Real>(vk);
      const double upd = lr * (mk / c1) / (std::sqrt(vk / c2) + cfg_.eps);
      p[k] = static_cast<nn::Real>(static_cast<double>(p[k]) - upd);
    }
  }
}

}  // namespace fda::train
