// SPDX-License-Identifier: Apache-2.0
#include "smad/optimizer.hpp"

#include <cmath>

#include "smad/errors.hpp"

namespace smad {

double lr_schedule(std::size_t step, std::size_t d_model, std::size_t warmup,
                   double scale) {
  if (step == 0) throw UsageError("lr_schedule: steps start at 1");
  if (warmup == 0) throw ConfigError("lr_schedule: warmup must be >= 1");
  const double s = static_cast<double>(step);
  const double w = static_cast<double>(warmup);
  return scale / std::sqrt(static_cast<double>(d_model)) *
         std::min(1.0 / std::sqrt(s), s / (w * std::sqrt(w)));
}

AdamOptimizer::AdamOptimizer(ParamStore& store, double beta1, double beta2,
                             double epsilon)
    : store_(&store), beta1_(beta1), beta2_(beta2), epsilon_(epsilon) {
  m_.resize(store.params().size());
  v_.resize(store.params().size());
  for (std::size_t i = 0; i < store.params().size(); ++i) {
    m_[i].assign(store.params()[i].tensor.numel(), 0.0);
    v_[i].assign(store.params()[i].tensor.numel(), 0.0);
  }
}

void AdamOptimizer::step(double lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < store_->params().size(); ++i) {
    Tensor& p = const_cast<Param&>(store_->params()[i]).tensor;
    const std::vector<double>& g = p.grad();
    auto& m = m_[i];
    auto& v = v_[i];
    std::vector<double>& w = p.mutable_data();
    for (std::size_t k = 0; k < w.size(); ++k) {
      const double gk = k < g.size() ? g[k] : 0.0;
      m[k] = beta1_ * m[k] + (1.0 - beta1_) * gk;
      v[k] = beta2_ * v[k] + (1.0 - beta2_) * gk * gk;
      const double mhat = m[k] / bc1;
      const double vhat = v[k] / bc2;
      w[k] -= lr * mhat / (std::sqrt(vhat) + epsilon_);
    }
  }
}

}  // namespace smad
