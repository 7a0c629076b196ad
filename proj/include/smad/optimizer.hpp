// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <vector>

#include "smad/param_store.hpp"

namespace smad {

// lr(step) = scale * d_model^-0.5 * min(step^-0.5, step * warmup^-1.5).
// Strictly increasing up to warmup, decreasing after; step counting starts
// at 1 (step 0 is a usage error).
double lr_schedule(std::size_t step, std::size_t d_model, std::size_t warmup,
                   double scale);

// Adam with the Transformer-recipe defaults (0.9, 0.98, 1e-9). Parameters
// with no accumulated gradient this step are treated as gradient zero.
class AdamOptimizer {
 public:
  explicit AdamOptimizer(ParamStore& store, double beta1 = 0.9,
                         double beta2 = 0.98, double epsilon = 1e-9);

  void step(double lr);
  std::size_t steps_taken() const { return t_; }

 private:
  ParamStore* store_;
  double beta1_, beta2_, epsilon_;
  std::size_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

}  // namespace smad
