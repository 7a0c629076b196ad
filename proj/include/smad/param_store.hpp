// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <unordered_map>
#include <vector>

#include "smad/rng.hpp"
#include "smad/tensor.hpp"

namespace smad {

enum class Init { zeros, ones, xavier_uniform };

struct Param {
  std::string name;  // hierarchical, e.g. "encoder.layer0.mha.wq"
  Shape shape;
  Tensor tensor;  // undefined in count-only stores
};

// Owns every trainable tensor of a model, keyed by a unique hierarchical
// name. Creation order is the canonical order for checkpoints and the
// optimizer, so identical configs always produce identical layouts.
// A count-only store records names and shapes without allocating payloads,
// which keeps parameter audits of paper-scale configs cheap.
class ParamStore {
 public:
  explicit ParamStore(std::uint64_t seed, bool count_only = false)
      : rng_(seed), count_only_(count_only) {}

  // gain scales the drawn values; residual-branch output projections use a
  // sub-unit gain so post-norm stacks start close to identity.
  Tensor create(const std::string& name, Shape shape, Init init,
                double gain = 1.0);

  bool count_only() const { return count_only_; }

  const std::vector<Param>& params() const { return params_; }
  std::size_t count() const { return params_.size(); }
  std::size_t total_elements() const;

  void zero_grad();

  Rng& rng() { return rng_; }

  // Checkpoint format v1 ("SMADCKP1"): per parameter a name, shape, and raw
  // little-endian float64 payload. Round trips are bit-exact.
  void save(const std::filesystem::path& path) const;
  // Loads into this store; the file must carry exactly the same parameter
  // names and shapes (i.e. the same model config).
  void load(const std::filesystem::path& path);

 private:
  Rng rng_;
  bool count_only_ = false;
  std::vector<Param> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace smad
