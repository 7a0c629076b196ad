// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "smad/config.hpp"
#include "smad/corpus.hpp"
#include "smad/decode.hpp"
#include "smad/trainer.hpp"

namespace smad {

// Everything a run needs, loadable from a JSON config file with full
// CLI-flag overrides. Every field has a default; the fully resolved config
// is echoed into the run directory.
struct RunConfig {
  std::string preset = "desk";  // "desk" or "paper"
  std::filesystem::path data_dir = "corpus";
  GeneratorConfig data;
  ModelConfig model;
  TrainerOptions optim;
  DecodeOptions decode;
  std::filesystem::path run_dir = "runs/run1";

  // Cross-section invariants (model dims vs data dims, ...).
  void validate() const;
};

nlohmann::json run_config_to_json(const RunConfig& cfg);

// Strict parse: unknown keys and wrong types are ConfigErrors naming the
// JSON path. The preset is applied before explicit fields.
RunConfig run_config_from_json(const nlohmann::json& j);

// Loads the file (when non-empty) and applies "section.key=value" overrides.
RunConfig load_run_config(const std::filesystem::path& file,
                          const std::vector<std::string>& overrides);

}  // namespace smad
