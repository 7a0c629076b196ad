// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <vector>

namespace smad {

struct CerReport {
  std::size_t substitutions = 0;
  std::size_t deletions = 0;
  std::size_t insertions = 0;
  std::size_t ref_len = 0;

  std::size_t distance() const { return substitutions + deletions + insertions; }
  // (S+D+I)/N in percent. An empty reference scores 0 when the hypothesis is
  // empty too, otherwise 100 per inserted token.
  double cer_percent() const {
    if (ref_len == 0) return distance() == 0 ? 0.0 : 100.0 * distance();
    return 100.0 * static_cast<double>(distance()) /
           static_cast<double>(ref_len);
  }
};

// Levenshtein alignment with unit costs; counts come from a deterministic
// backtrace preferring match/substitution, then deletion, then insertion.
CerReport cer(const std::vector<int>& reference,
              const std::vector<int>& hypothesis);

CerReport aggregate_cer(const std::vector<CerReport>& reports);

}  // namespace smad
