// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <vector>

#include "smad/model.hpp"

namespace smad {

struct DecodeOptions {
  std::size_t beam_width = 10;
  std::size_t max_len = 24;        // emitted tokens, EOS included
  double length_penalty = 0.6;     // score / len^alpha
};

struct BeamHypothesis {
  std::vector<int> tokens;  // letters (+ EOS while in flight), SOS excluded
  double log_prob = 0.0;
  bool finished = false;

  double normalized_score(double alpha) const;
};

// Argmax next token until EOS or max_len; ties break toward the lowest token
// id. Returns letter ids (SOS/EOS stripped). Uses the incremental cache.
std::vector<int> greedy_decode(const SmadModel& model, const EncoderOutput& enc,
                               std::size_t max_len);

// Length-normalized beam search over attention log-probabilities. Finished
// hypotheses are frozen in a pool; the best normalized finished hypothesis
// wins (falling back to in-flight ones when nothing finished). beam_width 1
// reproduces greedy_decode exactly.
std::vector<int> beam_decode(const SmadModel& model, const EncoderOutput& enc,
                             const DecodeOptions& opts,
                             double* best_score = nullptr);

}  // namespace smad
