// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "smad/corpus.hpp"
#include "smad/tensor.hpp"
#include "smad/vocab.hpp"

namespace smad {

// Padded batch view. Losses and the model consume per-utterance slices at
// the recorded true lengths, so every loss-relevant value is independent of
// how much padding the batch happens to carry.
struct Batch {
  std::size_t size = 0;
  std::size_t max_frames = 0;
  std::size_t feat_dim = 0;
  std::size_t max_tokens = 0;
  std::vector<std::string> ids;
  std::vector<double> features;          // size x max_frames x feat_dim
  std::vector<std::size_t> feature_lengths;
  std::vector<int> tokens;               // size x max_tokens, PAD-filled
  std::vector<std::size_t> token_lengths;

  // True-length views.
  Tensor utterance_features(std::size_t i) const;
  std::vector<int> utterance_tokens(std::size_t i) const;
};

Batch make_batch(const std::vector<const Utterance*>& utts);

// Length-bucketed batching: utterances sorted by frame count are chunked
// into batches, then the batch order is shuffled by the seed. Iteration
// order is a pure function of (corpus, batch_size, seed).
std::vector<Batch> make_batches(const Corpus& corpus, std::size_t batch_size,
                                std::uint64_t seed,
                                bool bucket_by_length = true);

}  // namespace smad
