// SPDX-License-Identifier: Apache-2.0
#include "smad/batching.hpp"

#include <algorithm>
#include <numeric>

#include "smad/errors.hpp"

namespace smad {

Tensor Batch::utterance_features(std::size_t i) const {
  const std::size_t frames = feature_lengths.at(i);
  std::vector<double> data(frames * feat_dim);
  const double* src = features.data() + i * max_frames * feat_dim;
  std::copy_n(src, frames * feat_dim, data.begin());
  return Tensor::from({frames, feat_dim}, std::move(data));
}

std::vector<int> Batch::utterance_tokens(std::size_t i) const {
  const std::size_t len = token_lengths.at(i);
  const int* src = tokens.data() + i * max_tokens;
  return std::vector<int>(src, src + len);
}

Batch make_batch(const std::vector<const Utterance*>& utts) {
  if (utts.empty()) throw UsageError("make_batch: empty batch");
  Batch b;
  b.size = utts.size();
  b.feat_dim = utts[0]->dim;
  for (const Utterance* u : utts) {
    b.max_frames = std::max(b.max_frames, u->frames);
    b.max_tokens = std::max(b.max_tokens, u->tokens.size());
  }
  b.features.assign(b.size * b.max_frames * b.feat_dim, 0.0);
  b.tokens.assign(b.size * b.max_tokens, Vocab::kPadId);
  for (std::size_t i = 0; i < b.size; ++i) {
    const Utterance* u = utts[i];
    b.ids.push_back(u->id);
    b.feature_lengths.push_back(u->frames);
    b.token_lengths.push_back(u->tokens.size());
    std::copy(u->features.begin(), u->features.end(),
              b.features.begin() + i * b.max_frames * b.feat_dim);
    std::copy(u->tokens.begin(), u->tokens.end(),
              b.tokens.begin() + i * b.max_tokens);
  }
  return b;
}

std::vector<Batch> make_batches(const Corpus& corpus, std::size_t batch_size,
                                std::uint64_t seed, bool bucket_by_length) {
  if (batch_size < 1) throw UsageError("make_batches: batch_size must be >= 1");
  std::vector<std::size_t> order(corpus.utts.size());
  std::iota(order.begin(), order.end(), 0);
  if (bucket_by_length) {
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) {
                       if (corpus.utts[a].frames != corpus.utts[b].frames)
                         return corpus.utts[a].frames < corpus.utts[b].frames;
                       return corpus.utts[a].id < corpus.utts[b].id;
                     });
  }
  std::vector<std::vector<const Utterance*>> groups;
  for (std::size_t i = 0; i < order.size(); i += batch_size) {
    std::vector<const Utterance*> group;
    for (std::size_t j = i; j < std::min(i + batch_size, order.size()); ++j) {
      group.push_back(&corpus.utts[order[j]]);
    }
    groups.push_back(std::move(group));
  }
  Rng rng(seed ^ 0xba7c4e5ULL);
  for (std::size_t i = groups.size(); i > 1; --i) {
    std::swap(groups[i - 1], groups[rng.uniform_int(i)]);
  }
  std::vector<Batch> batches;
  batches.reserve(groups.size());
  for (const auto& g : groups) batches.push_back(make_batch(g));
  return batches;
}

}  // namespace smad
