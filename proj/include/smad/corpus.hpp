// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "smad/rng.hpp"
#include "smad/tensor.hpp"
#include "smad/vocab.hpp"

namespace smad {

struct Utterance {
  std::string id;
  std::size_t frames = 0;
  std::size_t dim = 0;
  std::vector<double> features;  // frames x dim, row-major
  std::vector<int> tokens;       // letter ids only (no SOS/EOS)

  Tensor feature_tensor() const {
    return Tensor::from({frames, dim}, features);
  }
};

struct Corpus {
  Vocab vocab;
  std::size_t feature_dim = 0;
  std::vector<Utterance> utts;
};

// Synthetic speech-like generator: every letter owns a fixed random
// prototype frame; an utterance emits its letters' prototypes for 4-8 frames
// each plus additive noise, so frames lands in [4L, 8L]. Adjacent repeated
// letters are not sampled, which keeps run-collapse decoding unambiguous and
// the CTC lattice minimum at L.
struct GeneratorConfig {
  std::uint64_t seed = 7;
  std::size_t n_utterances = 250;
  std::size_t vocab_size = 12;  // includes the 3 specials
  std::size_t min_len = 3;
  std::size_t max_len = 8;
  std::size_t feature_dim = 20;
  double noise = 0.0;  // stddev of per-frame additive noise
};

Corpus generate_corpus(const GeneratorConfig& cfg);

// The per-letter prototype frames the generator would use; exposed so tests
// can run the nearest-prototype separability oracle.
std::vector<std::vector<double>> generator_prototypes(const GeneratorConfig& cfg);

struct CorpusSplits {
  Corpus train, dev, test;
};

// Seeded-shuffle 80/10/10 split, disjoint by utterance id.
CorpusSplits split_corpus(const Corpus& corpus, std::uint64_t seed);

// Global per-dimension statistics, computed on the training split only.
struct NormStats {
  std::vector<double> mean;
  std::vector<double> scale;  // all ones unless variance scaling was requested
  bool variance_scaled = false;

  void save(const std::filesystem::path& path) const;
  static NormStats load(const std::filesystem::path& path);
};

NormStats compute_norm_stats(const Corpus& train, bool scale_variance = false);
void apply_normalization(Corpus& corpus, const NormStats& stats);

// SpecAugment-style masking, applied only during training. Each mask draws a
// width uniform in [0, max_width] and a start position, then overwrites the
// span with the utterance's per-dimension mean.
struct SpecMaskConfig {
  std::size_t n_time_masks = 0;
  std::size_t n_freq_masks = 0;
  std::size_t max_time_width = 0;
  std::size_t max_freq_width = 0;

  bool enabled() const { return n_time_masks > 0 || n_freq_masks > 0; }
};

void spec_mask(std::vector<double>& features, std::size_t frames,
               std::size_t dim, const SpecMaskConfig& cfg, Rng& rng);

// On-disk corpus layout under a directory:
//   vocab.json, stats.json, meta.json,
//   manifest_{train,dev,test}.tsv  (id, frame count, token ids)
//   feats_{train,dev,test}.bin     (SMADFT01; per record id + shape + f64)
// Archives hold raw (unnormalized) features; loading applies stats.json.
void save_corpus_dir(const std::filesystem::path& dir, const CorpusSplits& splits,
                     const NormStats& stats, const GeneratorConfig& cfg);

// Throws DataError when files are missing/corrupt; a missing stats file is a
// UsageError (eval data must be normalized with training statistics).
Corpus load_corpus_split(const std::filesystem::path& dir,
                         const std::string& split, bool normalize = true);

}  // namespace smad
