// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "smad/attention.hpp"
#include "smad/config.hpp"
#include "smad/layers.hpp"
#include "smad/param_store.hpp"
#include "smad/tensor.hpp"

namespace smad {

struct EncoderOutput {
  Tensor h;           // [n x d_model]
  std::size_t n = 0;  // valid length after the two stride-2 halvings
};

struct DecoderOutput {
  Tensor linguistic_logits;  // [m x vocab_size]
  Tensor acoustic_final;     // DAS top block; encoder h for no_das; undefined
                             // for transformer_baseline
  std::vector<JointStream> per_layer_streams;  // filled when requested
};

struct EncoderLayer {
  HeadProjections mha;
  Ffn ffn;
  LayerNorm norm1, norm2;
  EncoderLayer(ParamStore& store, const std::string& prefix,
               const ModelConfig& cfg);
};

// One decoder layer; which members are populated depends on the variant.
struct DecoderLayer {
  // SMA attention (t_smad, no_encoder, no_modality_specific)
  std::optional<SmaProjections> sma;
  // no_das keeps only the mixed half; the acoustic block is never updated
  std::optional<HeadProjections> mixed_only;
  // no_mixed_attention acoustic path
  std::optional<HeadProjections> acoustic_self;
  // standard decoder attention (no_mixed_attention, transformer_baseline)
  std::optional<HeadProjections> t_self_proj;
  std::optional<HeadProjections> src_proj;
  // modality-specific acoustic path
  std::optional<Ffn> ffn_s;
  std::optional<LayerNorm> norm_s1, norm_s2;
  // modality-specific linguistic path (norm_t3 only for the standard layer)
  std::optional<Ffn> ffn_t;
  std::optional<LayerNorm> norm_t1, norm_t2, norm_t3;
  // shared trunk (no_modality_specific)
  std::optional<Ffn> ffn_shared;
  std::optional<LayerNorm> norm_shared1, norm_shared2;

  DecoderLayer(ParamStore& store, const std::string& prefix,
               const ModelConfig& cfg);

  // Mixed-attention projections, whichever variant owns them.
  const HeadProjections* mixed() const;
};

// Per-layer state for cached autoregressive decoding. Static key/value
// projections cover the (target-independent) acoustic rows; the target rows
// grow one row per emitted token.
struct LayerCache {
  Tensor k_acoustic, v_acoustic;  // mixed or source-target attention, [n x d]
  Tensor k_target, v_target;      // mixed attention target part, grows
  Tensor k_self, v_self;          // target self-attention cache, grows
};

struct DecoderCache {
  std::vector<LayerCache> layers;
  std::vector<int> prefix;  // tokens already consumed
  Tensor last_logits;       // logits produced by the latest consumed token
};

class SmadModel {
 public:
  explicit SmadModel(const ModelConfig& cfg);

  // Parameter count without allocating payloads (paper-scale audits).
  static std::size_t count_parameters(const ModelConfig& cfg);

  // Smallest decoder depth whose no_encoder parameter count best matches the
  // given config's total (the deepening rule behind the encoder ablation).
  static std::size_t parity_decoder_depth(const ModelConfig& base);

  const ModelConfig& config() const { return cfg_; }
  ParamStore& params() { return *store_; }
  const ParamStore& params() const { return *store_; }
  std::size_t parameter_count() const { return store_->total_elements(); }

  // Dropout is active only while training mode is on.
  void set_training(bool training) { training_ = training; }

  // Conv downsample x4 in time -> linear -> positional encoding -> encoder
  // stack. Throws ConfigError on a feature-dim mismatch, DataError on empty
  // input.
  EncoderOutput encode(const Tensor& features) const;

  // Teacher-forced decoder pass. target_in must start with SOS.
  DecoderOutput decode_training(const EncoderOutput& enc,
                                const std::vector<int>& target_in,
                                bool keep_streams = false,
                                std::vector<Tensor>* alignment_out = nullptr) const;

  // Input tensor for the configured CTC head placement. ctc1: encoder
  // output; ctc2: final decoder acoustic block (requires a DAS stream).
  Tensor ctc_input(const EncoderOutput& enc, const DecoderOutput* dec) const;
  // LinB projection (d_model -> vocab+1 with trailing blank) + log-softmax.
  Tensor ctc_log_probs(const Tensor& acoustic) const;

  DecoderCache make_cache(const EncoderOutput& enc) const;

  // Cached autoregressive step(s): consumes any suffix of `prefix` the cache
  // has not seen and returns next-token logits [1 x vocab]. Throws UsageError
  // when the cache disagrees with the prefix.
  Tensor decode_incremental(const EncoderOutput& enc,
                            const std::vector<int>& prefix,
                            DecoderCache& cache) const;

  // Human-readable parameter table.
  std::string describe() const;

 private:
  SmadModel(const ModelConfig& cfg, bool count_only);

  Tensor frontend(const Tensor& features) const;  // conv stack + linear + PE
  Tensor target_entry(const std::vector<int>& target_in) const;
  Tensor drop(const Tensor& x) const;
  JointStream run_decoder_layer(const DecoderLayer& layer,
                                const JointStream& in,
                                const Tensor& src_memory,
                                std::vector<Tensor>* alignment_out) const;

  ModelConfig cfg_;
  std::shared_ptr<ParamStore> store_;
  mutable Rng dropout_rng_;
  bool training_ = false;

  ConvLayer conv1_, conv2_;
  Linear post_conv_;
  std::vector<EncoderLayer> enc_layers_;
  Embedding embedding_;
  std::vector<DecoderLayer> dec_layers_;
  Linear out_proj_;  // unused when tie_embedding
  Linear ctc_head_;  // present when ctc_placement != none
};

}  // namespace smad
