// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>

namespace smad {

enum class Variant {
  t_smad,
  transformer_baseline,
  no_encoder,
  no_das,
  no_mixed_attention,
  no_modality_specific,
};

enum class CtcPlacement { none, ctc1, ctc2 };

std::string to_string(Variant v);
std::string to_string(CtcPlacement p);
Variant variant_from_string(const std::string& s);
CtcPlacement placement_from_string(const std::string& s);

// True when the decoder carries an acoustic stream whose top block is
// distinct from the encoder output (i.e. CTC2 has something to attach to).
bool has_decoder_acoustic_stream(Variant v);

struct ModelConfig {
  std::size_t n_enc_layers = 4;
  std::size_t n_dec_layers = 3;
  std::size_t d_model = 64;
  std::size_t d_ff = 256;
  std::size_t n_heads = 4;
  std::size_t vocab_size = 12;  // includes PAD/SOS/EOS, excludes CTC blank
  std::size_t feature_dim = 20;
  double lambda_ctc = 0.3;
  CtcPlacement ctc_placement = CtcPlacement::ctc2;
  Variant variant = Variant::t_smad;
  double label_smoothing = 0.1;
  double dropout = 0.0;
  bool tie_embedding = false;
  std::uint64_t seed = 1;

  // Throws ConfigError on any violated invariant.
  void validate() const;

  // Returns a copy with variant-forced fields applied (no_encoder zeroes the
  // encoder stack).
  ModelConfig normalized() const;

  // Desk-scale defaults are the struct defaults. The paper-scale preset
  // (256/2048/4 heads, 12+6 layers, 25k warmup elsewhere) exists for
  // parameter audits.
  static ModelConfig paper_preset();
};

}  // namespace smad
