// SPDX-License-Identifier: Apache-2.0
#include "smad/config.hpp"

#include "smad/errors.hpp"

namespace smad {

std::string to_string(Variant v) {
  switch (v) {
    case Variant::t_smad: return "t_smad";
    case Variant::transformer_baseline: return "transformer_baseline";
    case Variant::no_encoder: return "no_encoder";
    case Variant::no_das: return "no_das";
    case Variant::no_mixed_attention: return "no_mixed_attention";
    case Variant::no_modality_specific: return "no_modality_specific";
  }
  return "?";
}

std::string to_string(CtcPlacement p) {
  switch (p) {
    case CtcPlacement::none: return "none";
    case CtcPlacement::ctc1: return "ctc1";
    case CtcPlacement::ctc2: return "ctc2";
  }
  return "?";
}

Variant variant_from_string(const std::string& s) {
  if (s == "t_smad") return Variant::t_smad;
  if (s == "transformer_baseline") return Variant::transformer_baseline;
  if (s == "no_encoder") return Variant::no_encoder;
  if (s == "no_das") return Variant::no_das;
  if (s == "no_mixed_attention") return Variant::no_mixed_attention;
  if (s == "no_modality_specific") return Variant::no_modality_specific;
  throw ConfigError("unknown variant '" + s + "'");
}

CtcPlacement placement_from_string(const std::string& s) {
  if (s == "none") return CtcPlacement::none;
  if (s == "ctc1") return CtcPlacement::ctc1;
  if (s == "ctc2") return CtcPlacement::ctc2;
  throw ConfigError("unknown ctc placement '" + s + "'");
}

bool has_decoder_acoustic_stream(Variant v) {
  switch (v) {
    case Variant::t_smad:
    case Variant::no_encoder:
    case Variant::no_mixed_attention:
    case Variant::no_modality_specific:
      return true;
    case Variant::no_das:
    case Variant::transformer_baseline:
      return false;
  }
  return false;
}

void ModelConfig::validate() const {
  if (d_model == 0 || d_model % 2 != 0) {
    throw ConfigError("d_model must be even and positive, got " +
                      std::to_string(d_model));
  }
  if (n_heads == 0 || d_model % n_heads != 0) {
    throw ConfigError("n_heads (" + std::to_string(n_heads) +
                      ") must divide d_model (" + std::to_string(d_model) + ")");
  }
  if (d_ff == 0) throw ConfigError("d_ff must be positive");
  if (n_dec_layers == 0) throw ConfigError("decoder needs at least one layer");
  if (vocab_size < 4) {
    throw ConfigError("vocab_size must be >= 4 (3 specials + letters), got " +
                      std::to_string(vocab_size));
  }
  if (feature_dim == 0) throw ConfigError("feature_dim must be positive");
  if (lambda_ctc < 0.0 || lambda_ctc > 1.0) {
    throw ConfigError("lambda_ctc must be in [0,1], got " +
                      std::to_string(lambda_ctc));
  }
  if (label_smoothing < 0.0 || label_smoothing >= 1.0) {
    throw ConfigError("label_smoothing must be in [0,1)");
  }
  if (dropout < 0.0 || dropout >= 1.0) {
    throw ConfigError("dropout must be in [0,1)");
  }
  if (variant == Variant::no_encoder && n_enc_layers != 0) {
    throw ConfigError("no_encoder variant forces n_enc_layers = 0");
  }
  if (variant != Variant::no_encoder && n_enc_layers == 0) {
    throw ConfigError("n_enc_layers = 0 is only valid for variant no_encoder");
  }
  if (ctc_placement == CtcPlacement::ctc2 &&
      !has_decoder_acoustic_stream(variant)) {
    throw ConfigError("ctc2 requires a decoder acoustic stream; variant " +
                      to_string(variant) + " has none (use ctc1)");
  }
  if (ctc_placement == CtcPlacement::none && lambda_ctc > 0.0) {
    throw ConfigError(
        "lambda_ctc > 0 requires a ctc placement (ctc1 or ctc2)");
  }
}

ModelConfig ModelConfig::normalized() const {
  ModelConfig c = *this;
  if (c.variant == Variant::no_encoder) c.n_enc_layers = 0;
  return c;
}

ModelConfig ModelConfig::paper_preset() {
  ModelConfig c;
  c.n_enc_layers = 12;
  c.n_dec_layers = 6;
  c.d_model = 256;
  c.d_ff = 2048;
  c.n_heads = 4;
  return c;
}

}  // namespace smad
