// SPDX-License-Identifier: Apache-2.0
#include "smad/model.hpp"

#include <cmath>
#include <iomanip>
#include <map>
#include <sstream>

#include "smad/errors.hpp"
#include "smad/vocab.hpp"

namespace smad {

namespace {

// Residual-branch output projections start damped so the post-norm stack is
// near identity at init; trains stably at desk batch sizes.
constexpr double kResidualGain = 0.25;

// Single positional-encoding row; avoids building the full table per step.
Tensor pe_single(std::size_t pos, std::size_t d_model) {
  std::vector<double> row(d_model);
  for (std::size_t i = 0; i < d_model / 2; ++i) {
    const double angle =
        static_cast<double>(pos) /
        std::pow(10000.0, 2.0 * static_cast<double>(i) /
                              static_cast<double>(d_model));
    row[2 * i] = std::sin(angle);
    row[2 * i + 1] = std::cos(angle);
  }
  return Tensor::from({1, d_model}, std::move(row));
}

// Multi-head attention of a single query row against explicit cached K/V
// (mirrors multi_head_attention with pre-projected inputs).
Tensor attend_cached(const Tensor& q_proj, const Tensor& k_proj,
                     const Tensor& v_proj, const HeadProjections& proj) {
  std::vector<Tensor> heads;
  heads.reserve(proj.n_heads);
  for (std::size_t h = 0; h < proj.n_heads; ++h) {
    const std::size_t c0 = h * proj.d_head, c1 = c0 + proj.d_head;
    heads.push_back(scaled_dot_attention(slice_cols(q_proj, c0, c1),
                                         slice_cols(k_proj, c0, c1),
                                         slice_cols(v_proj, c0, c1))
                        .output);
  }
  const Tensor cat = proj.n_heads == 1 ? heads[0] : concat_cols(heads);
  return matmul(cat, proj.wo);
}

}  // namespace

EncoderLayer::EncoderLayer(ParamStore& store, const std::string& prefix,
                           const ModelConfig& cfg)
    : mha(store, prefix + ".mha", cfg.d_model, cfg.n_heads, kResidualGain),
      ffn(store, prefix + ".ffn", cfg.d_model, cfg.d_ff, kResidualGain),
      norm1(store, prefix + ".norm1", cfg.d_model),
      norm2(store, prefix + ".norm2", cfg.d_model) {}

DecoderLayer::DecoderLayer(ParamStore& store, const std::string& prefix,
                           const ModelConfig& cfg) {
  const std::size_t d = cfg.d_model, h = cfg.n_heads, f = cfg.d_ff;
  switch (cfg.variant) {
    case Variant::t_smad:
    case Variant::no_encoder:
      sma.emplace(store, prefix + ".sma", d, h, kResidualGain);
      ffn_s.emplace(store, prefix + ".ffn_s", d, f, kResidualGain);
      norm_s1.emplace(store, prefix + ".norm_s1", d);
      norm_s2.emplace(store, prefix + ".norm_s2", d);
      ffn_t.emplace(store, prefix + ".ffn_t", d, f);
      norm_t1.emplace(store, prefix + ".norm_t1", d);
      norm_t2.emplace(store, prefix + ".norm_t2", d);
      break;
    case Variant::no_das:
      mixed_only.emplace(store, prefix + ".mixed", d, h, kResidualGain);
      ffn_t.emplace(store, prefix + ".ffn_t", d, f, kResidualGain);
      norm_t1.emplace(store, prefix + ".norm_t1", d);
      norm_t2.emplace(store, prefix + ".norm_t2", d);
      break;
    case Variant::no_modality_specific:
      sma.emplace(store, prefix + ".sma", d, h, kResidualGain);
      ffn_shared.emplace(store, prefix + ".ffn", d, f, kResidualGain);
      norm_shared1.emplace(store, prefix + ".norm1", d);
      norm_shared2.emplace(store, prefix + ".norm2", d);
      break;
    case Variant::no_mixed_attention:
      acoustic_self.emplace(store, prefix + ".acoustic_self", d, h,
                            kResidualGain);
      ffn_s.emplace(store, prefix + ".ffn_s", d, f, kResidualGain);
      norm_s1.emplace(store, prefix + ".norm_s1", d);
      norm_s2.emplace(store, prefix + ".norm_s2", d);
      t_self_proj.emplace(store, prefix + ".t_self", d, h, kResidualGain);
      src_proj.emplace(store, prefix + ".src", d, h, kResidualGain);
      ffn_t.emplace(store, prefix + ".ffn_t", d, f, kResidualGain);
      norm_t1.emplace(store, prefix + ".norm_t1", d);
      norm_t2.emplace(store, prefix + ".norm_t2", d);
      norm_t3.emplace(store, prefix + ".norm_t3", d);
      break;
    case Variant::transformer_baseline:
      t_self_proj.emplace(store, prefix + ".t_self", d, h, kResidualGain);
      src_proj.emplace(store, prefix + ".src", d, h, kResidualGain);
      ffn_t.emplace(store, prefix + ".ffn_t", d, f, kResidualGain);
      norm_t1.emplace(store, prefix + ".norm_t1", d);
      norm_t2.emplace(store, prefix + ".norm_t2", d);
      norm_t3.emplace(store, prefix + ".norm_t3", d);
      break;
  }
}

const HeadProjections* DecoderLayer::mixed() const {
  if (sma) return &sma->mixed_proj;
  if (mixed_only) return &*mixed_only;
  return nullptr;
}

SmadModel::SmadModel(const ModelConfig& cfg) : SmadModel(cfg, false) {}

std::size_t SmadModel::count_parameters(const ModelConfig& cfg) {
  return SmadModel(cfg, true).store_->total_elements();
}

std::size_t SmadModel::parity_decoder_depth(const ModelConfig& base) {
  const std::size_t target = count_parameters(base.normalized());
  ModelConfig probe = base;
  probe.variant = Variant::no_encoder;
  probe.n_enc_layers = 0;
  if (probe.ctc_placement == CtcPlacement::none && probe.lambda_ctc > 0.0) {
    probe.lambda_ctc = 0.0;
  }
  // Parameter count is affine in depth: base + depth * per_layer.
  probe.n_dec_layers = 1;
  const std::size_t at1 = count_parameters(probe);
  probe.n_dec_layers = 2;
  const std::size_t per_layer = count_parameters(probe) - at1;
  const std::size_t fixed = at1 - per_layer;
  if (target <= fixed + per_layer) return 1;
  const double exact = static_cast<double>(target - fixed) /
                       static_cast<double>(per_layer);
  return static_cast<std::size_t>(std::llround(exact));
}

SmadModel::SmadModel(const ModelConfig& cfg, bool count_only)
    : cfg_(cfg.normalized()), dropout_rng_(cfg.seed ^ 0xd509f0u) {
  cfg_.validate();
  store_ = std::make_shared<ParamStore>(cfg_.seed, count_only);
  ParamStore& s = *store_;
  const std::size_t d = cfg_.d_model;

  conv1_ = ConvLayer(s, "frontend.conv1", 1, d);
  conv2_ = ConvLayer(s, "frontend.conv2", d, d);
  const std::size_t freq_out = (cfg_.feature_dim + 3) / 4;  // two halvings
  post_conv_ = Linear(s, "frontend.proj", freq_out * d, d);

  for (std::size_t i = 0; i < cfg_.n_enc_layers; ++i) {
    enc_layers_.emplace_back(s, "encoder.layer" + std::to_string(i), cfg_);
  }

  embedding_ = Embedding(s, "embedding", cfg_.vocab_size, d);

  for (std::size_t i = 0; i < cfg_.n_dec_layers; ++i) {
    dec_layers_.emplace_back(s, "decoder.layer" + std::to_string(i), cfg_);
  }

  if (!cfg_.tie_embedding) {
    out_proj_ = Linear(s, "out_proj", d, cfg_.vocab_size);
  }
  if (cfg_.ctc_placement != CtcPlacement::none) {
    // LinB: d_model -> |U|+1, trailing index is the blank.
    ctc_head_ = Linear(s, "ctc_head", d, cfg_.vocab_size + 1);
  }
}

Tensor SmadModel::drop(const Tensor& x) const {
  return dropout(x, cfg_.dropout, dropout_rng_, training_);
}

Tensor SmadModel::frontend(const Tensor& features) const {
  if (features.ndim() != 2) {
    throw ShapeError("encode: features must be [frames x dim], got " +
                     shape_str(features.shape()));
  }
  if (features.dim(1) != cfg_.feature_dim) {
    throw ConfigError("encode: feature dim " + std::to_string(features.dim(1)) +
                      " does not match configured " +
                      std::to_string(cfg_.feature_dim));
  }
  if (features.dim(0) < 1) throw DataError("encode: empty utterance");

  Tensor x = reshape(features, {features.dim(0), cfg_.feature_dim, 1});
  x = conv1_.forward(x);
  x = conv2_.forward(x);
  const std::size_t n = x.dim(0);
  Tensor flat = reshape(x, {n, x.dim(1) * x.dim(2)});
  Tensor h = post_conv_.forward(flat);
  h = add(h, positional_encoding(n, cfg_.d_model));
  return drop(h);
}

EncoderOutput SmadModel::encode(const Tensor& features) const {
  Tensor h = frontend(features);
  for (const auto& layer : enc_layers_) {
    MhaResult att =
        multi_head_attention(h, h, h, AttentionMask::none(), layer.mha);
    Tensor x1 = layer.norm1.forward(add(h, drop(att.output)));
    h = layer.norm2.forward(add(x1, drop(layer.ffn.forward(x1))));
  }
  return {h, h.rows()};
}

Tensor SmadModel::target_entry(const std::vector<int>& target_in) const {
  Tensor t = scale(embedding_.forward(target_in),
                   std::sqrt(static_cast<double>(cfg_.d_model)));
  t = add(t, positional_encoding(target_in.size(), cfg_.d_model));
  return drop(t);
}

JointStream SmadModel::run_decoder_layer(
    const DecoderLayer& layer, const JointStream& in, const Tensor&,
    std::vector<Tensor>* alignment_out) const {
  const bool keep = alignment_out != nullptr;

  if (layer.sma) {
    std::vector<Tensor> mix_weights;
    JointStream att = sma_layer_attention(in, *layer.sma, keep,
                                          keep ? &mix_weights : nullptr);
    if (keep) {
      for (auto& w : mix_weights) alignment_out->push_back(w);
    }
    if (layer.ffn_s) {
      Tensor s1 = layer.norm_s1->forward(add(in.S, drop(att.S)));
      Tensor s_out =
          layer.norm_s2->forward(add(s1, drop(layer.ffn_s->forward(s1))));
      Tensor t1 = layer.norm_t1->forward(add(in.T, drop(att.T)));
      Tensor t_out =
          layer.norm_t2->forward(add(t1, drop(layer.ffn_t->forward(t1))));
      return {s_out, t_out, in.n, in.m};
    }
    // Shared residual/FFN over the whole concatenated stream.
    Tensor c_in = concat_rows(in.S, in.T);
    Tensor c_att = concat_rows(att.S, att.T);
    Tensor c1 = layer.norm_shared1->forward(add(c_in, drop(c_att)));
    Tensor c2 = layer.norm_shared2->forward(
        add(c1, drop(layer.ffn_shared->forward(c1))));
    return {slice_rows(c2, 0, in.n), slice_rows(c2, in.n, in.n + in.m), in.n,
            in.m};
  }

  if (layer.mixed_only) {
    // no_das: the acoustic block is pinned to the encoder hand-off; only the
    // linguistic block is updated.
    Tensor cat = concat_rows(in.S, in.T);
    MhaResult t_att =
        multi_head_attention(in.T, cat, cat, build_mixed_mask(in.m, in.n),
                             *layer.mixed_only, keep);
    if (keep) {
      for (auto& w : t_att.head_weights) alignment_out->push_back(w);
    }
    Tensor t1 = layer.norm_t1->forward(add(in.T, drop(t_att.output)));
    Tensor t_out =
        layer.norm_t2->forward(add(t1, drop(layer.ffn_t->forward(t1))));
    return {in.S, t_out, in.n, in.m};
  }

  // Standard decoder layer: causal self-attention, then source-target
  // attention over the acoustic block (the evolving stream for
  // no_mixed_attention, the encoder output for the baseline).
  Tensor s_out = in.S;
  if (layer.acoustic_self) {
    MhaResult s_att = multi_head_attention(in.S, in.S, in.S,
                                           AttentionMask::none(),
                                           *layer.acoustic_self);
    Tensor s1 = layer.norm_s1->forward(add(in.S, drop(s_att.output)));
    s_out = layer.norm_s2->forward(add(s1, drop(layer.ffn_s->forward(s1))));
  }
  MhaResult self_att =
      multi_head_attention(in.T, in.T, in.T, build_mixed_mask(in.m, 0),
                           *layer.t_self_proj);
  Tensor t1 = layer.norm_t1->forward(add(in.T, drop(self_att.output)));
  MhaResult src_att = multi_head_attention(t1, in.S, in.S,
                                           AttentionMask::none(),
                                           *layer.src_proj, keep);
  if (keep) {
    for (auto& w : src_att.head_weights) alignment_out->push_back(w);
  }
  Tensor t2 = layer.norm_t2->forward(add(t1, drop(src_att.output)));
  Tensor t3 =
      layer.norm_t3->forward(add(t2, drop(layer.ffn_t->forward(t2))));
  return {s_out, t3, in.n, in.m};
}

DecoderOutput SmadModel::decode_training(
    const EncoderOutput& enc, const std::vector<int>& target_in,
    bool keep_streams, std::vector<Tensor>* alignment_out) const {
  if (target_in.empty()) throw UsageError("decode: empty target sequence");
  if (target_in.front() != Vocab::kSosId) {
    throw UsageError("decode: targets must begin with SOS");
  }

  const bool baseline = cfg_.variant == Variant::transformer_baseline;
  // Positional encoding restarts at 0 for each block; the baseline attends
  // the encoder output directly.
  Tensor s0 = baseline
                  ? enc.h
                  : drop(add(enc.h, positional_encoding(enc.n, cfg_.d_model)));
  JointStream stream{s0, target_entry(target_in), enc.n, target_in.size()};

  DecoderOutput out;
  for (const auto& layer : dec_layers_) {
    stream = run_decoder_layer(layer, stream, enc.h, alignment_out);
    if (keep_streams) out.per_layer_streams.push_back(stream);
  }

  out.linguistic_logits =
      cfg_.tie_embedding ? matmul(stream.T, transpose(embedding_.table))
                         : out_proj_.forward(stream.T);
  if (has_decoder_acoustic_stream(cfg_.variant)) {
    out.acoustic_final = stream.S;
  } else if (cfg_.variant == Variant::no_das) {
    out.acoustic_final = enc.h;
  }
  return out;
}

Tensor SmadModel::ctc_input(const EncoderOutput& enc,
                            const DecoderOutput* dec) const {
  switch (cfg_.ctc_placement) {
    case CtcPlacement::none:
      throw ConfigError("ctc_input: model has no ctc head configured");
    case CtcPlacement::ctc1:
      return enc.h;
    case CtcPlacement::ctc2:
      if (!has_decoder_acoustic_stream(cfg_.variant)) {
        throw ConfigError("ctc2 requires a decoder acoustic stream; variant " +
                          to_string(cfg_.variant) + " has none");
      }
      if (dec == nullptr || !dec->acoustic_final.defined()) {
        throw UsageError("ctc2 input needs a decoder pass");
      }
      return dec->acoustic_final;
  }
  throw ConfigError("ctc_input: bad placement");
}

Tensor SmadModel::ctc_log_probs(const Tensor& acoustic) const {
  if (!ctc_head_.w.defined()) {
    throw ConfigError("ctc_log_probs: model has no ctc head configured");
  }
  return log_softmax(ctc_head_.forward(acoustic), -1);
}

DecoderCache SmadModel::make_cache(const EncoderOutput& enc) const {
  NoGradGuard ng;
  DecoderCache cache;
  cache.layers.resize(dec_layers_.size());
  const bool baseline = cfg_.variant == Variant::transformer_baseline;
  const std::size_t d = cfg_.d_model;

  Tensor s = baseline ? enc.h
                      : add(enc.h, positional_encoding(enc.n, cfg_.d_model));
  for (std::size_t l = 0; l < dec_layers_.size(); ++l) {
    const DecoderLayer& layer = dec_layers_[l];
    LayerCache& lc = cache.layers[l];
    if (const HeadProjections* mixed = layer.mixed()) {
      lc.k_acoustic = matmul(s, mixed->wk);
      lc.v_acoustic = matmul(s, mixed->wv);
      lc.k_target = Tensor::zeros({0, d});
      lc.v_target = Tensor::zeros({0, d});
    }
    if (layer.src_proj) {
      lc.k_acoustic = matmul(s, layer.src_proj->wk);
      lc.v_acoustic = matmul(s, layer.src_proj->wv);
    }
    if (layer.t_self_proj) {
      lc.k_self = Tensor::zeros({0, d});
      lc.v_self = Tensor::zeros({0, d});
    }
    // Advance the acoustic stream for the next layer's static projections.
    const HeadProjections* s_proj =
        layer.sma ? &layer.sma->self_proj
                  : (layer.acoustic_self ? &*layer.acoustic_self : nullptr);
    if (s_proj) {
      MhaResult s_att =
          multi_head_attention(s, s, s, AttentionMask::none(), *s_proj);
      if (layer.ffn_s) {
        Tensor s1 = layer.norm_s1->forward(add(s, s_att.output));
        s = layer.norm_s2->forward(add(s1, layer.ffn_s->forward(s1)));
      } else {
        // Shared trunk applies per position, so blockwise application over S
        // matches the full concatenated pass exactly.
        Tensor s1 = layer.norm_shared1->forward(add(s, s_att.output));
        s = layer.norm_shared2->forward(add(s1, layer.ffn_shared->forward(s1)));
      }
    }
  }
  return cache;
}

Tensor SmadModel::decode_incremental(const EncoderOutput&,
                                     const std::vector<int>& prefix,
                                     DecoderCache& cache) const {
  NoGradGuard ng;
  if (prefix.empty()) throw UsageError("decode_incremental: empty prefix");
  if (prefix.front() != Vocab::kSosId) {
    throw UsageError("decode_incremental: prefix must begin with SOS");
  }
  if (cache.layers.size() != dec_layers_.size()) {
    throw UsageError("decode_incremental: cache does not match this model");
  }
  if (cache.prefix.size() > prefix.size()) {
    throw UsageError("decode_incremental: cache is ahead of the given prefix");
  }
  for (std::size_t i = 0; i < cache.prefix.size(); ++i) {
    if (cache.prefix[i] != prefix[i]) {
      throw UsageError("decode_incremental: cache/prefix mismatch at position " +
                       std::to_string(i));
    }
  }
  if (cache.prefix.size() == prefix.size()) {
    if (!cache.last_logits.defined()) {
      throw UsageError("decode_incremental: prefix already consumed");
    }
    return cache.last_logits;
  }

  const double emb_scale = std::sqrt(static_cast<double>(cfg_.d_model));
  Tensor x;
  for (std::size_t pos = cache.prefix.size(); pos < prefix.size(); ++pos) {
    x = scale(embedding_.forward({prefix[pos]}), emb_scale);
    x = add(x, pe_single(pos, cfg_.d_model));
    for (std::size_t l = 0; l < dec_layers_.size(); ++l) {
      const DecoderLayer& layer = dec_layers_[l];
      LayerCache& lc = cache.layers[l];
      if (const HeadProjections* mixed = layer.mixed()) {
        lc.k_target = concat_rows(lc.k_target, matmul(x, mixed->wk));
        lc.v_target = concat_rows(lc.v_target, matmul(x, mixed->wv));
        Tensor att = attend_cached(matmul(x, mixed->wq),
                                   concat_rows(lc.k_acoustic, lc.k_target),
                                   concat_rows(lc.v_acoustic, lc.v_target),
                                   *mixed);
        if (layer.ffn_t) {
          Tensor t1 = layer.norm_t1->forward(add(x, att));
          x = layer.norm_t2->forward(add(t1, layer.ffn_t->forward(t1)));
        } else {
          Tensor t1 = layer.norm_shared1->forward(add(x, att));
          x = layer.norm_shared2->forward(
              add(t1, layer.ffn_shared->forward(t1)));
        }
      } else {
        lc.k_self = concat_rows(lc.k_self, matmul(x, layer.t_self_proj->wk));
        lc.v_self = concat_rows(lc.v_self, matmul(x, layer.t_self_proj->wv));
        Tensor att1 = attend_cached(matmul(x, layer.t_self_proj->wq),
                                    lc.k_self, lc.v_self, *layer.t_self_proj);
        Tensor t1 = layer.norm_t1->forward(add(x, att1));
        Tensor att2 = attend_cached(matmul(t1, layer.src_proj->wq),
                                    lc.k_acoustic, lc.v_acoustic,
                                    *layer.src_proj);
        Tensor t2 = layer.norm_t2->forward(add(t1, att2));
        x = layer.norm_t3->forward(add(t2, layer.ffn_t->forward(t2)));
      }
    }
    cache.prefix.push_back(prefix[pos]);
  }
  cache.last_logits = cfg_.tie_embedding
                          ? matmul(x, transpose(embedding_.table))
                          : out_proj_.forward(x);
  return cache.last_logits;
}

std::string SmadModel::describe() const {
  std::ostringstream os;
  os << "model variant: " << to_string(cfg_.variant) << "\n";
  os << "d_model " << cfg_.d_model << ", d_ff " << cfg_.d_ff << ", heads "
     << cfg_.n_heads << ", enc layers " << cfg_.n_enc_layers << ", dec layers "
     << cfg_.n_dec_layers << ", vocab " << cfg_.vocab_size << ", ctc "
     << to_string(cfg_.ctc_placement) << "\n";
  os << std::left << std::setw(44) << "parameter" << std::setw(18) << "shape"
     << "count\n";
  std::map<std::string, std::size_t> groups;
  for (const auto& p : store_->params()) {
    os << std::left << std::setw(44) << p.name << std::setw(18)
       << shape_str(p.shape) << shape_numel(p.shape) << "\n";
    groups[p.name.substr(0, p.name.find('.'))] += shape_numel(p.shape);
  }
  os << "component subtotals:\n";
  for (const auto& [name, count] : groups) {
    os << "  " << std::left << std::setw(20) << name << count << "\n";
  }
  os << "total parameters: " << store_->total_elements() << "\n";
  return os.str();
}

}  // namespace smad
