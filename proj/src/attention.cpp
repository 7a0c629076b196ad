// SPDX-License-Identifier: Apache-2.0
#include "smad/attention.hpp"

#include <cmath>
#include <limits>

#include "smad/errors.hpp"

namespace smad {

namespace {
constexpr double kNegInf = -std::numeric_limits<double>::infinity();
}

AttentionMask AttentionMask::padding(std::size_t q_rows, std::size_t kv_cols,
                                     std::size_t valid_cols) {
  if (valid_cols == 0 || valid_cols > kv_cols) {
    throw ConfigError("padding mask: valid_cols " + std::to_string(valid_cols) +
                      " out of range for " + std::to_string(kv_cols) +
                      " columns");
  }
  std::vector<double> m(q_rows * kv_cols, 0.0);
  for (std::size_t i = 0; i < q_rows; ++i)
    for (std::size_t j = valid_cols; j < kv_cols; ++j)
      m[i * kv_cols + j] = kNegInf;
  AttentionMask out;
  out.kind = MaskKind::padding;
  out.matrix = Tensor::from({q_rows, kv_cols}, std::move(m));
  return out;
}

AttentionMask build_mixed_mask(std::size_t m, std::size_t n) {
  if (m < 1) throw ConfigError("mixed mask: m must be >= 1");
  const std::size_t cols = n + m;
  std::vector<double> mk(m * cols, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = i + n + 1; j < cols; ++j) mk[i * cols + j] = kNegInf;
  AttentionMask out;
  out.kind = MaskKind::mixed_causal;
  out.matrix = Tensor::from({m, cols}, std::move(mk));
  return out;
}

AttentionResult scaled_dot_attention(const Tensor& q, const Tensor& k,
                                     const Tensor& v,
                                     const AttentionMask& mask) {
  if (q.cols() != k.cols()) {
    throw ShapeError("attention: query dim " + shape_str(q.shape()) +
                     " does not match key dim " + shape_str(k.shape()));
  }
  if (k.rows() != v.rows()) {
    throw ShapeError("attention: key rows " + shape_str(k.shape()) +
                     " do not match value rows " + shape_str(v.shape()));
  }
  Tensor scores = scale(matmul(q, transpose(k)),
                        1.0 / std::sqrt(static_cast<double>(q.cols())));
  if (!mask.empty()) {
    if (mask.matrix.rows() != q.rows() || mask.matrix.cols() != k.rows()) {
      throw ShapeError("attention: mask " + shape_str(mask.matrix.shape()) +
                       " does not match scores [" + std::to_string(q.rows()) +
                       "x" + std::to_string(k.rows()) + "]");
    }
    scores = add(scores, mask.matrix);
  }
  Tensor weights = softmax(scores, -1);
  return {matmul(weights, v), weights};
}

HeadProjections::HeadProjections(ParamStore& store, const std::string& prefix,
                                 std::size_t d_model_, std::size_t n_heads_,
                                 double out_gain) {
  if (n_heads_ < 1 || d_model_ % n_heads_ != 0) {
    throw ConfigError("attention: heads (" + std::to_string(n_heads_) +
                      ") must divide d_model (" + std::to_string(d_model_) +
                      ")");
  }
  n_heads = n_heads_;
  d_model = d_model_;
  d_head = d_model_ / n_heads_;
  wq = store.create(prefix + ".wq", {d_model, d_model}, Init::xavier_uniform);
  wk = store.create(prefix + ".wk", {d_model, d_model}, Init::xavier_uniform);
  wv = store.create(prefix + ".wv", {d_model, d_model}, Init::xavier_uniform);
  wo = store.create(prefix + ".wo", {d_model, d_model}, Init::xavier_uniform,
                    out_gain);
}

MhaResult multi_head_attention(const Tensor& q_in, const Tensor& k_in,
                               const Tensor& v_in, const AttentionMask& mask,
                               const HeadProjections& proj,
                               bool keep_weights) {
  if (q_in.cols() != proj.d_model || k_in.cols() != proj.d_model ||
      v_in.cols() != proj.d_model) {
    throw ShapeError("mha: input dim does not match d_model " +
                     std::to_string(proj.d_model));
  }
  const Tensor qp = matmul(q_in, proj.wq);
  const Tensor kp = matmul(k_in, proj.wk);
  const Tensor vp = matmul(v_in, proj.wv);

  MhaResult result;
  std::vector<Tensor> heads;
  heads.reserve(proj.n_heads);
  for (std::size_t h = 0; h < proj.n_heads; ++h) {
    const std::size_t c0 = h * proj.d_head, c1 = c0 + proj.d_head;
    AttentionResult att =
        scaled_dot_attention(slice_cols(qp, c0, c1), slice_cols(kp, c0, c1),
                             slice_cols(vp, c0, c1), mask);
    heads.push_back(att.output);
    if (keep_weights) result.head_weights.push_back(att.weights);
  }
  const Tensor cat = proj.n_heads == 1 ? heads[0] : concat_cols(heads);
  result.output = matmul(cat, proj.wo);
  return result;
}

SmaProjections::SmaProjections(ParamStore& store, const std::string& prefix,
                               std::size_t d_model, std::size_t n_heads,
                               double out_gain)
    : self_proj(store, prefix + ".self", d_model, n_heads, out_gain),
      mixed_proj(store, prefix + ".mixed", d_model, n_heads, out_gain) {}

JointStream sma_layer_attention(const JointStream& stream,
                                const SmaProjections& proj, bool keep_weights,
                                std::vector<Tensor>* mixed_weights) {
  if (stream.n < 1) {
    throw ConfigError(
        "sma: empty acoustic block; mixed attention needs n >= 1");
  }
  if (stream.m < 1) throw ConfigError("sma: empty linguistic block");

  // Acoustic self-attention reads the full bidirectional S context.
  MhaResult s_att = multi_head_attention(stream.S, stream.S, stream.S,
                                         AttentionMask::none(),
                                         proj.self_proj);

  const Tensor cat = concat_rows(stream.S, stream.T);
  const AttentionMask mask = build_mixed_mask(stream.m, stream.n);
  MhaResult t_att = multi_head_attention(stream.T, cat, cat, mask,
                                         proj.mixed_proj, keep_weights);
  if (keep_weights && mixed_weights) *mixed_weights = t_att.head_weights;

  return {s_att.output, t_att.output, stream.n, stream.m};
}

}  // namespace smad
