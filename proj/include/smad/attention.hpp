// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "smad/param_store.hpp"
#include "smad/tensor.hpp"

namespace smad {

enum class MaskKind { none, padding, mixed_causal };

// Additive attention mask with entries in {0, -inf}, added to the score
// matrix before softmax.
struct AttentionMask {
  MaskKind kind = MaskKind::none;
  Tensor matrix;  // [rows x cols]; undefined for kind none

  static AttentionMask none() { return {}; }

  // Masks key columns >= valid_cols (padded positions).
  static AttentionMask padding(std::size_t q_rows, std::size_t kv_cols,
                               std::size_t valid_cols);

  bool empty() const { return kind == MaskKind::none; }
};

// Mask over the concatenated acoustic+target stream: target row i may attend
// column j iff j <= i + n, i.e. every acoustic position plus targets up to
// and including itself. Shape [m x (n+m)]. Every row keeps at least one open
// column for any m >= 1, n >= 0.
AttentionMask build_mixed_mask(std::size_t m, std::size_t n);

struct AttentionResult {
  Tensor output;
  Tensor weights;  // post-softmax rows, exposed read-only for inspection
};

// softmax(Q K^T / sqrt(d_k) + mask) V.
AttentionResult scaled_dot_attention(const Tensor& q, const Tensor& k,
                                     const Tensor& v,
                                     const AttentionMask& mask = {});

// Projections of one multi-head attention. wq/wk/wv hold the per-head
// matrices as contiguous column blocks (head h occupies columns
// [h*d_head, (h+1)*d_head)); wo maps the concatenated heads back to d_model.
struct HeadProjections {
  std::size_t n_heads = 0;
  std::size_t d_model = 0;
  std::size_t d_head = 0;
  Tensor wq, wk, wv;  // [d_model x n_heads*d_head]
  Tensor wo;          // [n_heads*d_head x d_model]

  HeadProjections() = default;
  // Registers parameters; throws ConfigError when heads do not divide
  // d_model. out_gain scales wo's init (residual-branch damping).
  HeadProjections(ParamStore& store, const std::string& prefix,
                  std::size_t d_model, std::size_t n_heads,
                  double out_gain = 1.0);
};

struct MhaResult {
  Tensor output;
  std::vector<Tensor> head_weights;  // filled only when keep_weights
};

// Per-head projection -> scaled dot attention -> concat -> output projection.
MhaResult multi_head_attention(const Tensor& q_in, const Tensor& k_in,
                               const Tensor& v_in, const AttentionMask& mask,
                               const HeadProjections& proj,
                               bool keep_weights = false);

// Decoder-layer state: acoustic block S (n rows) and linguistic block T
// (m rows); the boundary index n partitions Concat(S, T) exactly.
struct JointStream {
  Tensor S;
  Tensor T;
  std::size_t n = 0;
  std::size_t m = 0;
};

struct SmaProjections {
  HeadProjections self_proj;   // acoustic self-attention over S
  HeadProjections mixed_proj;  // target queries over Concat(S, T)

  SmaProjections() = default;
  SmaProjections(ParamStore& store, const std::string& prefix,
                 std::size_t d_model, std::size_t n_heads,
                 double out_gain = 1.0);
};

// One self-and-mixed attention sub-layer:
//   S' = MHA(S, S, S)                         (no mask, full acoustic context)
//   T' = MHA(T, Concat(S,T), Concat(S,T), mixed_causal(m, n))
// The acoustic update reads only S, never T.
JointStream sma_layer_attention(const JointStream& stream,
                                const SmaProjections& proj,
                                bool keep_weights = false,
                                std::vector<Tensor>* mixed_weights = nullptr);

}  // namespace smad
