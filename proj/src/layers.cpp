// SPDX-License-Identifier: Apache-2.0
#include "smad/layers.hpp"

namespace smad {

Linear::Linear(ParamStore& store, const std::string& prefix, std::size_t in,
               std::size_t out, bool bias, double gain) {
  w = store.create(prefix + ".w", {in, out}, Init::xavier_uniform, gain);
  if (bias) b = store.create(prefix + ".b", {out}, Init::zeros);
}

Tensor Linear::forward(const Tensor& x) const {
  Tensor y = matmul(x, w);
  if (b.defined()) y = add_row_broadcast(y, b);
  return y;
}

LayerNorm::LayerNorm(ParamStore& store, const std::string& prefix,
                     std::size_t dim) {
  gain = store.create(prefix + ".gain", {dim}, Init::ones);
  bias = store.create(prefix + ".bias", {dim}, Init::zeros);
}

Ffn::Ffn(ParamStore& store, const std::string& prefix, std::size_t d_model,
         std::size_t d_ff, double out_gain)
    : fc1(store, prefix + ".fc1", d_model, d_ff),
      fc2(store, prefix + ".fc2", d_ff, d_model, true, out_gain) {}

Embedding::Embedding(ParamStore& store, const std::string& prefix,
                     std::size_t vocab, std::size_t d_model) {
  table = store.create(prefix + ".table", {vocab, d_model},
                       Init::xavier_uniform);
}

ConvLayer::ConvLayer(ParamStore& store, const std::string& prefix,
                     std::size_t ch_in, std::size_t ch_out) {
  w = store.create(prefix + ".w", {3, 3, ch_in, ch_out}, Init::xavier_uniform);
  b = store.create(prefix + ".b", {ch_out}, Init::zeros);
}

}  // namespace smad
