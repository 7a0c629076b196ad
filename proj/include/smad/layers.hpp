// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>

#include "smad/param_store.hpp"
#include "smad/tensor.hpp"

namespace smad {

// Generic neural layers. Each layer registers its parameters in the store at
// construction under `prefix`, so the parameter tree mirrors the module tree.

struct Linear {
  Tensor w;  // [in x out]
  Tensor b;  // [out], undefined when bias-free

  Linear() = default;
  Linear(ParamStore& store, const std::string& prefix, std::size_t in,
         std::size_t out, bool bias = true, double gain = 1.0);

  Tensor forward(const Tensor& x) const;
};

struct LayerNorm {
  Tensor gain;
  Tensor bias;
  double epsilon = 1e-9;

  LayerNorm() = default;
  LayerNorm(ParamStore& store, const std::string& prefix, std::size_t dim);

  Tensor forward(const Tensor& x) const {
    return layer_norm(x, gain, bias, epsilon);
  }
};

// Position-wise feed-forward: linear -> relu -> linear.
struct Ffn {
  Linear fc1, fc2;

  Ffn() = default;
  // out_gain scales the second linear's init (residual-branch damping).
  Ffn(ParamStore& store, const std::string& prefix, std::size_t d_model,
      std::size_t d_ff, double out_gain = 1.0);

  Tensor forward(const Tensor& x) const {
    return fc2.forward(relu(fc1.forward(x)));
  }
};

struct Embedding {
  Tensor table;  // [vocab x d_model]

  Embedding() = default;
  Embedding(ParamStore& store, const std::string& prefix, std::size_t vocab,
            std::size_t d_model);

  Tensor forward(const std::vector<int>& ids) const {
    return embedding_rows(table, ids);
  }
};

// 3x3 stride-2 convolution layer with rectified-linear activation.
struct ConvLayer {
  Tensor w;  // [3 x 3 x Cin x Cout]
  Tensor b;  // [Cout]

  ConvLayer() = default;
  ConvLayer(ParamStore& store, const std::string& prefix, std::size_t ch_in,
            std::size_t ch_out);

  Tensor forward(const Tensor& x) const {
    return relu(conv2d_stride2(x, w, b));
  }
};

}  // namespace smad
