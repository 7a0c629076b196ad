// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "smad/errors.hpp"
#include "smad/rng.hpp"

namespace smad {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& s);
std::size_t shape_numel(const Shape& s);

namespace detail {

// One tape node. Nodes only point at their parents, so the graph is acyclic
// by construction; backward() walks it once in reverse topological order.
struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until a gradient is accumulated
  bool requires_grad = false;
  bool backward_done = false;  // set on the node backward() was called on
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;  // reads this->grad, adds to parents

  void ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
  }
};

// Thread-local gradient recording switch (see NoGradGuard).
bool& grad_mode();

}  // namespace detail

// Disables tape recording in scope; evaluation/decoding paths use this so
// forward passes allocate no graph.
class NoGradGuard {
 public:
  NoGradGuard() : prev_(detail::grad_mode()) { detail::grad_mode() = false; }
  ~NoGradGuard() { detail::grad_mode() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

// Dense row-major float64 tensor participating in reverse-mode autodiff.
// Value-semantics handle over a shared tape node.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> data,
                     bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  // Internal factory for ops: result node with parents and a local
  // vector-Jacobian rule. Records the tape edge only while grad mode is on
  // and at least one parent requires grad.
  static Tensor make_op(Shape shape, std::vector<double> data,
                        std::vector<Tensor> parents,
                        std::function<void(detail::Node&)> backward_fn);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t ndim() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->data.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }

  // 2-d helpers (most of the model lives in matrices).
  std::size_t rows() const;
  std::size_t cols() const;

  const std::vector<double>& data() const { return node_->data; }
  std::vector<double>& mutable_data() { return node_->data; }

  double value() const;            // scalar tensors
  double at(std::size_t i) const { return node_->data[i]; }
  double at(std::size_t r, std::size_t c) const {
    return node_->data[r * cols() + c];
  }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool v) { node_->requires_grad = v; }

  // Gradient of the last backward() pass; empty if none reached this tensor.
  const std::vector<double>& grad() const { return node_->grad; }
  void zero_grad() {
    node_->grad.clear();
    node_->backward_done = false;
  }

  // Reverse-mode sweep from a scalar. Each reachable node is visited exactly
  // once; gradient contributions along multiple paths are summed. Calling it
  // twice on the same tensor without zero_grad() is a usage error.
  void backward();

  std::shared_ptr<detail::Node> node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> n) : node_(std::move(n)) {}
  std::shared_ptr<detail::Node> node_;
};

// Diagnostics counters for defined-but-suspicious numerics (all-masked
// softmax rows, infeasible CTC instances). Tests and the trainer read these.
namespace diagnostics {
std::uint64_t all_masked_softmax_rows();
std::uint64_t infeasible_ctc_instances();
void reset();
void count_all_masked_row();
void count_infeasible_ctc();
}  // namespace diagnostics

// ---- elementwise / arithmetic ----
Tensor add(const Tensor& a, const Tensor& b);           // same shape
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);           // Hadamard
Tensor scale(const Tensor& a, double c);
Tensor add_scalar(const Tensor& a, double c);
Tensor relu(const Tensor& a);

// ---- linear algebra ----
Tensor matmul(const Tensor& a, const Tensor& b);        // [p×q]·[q×r]
Tensor transpose(const Tensor& a);                      // 2-d
Tensor add_row_broadcast(const Tensor& a, const Tensor& row);  // a[r×c] + row[c]

// ---- shape ----
Tensor reshape(const Tensor& a, Shape shape);
Tensor concat_rows(const Tensor& a, const Tensor& b);
Tensor slice_rows(const Tensor& a, std::size_t r0, std::size_t r1);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor slice_cols(const Tensor& a, std::size_t c0, std::size_t c1);

// ---- reductions / normalization ----
Tensor sum_all(const Tensor& a);
Tensor mean_all(const Tensor& a);

// Numerically stabilized softmax along `axis` (negative counts from the
// back). -inf inputs produce exact zeros; a row of all -inf yields an
// all-zero row and bumps the diagnostics counter.
Tensor softmax(const Tensor& a, int axis = -1);
Tensor log_softmax(const Tensor& a, int axis = -1);

// Per-position normalization over the last axis, then affine transform.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double epsilon = 1e-9);

// ---- lookups ----
Tensor embedding_rows(const Tensor& table, const std::vector<int>& ids);

// ---- convolution ----
// x: [T×F×C_in], w: [3×3×C_in×C_out], b: [C_out]. Stride 2 both axes,
// padding 1, output [ceil(T/2)×ceil(F/2)×C_out].
Tensor conv2d_stride2(const Tensor& x, const Tensor& w, const Tensor& b);

// ---- regularization ----
// Inverted dropout; identity when !training or rate == 0.
Tensor dropout(const Tensor& x, double rate, Rng& rng, bool training);

// Sinusoidal position table [length×d_model]; parameter-free constant.
// Throws ConfigError for odd d_model.
Tensor positional_encoding(std::size_t length, std::size_t d_model);

}  // namespace smad
