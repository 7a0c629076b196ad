// SPDX-License-Identifier: Apache-2.0
#include "smad/tensor.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <sstream>
#include <unordered_set>
#include <utility>

namespace smad {

namespace {
constexpr double kNegInf = -std::numeric_limits<double>::infinity();

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;
}  // namespace

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << 'x';
    os << s[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

namespace detail {
bool& grad_mode() {
  thread_local bool mode = true;
  return mode;
}
}  // namespace detail

namespace diagnostics {
namespace {
std::atomic<std::uint64_t> g_masked_rows{0};
std::atomic<std::uint64_t> g_infeasible_ctc{0};
}  // namespace
std::uint64_t all_masked_softmax_rows() { return g_masked_rows.load(); }
std::uint64_t infeasible_ctc_instances() { return g_infeasible_ctc.load(); }
void reset() {
  g_masked_rows = 0;
  g_infeasible_ctc = 0;
}
void count_all_masked_row() { ++g_masked_rows; }
void count_infeasible_ctc() { ++g_infeasible_ctc; }
}  // namespace diagnostics

// ---------------------------------------------------------------------------
// Tensor basics
// ---------------------------------------------------------------------------

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  auto n = std::make_shared<detail::Node>();
  n->data.assign(shape_numel(shape), value);
  n->shape = std::move(shape);
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

Tensor Tensor::from(Shape shape, std::vector<double> data, bool requires_grad) {
  if (shape_numel(shape) != data.size()) {
    throw ShapeError("tensor: shape " + shape_str(shape) + " does not match " +
                     std::to_string(data.size()) + " values");
  }
  auto n = std::make_shared<detail::Node>();
  n->shape = std::move(shape);
  n->data = std::move(data);
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from({1}, {value}, requires_grad);
}

Tensor Tensor::make_op(Shape shape, std::vector<double> data,
                       std::vector<Tensor> parents,
                       std::function<void(detail::Node&)> backward_fn) {
  auto n = std::make_shared<detail::Node>();
  n->shape = std::move(shape);
  n->data = std::move(data);
  bool track = detail::grad_mode();
  if (track) {
    track = false;
    for (const auto& p : parents) {
      if (p.defined() && p.requires_grad()) {
        track = true;
        break;
      }
    }
  }
  if (track) {
    n->requires_grad = true;
    n->parents.reserve(parents.size());
    for (auto& p : parents) n->parents.push_back(p.node());
    n->backward_fn = std::move(backward_fn);
  }
  return Tensor(std::move(n));
}

std::size_t Tensor::rows() const {
  return ndim() <= 1 ? 1 : node_->shape[0];
}

std::size_t Tensor::cols() const {
  if (ndim() == 0) return 1;
  return ndim() == 1 ? node_->shape[0] : node_->shape[ndim() - 1];
}

double Tensor::value() const {
  if (numel() != 1) {
    throw UsageError("value(): tensor is not scalar, shape " +
                     shape_str(shape()));
  }
  return node_->data[0];
}

void Tensor::backward() {
  if (!defined()) throw UsageError("backward: undefined tensor");
  if (numel() != 1) {
    throw UsageError("backward: loss must be scalar, got shape " +
                     shape_str(shape()));
  }
  if (!node_->requires_grad) {
    throw UsageError("backward: tensor does not require grad");
  }
  if (node_->backward_done) {
    throw UsageError(
        "backward: already called on this graph; call zero_grad and rebuild "
        "the forward pass first");
  }

  // Iterative post-order DFS; post-order lists parents before children, so
  // iterating it in reverse visits every node after all of its consumers.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> visited;
  struct Frame {
    detail::Node* node;
    std::size_t next_parent;
  };
  std::vector<Frame> stack;
  stack.push_back({node_.get(), 0});
  visited.insert(node_.get());
  while (!stack.empty()) {
    Frame& top = stack.back();
    if (top.next_parent < top.node->parents.size()) {
      detail::Node* p = top.node->parents[top.next_parent++].get();
      if (p->requires_grad && visited.insert(p).second) {
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(top.node);
      stack.pop_back();
    }
  }

  node_->ensure_grad();
  node_->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* n = *it;
    if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
  }
  node_->backward_done = true;
}

// ---------------------------------------------------------------------------
// Elementwise ops
// ---------------------------------------------------------------------------

namespace {

void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " +
                     shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

void accumulate(detail::Node& dst, const std::vector<double>& g,
                double factor = 1.0) {
  dst.ensure_grad();
  for (std::size_t i = 0; i < g.size(); ++i) dst.grad[i] += factor * g[i];
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape("add", a, b);
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) + b.at(i);
  return Tensor::make_op(a.shape(), std::move(out), {a, b},
                         [a, b](detail::Node& self) {
                           if (a.requires_grad()) accumulate(*a.node(), self.grad);
                           if (b.requires_grad()) accumulate(*b.node(), self.grad);
                         });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape("sub", a, b);
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) - b.at(i);
  return Tensor::make_op(a.shape(), std::move(out), {a, b},
                         [a, b](detail::Node& self) {
                           if (a.requires_grad()) accumulate(*a.node(), self.grad);
                           if (b.requires_grad()) accumulate(*b.node(), self.grad, -1.0);
                         });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape("mul", a, b);
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) * b.at(i);
  return Tensor::make_op(
      a.shape(), std::move(out), {a, b}, [a, b](detail::Node& self) {
        if (a.requires_grad()) {
          a.node()->ensure_grad();
          for (std::size_t i = 0; i < self.grad.size(); ++i)
            a.node()->grad[i] += self.grad[i] * b.at(i);
        }
        if (b.requires_grad()) {
          b.node()->ensure_grad();
          for (std::size_t i = 0; i < self.grad.size(); ++i)
            b.node()->grad[i] += self.grad[i] * a.at(i);
        }
      });
}

Tensor scale(const Tensor& a, double c) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) * c;
  return Tensor::make_op(a.shape(), std::move(out), {a},
                         [a, c](detail::Node& self) {
                           if (a.requires_grad()) accumulate(*a.node(), self.grad, c);
                         });
}

Tensor add_scalar(const Tensor& a, double c) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) + c;
  return Tensor::make_op(a.shape(), std::move(out), {a},
                         [a](detail::Node& self) {
                           if (a.requires_grad()) accumulate(*a.node(), self.grad);
                         });
}

Tensor relu(const Tensor& a) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = a.at(i) > 0.0 ? a.at(i) : 0.0;
  return Tensor::make_op(
      a.shape(), std::move(out), {a}, [a](detail::Node& self) {
        if (!a.requires_grad()) return;
        a.node()->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i)
          if (a.at(i) > 0.0) a.node()->grad[i] += self.grad[i];
      });
}

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.ndim() != 2 || b.ndim() != 2) {
    throw ShapeError("matmul: expects 2-d operands, got " +
                     shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  const std::size_t p = a.dim(0), q = a.dim(1), q2 = b.dim(0), r = b.dim(1);
  if (q != q2) {
    throw ShapeError("matmul: inner dimensions disagree: " +
                     shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  std::vector<double> out(p * r);
  {
    ConstMap A(a.data().data(), p, q);
    ConstMap B(b.data().data(), q, r);
    MutMap C(out.data(), p, r);
    C.noalias() = A * B;
  }
  return Tensor::make_op(
      {p, r}, std::move(out), {a, b}, [a, b, p, q, r](detail::Node& self) {
        ConstMap G(self.grad.data(), p, r);
        if (a.requires_grad()) {
          a.node()->ensure_grad();
          MutMap dA(a.node()->grad.data(), p, q);
          ConstMap B(b.data().data(), q, r);
          dA.noalias() += G * B.transpose();
        }
        if (b.requires_grad()) {
          b.node()->ensure_grad();
          MutMap dB(b.node()->grad.data(), q, r);
          ConstMap A(a.data().data(), p, q);
          dB.noalias() += A.transpose() * G;
        }
      });
}

Tensor transpose(const Tensor& a) {
  if (a.ndim() != 2) {
    throw ShapeError("transpose: expects 2-d operand, got " +
                     shape_str(a.shape()));
  }
  const std::size_t r = a.dim(0), c = a.dim(1);
  std::vector<double> out(r * c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = a.at(i * c + j);
  return Tensor::make_op(
      {c, r}, std::move(out), {a}, [a, r, c](detail::Node& self) {
        if (!a.requires_grad()) return;
        a.node()->ensure_grad();
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < c; ++j)
            a.node()->grad[i * c + j] += self.grad[j * r + i];
      });
}

Tensor add_row_broadcast(const Tensor& a, const Tensor& row) {
  const std::size_t r = a.rows(), c = a.cols();
  if (row.numel() != c) {
    throw ShapeError("add_row_broadcast: row " + shape_str(row.shape()) +
                     " does not match columns of " + shape_str(a.shape()));
  }
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j)
      out[i * c + j] = a.at(i * c + j) + row.at(j);
  return Tensor::make_op(
      a.shape(), std::move(out), {a, row}, [a, row, r, c](detail::Node& self) {
        if (a.requires_grad()) accumulate(*a.node(), self.grad);
        if (row.requires_grad()) {
          row.node()->ensure_grad();
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j)
              row.node()->grad[j] += self.grad[i * c + j];
        }
      });
}

// ---------------------------------------------------------------------------
// Shape ops
// ---------------------------------------------------------------------------

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " +
                     shape_str(shape));
  }
  std::vector<double> out = a.data();
  return Tensor::make_op(std::move(shape), std::move(out), {a},
                         [a](detail::Node& self) {
                           if (a.requires_grad()) accumulate(*a.node(), self.grad);
                         });
}

Tensor concat_rows(const Tensor& a, const Tensor& b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(1)) {
    throw ShapeError("concat_rows: incompatible shapes " +
                     shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  const std::size_t ra = a.dim(0), rb = b.dim(0), c = a.dim(1);
  std::vector<double> out;
  out.reserve((ra + rb) * c);
  out.insert(out.end(), a.data().begin(), a.data().end());
  out.insert(out.end(), b.data().begin(), b.data().end());
  return Tensor::make_op(
      {ra + rb, c}, std::move(out), {a, b}, [a, b, ra, c](detail::Node& self) {
        if (a.requires_grad()) {
          a.node()->ensure_grad();
          for (std::size_t i = 0; i < ra * c; ++i)
            a.node()->grad[i] += self.grad[i];
        }
        if (b.requires_grad()) {
          b.node()->ensure_grad();
          const std::size_t off = ra * c;
          for (std::size_t i = 0; i < b.numel(); ++i)
            b.node()->grad[i] += self.grad[off + i];
        }
      });
}

Tensor slice_rows(const Tensor& a, std::size_t r0, std::size_t r1) {
  if (a.ndim() != 2 || r1 > a.dim(0) || r0 > r1) {
    throw ShapeError("slice_rows: invalid range [" + std::to_string(r0) + "," +
                     std::to_string(r1) + ") for " + shape_str(a.shape()));
  }
  const std::size_t c = a.dim(1);
  std::vector<double> out(a.data().begin() + r0 * c,
                          a.data().begin() + r1 * c);
  return Tensor::make_op(
      {r1 - r0, c}, std::move(out), {a}, [a, r0, c](detail::Node& self) {
        if (!a.requires_grad()) return;
        a.node()->ensure_grad();
        const std::size_t off = r0 * c;
        for (std::size_t i = 0; i < self.grad.size(); ++i)
          a.node()->grad[off + i] += self.grad[i];
      });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no parts");
  const std::size_t r = parts[0].rows();
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.ndim() != 2 || p.dim(0) != r) {
      throw ShapeError("concat_cols: incompatible part " +
                       shape_str(p.shape()));
    }
    total += p.dim(1);
  }
  std::vector<double> out(r * total);
  std::size_t col_off = 0;
  for (const auto& p : parts) {
    const std::size_t pc = p.dim(1);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < pc; ++j)
        out[i * total + col_off + j] = p.at(i * pc + j);
    col_off += pc;
  }
  return Tensor::make_op(
      {r, total}, std::move(out), parts, [parts, r, total](detail::Node& self) {
        std::size_t off = 0;
        for (const auto& p : parts) {
          const std::size_t pc = p.dim(1);
          if (p.requires_grad()) {
            p.node()->ensure_grad();
            for (std::size_t i = 0; i < r; ++i)
              for (std::size_t j = 0; j < pc; ++j)
                p.node()->grad[i * pc + j] += self.grad[i * total + off + j];
          }
          off += pc;
        }
      });
}

Tensor slice_cols(const Tensor& a, std::size_t c0, std::size_t c1) {
  if (a.ndim() != 2 || c1 > a.dim(1) || c0 > c1) {
    throw ShapeError("slice_cols: invalid range [" + std::to_string(c0) + "," +
                     std::to_string(c1) + ") for " + shape_str(a.shape()));
  }
  const std::size_t r = a.dim(0), c = a.dim(1), w = c1 - c0;
  std::vector<double> out(r * w);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < w; ++j) out[i * w + j] = a.at(i * c + c0 + j);
  return Tensor::make_op(
      {r, w}, std::move(out), {a}, [a, r, c, c0, w](detail::Node& self) {
        if (!a.requires_grad()) return;
        a.node()->ensure_grad();
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < w; ++j)
            a.node()->grad[i * c + c0 + j] += self.grad[i * w + j];
      });
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

Tensor sum_all(const Tensor& a) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) s += a.at(i);
  return Tensor::make_op({1}, {s}, {a}, [a](detail::Node& self) {
    if (!a.requires_grad()) return;
    a.node()->ensure_grad();
    const double g = self.grad[0];
    for (double& v : a.node()->grad) v += g;
  });
}

Tensor mean_all(const Tensor& a) {
  return scale(sum_all(a), 1.0 / static_cast<double>(a.numel()));
}

// ---------------------------------------------------------------------------
// Softmax family
// ---------------------------------------------------------------------------

namespace {

struct AxisIter {
  std::size_t outer, len, inner;
};

AxisIter resolve_axis(const char* op, const Tensor& a, int axis) {
  const int nd = static_cast<int>(a.ndim());
  if (axis < 0) axis += nd;
  if (axis < 0 || axis >= nd) {
    throw ShapeError(std::string(op) + ": axis out of range for " +
                     shape_str(a.shape()));
  }
  AxisIter it{1, a.dim(axis), 1};
  for (int i = 0; i < axis; ++i) it.outer *= a.dim(i);
  for (int i = axis + 1; i < nd; ++i) it.inner *= a.dim(i);
  return it;
}

}  // namespace

Tensor softmax(const Tensor& a, int axis) {
  const AxisIter it = resolve_axis("softmax", a, axis);
  std::vector<double> out(a.numel(), 0.0);
  for (std::size_t o = 0; o < it.outer; ++o) {
    for (std::size_t i = 0; i < it.inner; ++i) {
      const std::size_t base = o * it.len * it.inner + i;
      double mx = kNegInf;
      for (std::size_t k = 0; k < it.len; ++k)
        mx = std::max(mx, a.at(base + k * it.inner));
      if (mx == kNegInf) {
        // Every entry masked; defined as an all-zero row. Only malformed
        // masks reach this.
        diagnostics::count_all_masked_row();
        continue;
      }
      double z = 0.0;
      for (std::size_t k = 0; k < it.len; ++k) {
        const double e = std::exp(a.at(base + k * it.inner) - mx);
        out[base + k * it.inner] = e;
        z += e;
      }
      for (std::size_t k = 0; k < it.len; ++k) out[base + k * it.inner] /= z;
    }
  }
  return Tensor::make_op(
      a.shape(), std::move(out), {a}, [a, it](detail::Node& self) {
        if (!a.requires_grad()) return;
        a.node()->ensure_grad();
        for (std::size_t o = 0; o < it.outer; ++o) {
          for (std::size_t i = 0; i < it.inner; ++i) {
            const std::size_t base = o * it.len * it.inner + i;
            double dot = 0.0;
            for (std::size_t k = 0; k < it.len; ++k) {
              const std::size_t idx = base + k * it.inner;
              dot += self.grad[idx] * self.data[idx];
            }
            for (std::size_t k = 0; k < it.len; ++k) {
              const std::size_t idx = base + k * it.inner;
              a.node()->grad[idx] += self.data[idx] * (self.grad[idx] - dot);
            }
          }
        }
      });
}

Tensor log_softmax(const Tensor& a, int axis) {
  const AxisIter it = resolve_axis("log_softmax", a, axis);
  std::vector<double> out(a.numel(), kNegInf);
  for (std::size_t o = 0; o < it.outer; ++o) {
    for (std::size_t i = 0; i < it.inner; ++i) {
      const std::size_t base = o * it.len * it.inner + i;
      double mx = kNegInf;
      for (std::size_t k = 0; k < it.len; ++k)
        mx = std::max(mx, a.at(base + k * it.inner));
      if (mx == kNegInf) {
        diagnostics::count_all_masked_row();
        continue;
      }
      double z = 0.0;
      for (std::size_t k = 0; k < it.len; ++k)
        z += std::exp(a.at(base + k * it.inner) - mx);
      const double lse = mx + std::log(z);
      for (std::size_t k = 0; k < it.len; ++k)
        out[base + k * it.inner] = a.at(base + k * it.inner) - lse;
    }
  }
  return Tensor::make_op(
      a.shape(), std::move(out), {a}, [a, it](detail::Node& self) {
        if (!a.requires_grad()) return;
        a.node()->ensure_grad();
        for (std::size_t o = 0; o < it.outer; ++o) {
          for (std::size_t i = 0; i < it.inner; ++i) {
            const std::size_t base = o * it.len * it.inner + i;
            double gsum = 0.0;
            for (std::size_t k = 0; k < it.len; ++k)
              gsum += self.grad[base + k * it.inner];
            for (std::size_t k = 0; k < it.len; ++k) {
              const std::size_t idx = base + k * it.inner;
              a.node()->grad[idx] +=
                  self.grad[idx] - std::exp(self.data[idx]) * gsum;
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Layer norm
// ---------------------------------------------------------------------------

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double epsilon) {
  const std::size_t c = x.cols();
  if (c < 1) throw ShapeError("layer_norm: empty last axis");
  if (gain.numel() != c || bias.numel() != c) {
    throw ShapeError("layer_norm: affine params do not match last axis of " +
                     shape_str(x.shape()));
  }
  const std::size_t r = x.numel() / c;
  std::vector<double> out(x.numel());
  // Saved for backward: normalized values and inverse stddev per position.
  auto xhat = std::make_shared<std::vector<double>>(x.numel());
  auto inv_std = std::make_shared<std::vector<double>>(r);
  for (std::size_t i = 0; i < r; ++i) {
    double mean = 0.0;
    for (std::size_t j = 0; j < c; ++j) mean += x.at(i * c + j);
    mean /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      const double d = x.at(i * c + j) - mean;
      var += d * d;
    }
    var /= static_cast<double>(c);
    const double inv = 1.0 / std::sqrt(var + epsilon);
    (*inv_std)[i] = inv;
    for (std::size_t j = 0; j < c; ++j) {
      const double xh = (x.at(i * c + j) - mean) * inv;
      (*xhat)[i * c + j] = xh;
      out[i * c + j] = gain.at(j) * xh + bias.at(j);
    }
  }
  return Tensor::make_op(
      x.shape(), std::move(out), {x, gain, bias},
      [x, gain, bias, xhat, inv_std, r, c](detail::Node& self) {
        if (gain.requires_grad()) {
          gain.node()->ensure_grad();
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j)
              gain.node()->grad[j] +=
                  self.grad[i * c + j] * (*xhat)[i * c + j];
        }
        if (bias.requires_grad()) {
          bias.node()->ensure_grad();
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j)
              bias.node()->grad[j] += self.grad[i * c + j];
        }
        if (x.requires_grad()) {
          x.node()->ensure_grad();
          for (std::size_t i = 0; i < r; ++i) {
            // dxhat = g * gain; dx = inv*(dxhat - mean(dxhat) - xhat*mean(dxhat*xhat))
            double m1 = 0.0, m2 = 0.0;
            for (std::size_t j = 0; j < c; ++j) {
              const double dxh = self.grad[i * c + j] * gain.at(j);
              m1 += dxh;
              m2 += dxh * (*xhat)[i * c + j];
            }
            m1 /= static_cast<double>(c);
            m2 /= static_cast<double>(c);
            const double inv = (*inv_std)[i];
            for (std::size_t j = 0; j < c; ++j) {
              const double dxh = self.grad[i * c + j] * gain.at(j);
              x.node()->grad[i * c + j] +=
                  inv * (dxh - m1 - (*xhat)[i * c + j] * m2);
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Embedding
// ---------------------------------------------------------------------------

Tensor embedding_rows(const Tensor& table, const std::vector<int>& ids) {
  if (table.ndim() != 2) {
    throw ShapeError("embedding: table must be 2-d, got " +
                     shape_str(table.shape()));
  }
  const std::size_t v = table.dim(0), d = table.dim(1);
  std::vector<double> out(ids.size() * d);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const int id = ids[i];
    if (id < 0 || static_cast<std::size_t>(id) >= v) {
      throw DataError("embedding: id " + std::to_string(id) +
                      " out of range for table " + shape_str(table.shape()));
    }
    std::copy_n(table.data().begin() + static_cast<std::size_t>(id) * d, d,
                out.begin() + i * d);
  }
  return Tensor::make_op(
      {ids.size(), d}, std::move(out), {table},
      [table, ids, d](detail::Node& self) {
        if (!table.requires_grad()) return;
        table.node()->ensure_grad();
        for (std::size_t i = 0; i < ids.size(); ++i) {
          const std::size_t row = static_cast<std::size_t>(ids[i]) * d;
          for (std::size_t j = 0; j < d; ++j)
            table.node()->grad[row + j] += self.grad[i * d + j];
        }
      });
}

// ---------------------------------------------------------------------------
// Convolution (3x3, stride 2, pad 1)
// ---------------------------------------------------------------------------

Tensor conv2d_stride2(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (x.ndim() != 3) {
    throw ShapeError("conv2d: input must be [T x F x C], got " +
                     shape_str(x.shape()));
  }
  if (w.ndim() != 4 || w.dim(0) != 3 || w.dim(1) != 3) {
    throw ShapeError("conv2d: weight must be [3 x 3 x Cin x Cout], got " +
                     shape_str(w.shape()));
  }
  const std::size_t T = x.dim(0), F = x.dim(1), ci = x.dim(2);
  if (T < 1 || F < 1) {
    throw DataError("conv2d: input has an empty spatial axis " +
                    shape_str(x.shape()));
  }
  if (w.dim(2) != ci) {
    throw ShapeError("conv2d: channel mismatch " + shape_str(x.shape()) +
                     " vs " + shape_str(w.shape()));
  }
  const std::size_t co = w.dim(3);
  if (b.numel() != co) {
    throw ShapeError("conv2d: bias does not match output channels");
  }
  const std::size_t to = (T + 1) / 2, fo = (F + 1) / 2;

  auto x_idx = [F, ci](std::size_t t, std::size_t f, std::size_t c) {
    return (t * F + f) * ci + c;
  };
  auto w_idx = [ci, co](std::size_t kt, std::size_t kf, std::size_t c,
                        std::size_t oc) {
    return ((kt * 3 + kf) * ci + c) * co + oc;
  };

  std::vector<double> out(to * fo * co, 0.0);
  for (std::size_t ot = 0; ot < to; ++ot) {
    for (std::size_t of = 0; of < fo; ++of) {
      double* orow = out.data() + (ot * fo + of) * co;
      for (std::size_t oc = 0; oc < co; ++oc) orow[oc] = b.at(oc);
      for (std::size_t kt = 0; kt < 3; ++kt) {
        const std::ptrdiff_t it =
            static_cast<std::ptrdiff_t>(2 * ot + kt) - 1;
        if (it < 0 || it >= static_cast<std::ptrdiff_t>(T)) continue;
        for (std::size_t kf = 0; kf < 3; ++kf) {
          const std::ptrdiff_t jf =
              static_cast<std::ptrdiff_t>(2 * of + kf) - 1;
          if (jf < 0 || jf >= static_cast<std::ptrdiff_t>(F)) continue;
          for (std::size_t c = 0; c < ci; ++c) {
            const double xv = x.at(x_idx(it, jf, c));
            if (xv == 0.0) continue;
            const double* wrow = w.data().data() + w_idx(kt, kf, c, 0);
            for (std::size_t oc = 0; oc < co; ++oc) orow[oc] += xv * wrow[oc];
          }
        }
      }
    }
  }
  return Tensor::make_op(
      {to, fo, co}, std::move(out), {x, w, b},
      [x, w, b, T, F, ci, co, to, fo, x_idx, w_idx](detail::Node& self) {
        const bool need_x = x.requires_grad();
        const bool need_w = w.requires_grad();
        const bool need_b = b.requires_grad();
        if (need_x) x.node()->ensure_grad();
        if (need_w) w.node()->ensure_grad();
        if (need_b) b.node()->ensure_grad();
        for (std::size_t ot = 0; ot < to; ++ot) {
          for (std::size_t of = 0; of < fo; ++of) {
            const double* grow = self.grad.data() + (ot * fo + of) * co;
            if (need_b)
              for (std::size_t oc = 0; oc < co; ++oc)
                b.node()->grad[oc] += grow[oc];
            for (std::size_t kt = 0; kt < 3; ++kt) {
              const std::ptrdiff_t it =
                  static_cast<std::ptrdiff_t>(2 * ot + kt) - 1;
              if (it < 0 || it >= static_cast<std::ptrdiff_t>(T)) continue;
              for (std::size_t kf = 0; kf < 3; ++kf) {
                const std::ptrdiff_t jf =
                    static_cast<std::ptrdiff_t>(2 * of + kf) - 1;
                if (jf < 0 || jf >= static_cast<std::ptrdiff_t>(F)) continue;
                for (std::size_t c = 0; c < ci; ++c) {
                  const std::size_t xi = x_idx(it, jf, c);
                  const double* wrow = w.data().data() + w_idx(kt, kf, c, 0);
                  if (need_x) {
                    double acc = 0.0;
                    for (std::size_t oc = 0; oc < co; ++oc)
                      acc += grow[oc] * wrow[oc];
                    x.node()->grad[xi] += acc;
                  }
                  if (need_w) {
                    const double xv = x.at(xi);
                    double* dwrow =
                        w.node()->grad.data() + w_idx(kt, kf, c, 0);
                    for (std::size_t oc = 0; oc < co; ++oc)
                      dwrow[oc] += grow[oc] * xv;
                  }
                }
              }
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Dropout
// ---------------------------------------------------------------------------

Tensor dropout(const Tensor& x, double rate, Rng& rng, bool training) {
  if (rate < 0.0 || rate >= 1.0) {
    throw ConfigError("dropout: rate must be in [0,1), got " +
                      std::to_string(rate));
  }
  if (!training || rate == 0.0) return x;
  const double keep = 1.0 - rate;
  auto mask = std::make_shared<std::vector<double>>(x.numel());
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const double m = rng.uniform() < rate ? 0.0 : 1.0 / keep;
    (*mask)[i] = m;
    out[i] = x.at(i) * m;
  }
  return Tensor::make_op(x.shape(), std::move(out), {x},
                         [x, mask](detail::Node& self) {
                           if (!x.requires_grad()) return;
                           x.node()->ensure_grad();
                           for (std::size_t i = 0; i < self.grad.size(); ++i)
                             x.node()->grad[i] += self.grad[i] * (*mask)[i];
                         });
}

// ---------------------------------------------------------------------------
// Positional encoding
// ---------------------------------------------------------------------------

Tensor positional_encoding(std::size_t length, std::size_t d_model) {
  if (d_model % 2 != 0) {
    throw ConfigError("positional_encoding: d_model must be even, got " +
                      std::to_string(d_model));
  }
  std::vector<double> out(length * d_model);
  for (std::size_t pos = 0; pos < length; ++pos) {
    for (std::size_t i = 0; i < d_model / 2; ++i) {
      const double angle =
          static_cast<double>(pos) /
          std::pow(10000.0, 2.0 * static_cast<double>(i) /
                                static_cast<double>(d_model));
      out[pos * d_model + 2 * i] = std::sin(angle);
      out[pos * d_model + 2 * i + 1] = std::cos(angle);
    }
  }
  return Tensor::from({length, d_model}, std::move(out));
}

}  // namespace smad
