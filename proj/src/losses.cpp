// SPDX-License-Identifier: Apache-2.0
#include "smad/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "smad/errors.hpp"

namespace smad {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double log_add(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double m = std::max(a, b);
  return m + std::log1p(std::exp(std::min(a, b) - m));
}

}  // namespace

Tensor ctc_loss(const Tensor& log_probs, const std::vector<int>& targets,
                int blank_id) {
  if (log_probs.ndim() != 2) {
    throw ShapeError("ctc: log_probs must be [T x classes], got " +
                     shape_str(log_probs.shape()));
  }
  const std::size_t T = log_probs.dim(0);
  const std::size_t classes = log_probs.dim(1);
  if (blank_id < 0 || static_cast<std::size_t>(blank_id) >= classes) {
    throw ConfigError("ctc: blank id " + std::to_string(blank_id) +
                      " out of range");
  }
  if (targets.empty()) throw DataError("ctc: empty target sequence");
  for (int t : targets) {
    if (t < 0 || static_cast<std::size_t>(t) >= classes || t == blank_id) {
      throw DataError("ctc: target id " + std::to_string(t) + " invalid");
    }
  }

  // Blank-interleaved lattice: b c1 b c2 ... cL b.
  const std::size_t L = targets.size();
  const std::size_t S = 2 * L + 1;
  std::vector<int> lab(S, blank_id);
  for (std::size_t i = 0; i < L; ++i) lab[2 * i + 1] = targets[i];

  auto lp = [&](std::size_t t, int k) {
    return log_probs.at(t, static_cast<std::size_t>(k));
  };
  // A lattice state s may arrive from s, s-1, and (skipping a blank) s-2
  // when its label differs from the label two back.
  auto can_skip = [&](std::size_t s) {
    return s >= 2 && lab[s] != blank_id && lab[s] != lab[s - 2];
  };

  std::vector<double> alpha(T * S, kNegInf);
  alpha[0] = lp(0, lab[0]);
  if (S > 1) alpha[1] = lp(0, lab[1]);
  for (std::size_t t = 1; t < T; ++t) {
    for (std::size_t s = 0; s < S; ++s) {
      double a = alpha[(t - 1) * S + s];
      if (s >= 1) a = log_add(a, alpha[(t - 1) * S + s - 1]);
      if (can_skip(s)) a = log_add(a, alpha[(t - 1) * S + s - 2]);
      if (a != kNegInf) alpha[t * S + s] = a + lp(t, lab[s]);
    }
  }
  double log_p = alpha[(T - 1) * S + S - 1];
  if (S > 1) log_p = log_add(log_p, alpha[(T - 1) * S + S - 2]);

  if (log_p == kNegInf) {
    // No feasible alignment: defined infinite loss, flagged for the caller.
    diagnostics::count_infeasible_ctc();
    return Tensor::make_op({1},
                           {std::numeric_limits<double>::infinity()},
                           {log_probs}, [](detail::Node&) {});
  }

  // Backward lattice pass for the gradient: beta_t(s) is the log-probability
  // of completing the target from state s after frame t. Everything the
  // closure needs is captured by value; it runs long after this frame is
  // gone.
  auto beta_grad = [T, S, classes, lab, log_p, log_probs](detail::Node& self) {
    if (!log_probs.requires_grad()) return;
    const double upstream = self.grad[0];
    const int blank = lab[0];
    auto can_skip = [&lab, blank](std::size_t s) {
      return s >= 2 && lab[s] != blank && lab[s] != lab[s - 2];
    };
    auto lp = [&](std::size_t t, int k) {
      return log_probs.data()[t * classes + static_cast<std::size_t>(k)];
    };
    std::vector<double> alpha(T * S, kNegInf);
    alpha[0] = lp(0, lab[0]);
    if (S > 1) alpha[1] = lp(0, lab[1]);
    for (std::size_t t = 1; t < T; ++t) {
      for (std::size_t s = 0; s < S; ++s) {
        double a = alpha[(t - 1) * S + s];
        if (s >= 1) a = log_add(a, alpha[(t - 1) * S + s - 1]);
        if (can_skip(s)) a = log_add(a, alpha[(t - 1) * S + s - 2]);
        if (a != kNegInf) alpha[t * S + s] = a + lp(t, lab[s]);
      }
    }
    std::vector<double> beta(T * S, kNegInf);
    beta[(T - 1) * S + S - 1] = 0.0;
    if (S > 1) beta[(T - 1) * S + S - 2] = 0.0;
    for (std::size_t t = T - 1; t-- > 0;) {
      for (std::size_t s = 0; s < S; ++s) {
        double b = kNegInf;
        const double* next = beta.data() + (t + 1) * S;
        b = log_add(b, next[s] + lp(t + 1, lab[s]));
        if (s + 1 < S) b = log_add(b, next[s + 1] + lp(t + 1, lab[s + 1]));
        if (s + 2 < S && can_skip(s + 2)) {
          b = log_add(b, next[s + 2] + lp(t + 1, lab[s + 2]));
        }
        beta[t * S + s] = b;
      }
    }
    // d(-logP)/d(logp[t][k]) = -sum_{s: lab(s)=k} exp(alpha+beta-logP)
    log_probs.node()->ensure_grad();
    for (std::size_t t = 0; t < T; ++t) {
      for (std::size_t s = 0; s < S; ++s) {
        const double g = alpha[t * S + s] + beta[t * S + s] - log_p;
        if (g == kNegInf) continue;
        log_probs.node()
            ->grad[t * classes + static_cast<std::size_t>(lab[s])] -=
            upstream * std::exp(g);
      }
    }
  };

  return Tensor::make_op({1}, {-log_p}, {log_probs}, beta_grad);
}

Tensor attention_loss(const Tensor& logits, const std::vector<int>& targets,
                      double smoothing) {
  if (logits.ndim() != 2) {
    throw ShapeError("attention_loss: logits must be [m x vocab], got " +
                     shape_str(logits.shape()));
  }
  const std::size_t m = logits.dim(0), vocab = logits.dim(1);
  if (targets.size() != m) {
    throw ShapeError("attention_loss: " + std::to_string(targets.size()) +
                     " targets for " + std::to_string(m) + " logit rows");
  }
  if (smoothing < 0.0 || smoothing >= 1.0) {
    throw ConfigError("attention_loss: smoothing must be in [0,1)");
  }
  for (int t : targets) {
    if (t < 0 || static_cast<std::size_t>(t) >= vocab) {
      throw DataError("attention_loss: target id " + std::to_string(t) +
                      " out of range for vocab " + std::to_string(vocab));
    }
  }

  const double on = 1.0 - smoothing;
  const double off = vocab > 1 ? smoothing / static_cast<double>(vocab - 1) : 0.0;

  // KL(q || p) = sum q log q - sum q log p. The entropy term is constant in
  // the logits; fold it in so the reported value is the true divergence.
  double neg_entropy = 0.0;
  if (on > 0.0) neg_entropy += on * std::log(on);
  if (off > 0.0) neg_entropy += smoothing * std::log(off);

  std::vector<double> q(m * vocab, off);
  for (std::size_t i = 0; i < m; ++i) {
    q[i * vocab + static_cast<std::size_t>(targets[i])] = on;
  }
  Tensor q_const = Tensor::from({m, vocab}, std::move(q));
  Tensor logp = log_softmax(logits, -1);
  Tensor cross = scale(sum_all(mul(q_const, logp)),
                       -1.0 / static_cast<double>(m));
  return add_scalar(cross, neg_entropy);
}

Tensor multi_objective_loss(const Tensor& ctc, const Tensor& att,
                            double lambda) {
  if (lambda < 0.0 || lambda > 1.0) {
    throw ConfigError("multi_objective_loss: lambda must be in [0,1], got " +
                      std::to_string(lambda));
  }
  if (lambda == 0.0) {
    if (!att.defined()) throw UsageError("mol: lambda=0 needs the att term");
    return att;
  }
  if (lambda == 1.0) {
    if (!ctc.defined()) throw UsageError("mol: lambda=1 needs the ctc term");
    return ctc;
  }
  if (!ctc.defined() || !att.defined()) {
    throw UsageError("mol: both terms required for 0 < lambda < 1");
  }
  return add(scale(ctc, lambda), scale(att, 1.0 - lambda));
}

LossReport make_loss_report(const Tensor& mol, const Tensor& ctc,
                            const Tensor& att, double lambda) {
  LossReport r;
  r.mol = mol.value();
  r.ctc = ctc.defined() ? ctc.value() : 0.0;
  r.att = att.defined() ? att.value() : 0.0;
  r.lambda = lambda;
  return r;
}

Tensor ctc_head_input(CtcPlacement placement, Variant variant,
                      const Tensor& encoder_h, const Tensor& decoder_acoustic) {
  switch (placement) {
    case CtcPlacement::none:
      throw ConfigError("ctc_head_input: placement is none");
    case CtcPlacement::ctc1:
      return encoder_h;
    case CtcPlacement::ctc2:
      if (!has_decoder_acoustic_stream(variant)) {
        throw ConfigError("ctc2 requires a decoder acoustic stream; variant " +
                          to_string(variant) + " has none");
      }
      if (!decoder_acoustic.defined()) {
        throw UsageError("ctc2 input missing decoder acoustic block");
      }
      return decoder_acoustic;
  }
  throw ConfigError("ctc_head_input: bad placement");
}

}  // namespace smad
