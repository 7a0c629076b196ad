// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "smad/config.hpp"
#include "smad/tensor.hpp"

namespace smad {

// Per-step loss record; mol == lambda*ctc + (1-lambda)*att, all terms
// minimized negative log-likelihoods / divergences.
struct LossReport {
  double mol = 0.0;
  double ctc = 0.0;
  double att = 0.0;
  double lambda = 0.0;
};

// -log P_ctc(targets | log_probs): forward algorithm in log space over the
// blank-interleaved lattice. log_probs is [T x (|U|+1)] with log-softmax
// rows; the blank class is `blank_id`. Differentiable via the
// forward-backward posterior. An instance with no feasible alignment
// (T too short) yields +inf with a diagnostics count rather than throwing.
Tensor ctc_loss(const Tensor& log_probs, const std::vector<int>& targets,
                int blank_id);

// Mean over positions of KL(smoothed one-hot || softmax(logits)); the
// smoothed target puts 1-eps on the truth and eps/(vocab-1) elsewhere.
Tensor attention_loss(const Tensor& logits, const std::vector<int>& targets,
                      double smoothing);

// lambda*ctc + (1-lambda)*att. Either side may be an undefined tensor when
// its weight is exactly 0 (the disabled objective contributes nothing, not
// even gradient).
Tensor multi_objective_loss(const Tensor& ctc, const Tensor& att,
                            double lambda);

LossReport make_loss_report(const Tensor& mol, const Tensor& ctc,
                            const Tensor& att, double lambda);

// CTC head input selection. ctc1 taps the encoder output; ctc2 taps the
// decoder-stack acoustic block, which requires a variant that carries one.
Tensor ctc_head_input(CtcPlacement placement, Variant variant,
                      const Tensor& encoder_h, const Tensor& decoder_acoustic);

}  // namespace smad
