// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "smad/corpus.hpp"
#include "smad/losses.hpp"
#include "smad/model.hpp"
#include "smad/optimizer.hpp"

namespace smad {

struct TrainerOptions {
  std::size_t max_steps = 2000;
  std::size_t batch_size = 8;
  std::size_t eval_interval = 100;  // dev evaluation + best tracking cadence
  std::size_t warmup_steps = 400;
  double lr_scale = 1.0;
  double grad_clip = 5.0;  // global-norm clip; 0 disables
  double beta1 = 0.9;
  double beta2 = 0.98;
  double epsilon = 1e-9;
  std::uint64_t shuffle_seed = 1;
  SpecMaskConfig spec_augment{};
  // Best-checkpoint selection: dev attention loss by default; optionally the
  // slower greedy dev CER (ties broken by attention loss).
  bool select_by_cer = false;
  std::size_t decode_max_len = 24;
};

struct TrainResult {
  std::size_t steps = 0;
  double best_dev_att = 0.0;
  double best_dev_cer = 0.0;  // only tracked when select_by_cer
  std::size_t best_step = 0;
  std::filesystem::path best_checkpoint;
  std::filesystem::path last_checkpoint;
  std::filesystem::path metrics_path;
};

// Mean teacher-forced loss of one utterance; builds (and frees) its own
// graph. Used by training, dev evaluation, and the gradient-audit tests.
Tensor utterance_loss(const SmadModel& model, const Utterance& utt,
                      Tensor* ctc_out = nullptr, Tensor* att_out = nullptr,
                      bool with_ctc = true);

// Mean attention loss over a split, no gradients.
double evaluate_attention_loss(SmadModel& model, const Corpus& split);

// Aggregate greedy CER over a split, no gradients.
double evaluate_greedy_cer(SmadModel& model, const Corpus& split,
                           std::size_t max_len);

// Deterministic training loop: length-bucketed seeded batches, per-batch
// mean loss, Adam with warmup schedule, per-step JSONL metrics, best-dev and
// last checkpoints under run_dir. Aborts with NumericalError naming the
// step when the loss goes non-finite.
TrainResult train_model(SmadModel& model, const Corpus& train,
                        const Corpus& dev, const TrainerOptions& opts,
                        const std::filesystem::path& run_dir);

}  // namespace smad
