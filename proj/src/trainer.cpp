// SPDX-License-Identifier: Apache-2.0
#include "smad/trainer.hpp"

#include <cmath>
#include <fstream>
#include <limits>

#include <json.hpp>

#include "smad/batching.hpp"
#include "smad/cer.hpp"
#include "smad/decode.hpp"
#include "smad/errors.hpp"

namespace smad {

Tensor utterance_loss(const SmadModel& model, const Utterance& utt,
                      Tensor* ctc_out, Tensor* att_out, bool with_ctc) {
  const ModelConfig& cfg = model.config();
  const EncoderOutput enc = model.encode(utt.feature_tensor());

  std::vector<int> target_in = {Vocab::kSosId};
  target_in.insert(target_in.end(), utt.tokens.begin(), utt.tokens.end());
  std::vector<int> target_out = utt.tokens;
  target_out.push_back(Vocab::kEosId);

  const DecoderOutput dec = model.decode_training(enc, target_in);
  Tensor att = attention_loss(dec.linguistic_logits, target_out,
                              cfg.label_smoothing);
  Tensor ctc;
  if (with_ctc && cfg.ctc_placement != CtcPlacement::none &&
      cfg.lambda_ctc > 0.0) {
    const Tensor ctc_in = model.ctc_input(enc, &dec);
    ctc = ctc_loss(model.ctc_log_probs(ctc_in), utt.tokens,
                   static_cast<int>(cfg.vocab_size));
  }
  if (ctc_out) *ctc_out = ctc;
  if (att_out) *att_out = att;
  return multi_objective_loss(ctc, att, ctc.defined() ? cfg.lambda_ctc : 0.0);
}

double evaluate_greedy_cer(SmadModel& model, const Corpus& split,
                           std::size_t max_len) {
  NoGradGuard ng;
  model.set_training(false);
  std::vector<CerReport> reports;
  reports.reserve(split.utts.size());
  for (const auto& utt : split.utts) {
    const EncoderOutput enc = model.encode(utt.feature_tensor());
    reports.push_back(cer(utt.tokens, greedy_decode(model, enc, max_len)));
  }
  return aggregate_cer(reports).cer_percent();
}

double evaluate_attention_loss(SmadModel& model, const Corpus& split) {
  NoGradGuard ng;
  model.set_training(false);
  double total = 0.0;
  for (const auto& utt : split.utts) {
    total += utterance_loss(model, utt, nullptr, nullptr, false).value();
  }
  return split.utts.empty() ? 0.0 : total / static_cast<double>(split.utts.size());
}

TrainResult train_model(SmadModel& model, const Corpus& train,
                        const Corpus& dev, const TrainerOptions& opts,
                        const std::filesystem::path& run_dir) {
  if (train.utts.empty()) throw DataError("train: empty training split");

  std::filesystem::create_directories(run_dir / "checkpoints");
  std::filesystem::create_directories(run_dir / "logs");
  TrainResult result;
  result.best_checkpoint = run_dir / "checkpoints" / "best.ckpt";
  result.last_checkpoint = run_dir / "checkpoints" / "last.ckpt";
  result.metrics_path = run_dir / "logs" / "metrics.jsonl";
  std::ofstream metrics(result.metrics_path);
  if (!metrics) {
    throw DataError("train: cannot write metrics log at " +
                    result.metrics_path.string());
  }

  AdamOptimizer adam(model.params(), opts.beta1, opts.beta2, opts.epsilon);
  result.best_dev_att = std::numeric_limits<double>::infinity();
  result.best_dev_cer = std::numeric_limits<double>::infinity();

  Rng spec_rng(opts.shuffle_seed ^ 0x5eca06ULL);
  std::size_t step = 0;
  std::size_t epoch = 0;
  while (step < opts.max_steps) {
    const auto batches =
        make_batches(train, opts.batch_size, opts.shuffle_seed + epoch);
    ++epoch;
    for (const auto& batch : batches) {
      if (step >= opts.max_steps) break;
      ++step;
      model.set_training(true);
      double sum_mol = 0.0, sum_ctc = 0.0, sum_att = 0.0;
      const double inv_b = 1.0 / static_cast<double>(batch.size);
      for (std::size_t i = 0; i < batch.size; ++i) {
        Utterance utt;
        utt.id = batch.ids[i];
        utt.frames = batch.feature_lengths[i];
        utt.dim = batch.feat_dim;
        {
          const Tensor feats = batch.utterance_features(i);
          utt.features = feats.data();
        }
        utt.tokens = batch.utterance_tokens(i);
        if (opts.spec_augment.enabled()) {
          Rng mask_rng = spec_rng.fork(step * 8191 + i);
          spec_mask(utt.features, utt.frames, utt.dim, opts.spec_augment,
                    mask_rng);
        }
        Tensor ctc, att;
        Tensor mol = utterance_loss(model, utt, &ctc, &att);
        sum_mol += mol.value();
        sum_ctc += ctc.defined() ? ctc.value() : 0.0;
        sum_att += att.value();
        scale(mol, inv_b).backward();
      }
      const double mean_mol = sum_mol * inv_b;
      if (!std::isfinite(mean_mol)) {
        throw NumericalError("train: loss diverged (non-finite) at step " +
                             std::to_string(step));
      }
      if (opts.grad_clip > 0.0) {
        double sq = 0.0;
        for (const auto& p : model.params().params())
          for (double g : p.tensor.grad()) sq += g * g;
        const double norm = std::sqrt(sq);
        if (norm > opts.grad_clip) {
          const double factor = opts.grad_clip / norm;
          for (const auto& p : model.params().params()) {
            auto& g = const_cast<Tensor&>(p.tensor).node()->grad;
            for (double& v : g) v *= factor;
          }
        }
      }
      const double lr = lr_schedule(step, model.config().d_model,
                                    opts.warmup_steps, opts.lr_scale);
      adam.step(lr);
      model.params().zero_grad();

      nlohmann::json rec;
      rec["step"] = step;
      rec["lr"] = lr;
      rec["ctc"] = sum_ctc * inv_b;
      rec["att"] = sum_att * inv_b;
      rec["mol"] = mean_mol;
      metrics << rec.dump() << "\n";

      if (step % opts.eval_interval == 0 || step == opts.max_steps) {
        const double dev_att = evaluate_attention_loss(model, dev);
        nlohmann::json dev_rec;
        dev_rec["step"] = step;
        dev_rec["event"] = "dev";
        dev_rec["dev_att"] = dev_att;
        bool improved = dev_att < result.best_dev_att;
        if (opts.select_by_cer) {
          const double dev_cer = evaluate_greedy_cer(model, dev,
                                                     opts.decode_max_len);
          dev_rec["dev_cer"] = dev_cer;
          improved = dev_cer < result.best_dev_cer ||
                     (dev_cer == result.best_dev_cer &&
                      dev_att < result.best_dev_att);
          if (improved) result.best_dev_cer = dev_cer;
        }
        metrics << dev_rec.dump() << "\n";
        if (improved) {
          result.best_dev_att = dev_att;
          result.best_step = step;
          model.params().save(result.best_checkpoint);
        }
      }
    }
  }
  model.set_training(false);
  model.params().save(result.last_checkpoint);
  if (!std::filesystem::exists(result.best_checkpoint)) {
    model.params().save(result.best_checkpoint);
  }
  result.steps = step;
  metrics.flush();
  return result;
}

}  // namespace smad
