// SPDX-License-Identifier: Apache-2.0
#include "smad/decode.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "smad/errors.hpp"
#include "smad/vocab.hpp"

namespace smad {

namespace {

// Log-softmax of a [1 x vocab] logits row.
std::vector<double> row_log_probs(const Tensor& logits) {
  const std::size_t v = logits.numel();
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < v; ++i) mx = std::max(mx, logits.at(i));
  double z = 0.0;
  for (std::size_t i = 0; i < v; ++i) z += std::exp(logits.at(i) - mx);
  const double lse = mx + std::log(z);
  std::vector<double> out(v);
  for (std::size_t i = 0; i < v; ++i) out[i] = logits.at(i) - lse;
  return out;
}

std::vector<int> strip_specials(const std::vector<int>& tokens) {
  std::vector<int> out;
  for (int t : tokens) {
    if (t != Vocab::kSosId && t != Vocab::kEosId && t != Vocab::kPadId)
      out.push_back(t);
  }
  return out;
}

}  // namespace

double BeamHypothesis::normalized_score(double alpha) const {
  const double len = std::max<std::size_t>(tokens.size(), 1);
  return log_prob / std::pow(len, alpha);
}

std::vector<int> greedy_decode(const SmadModel& model, const EncoderOutput& enc,
                               std::size_t max_len) {
  std::vector<int> prefix = {Vocab::kSosId};
  DecoderCache cache = model.make_cache(enc);
  std::vector<int> out;
  for (std::size_t step = 0; step < max_len; ++step) {
    const Tensor logits = model.decode_incremental(enc, prefix, cache);
    int best = -1;
    double best_v = -std::numeric_limits<double>::infinity();
    for (std::size_t id = 0; id < logits.numel(); ++id) {
      if (id == Vocab::kPadId || id == Vocab::kSosId) continue;
      if (logits.at(id) > best_v) {
        best_v = logits.at(id);
        best = static_cast<int>(id);
      }
    }
    if (best == Vocab::kEosId) break;
    out.push_back(best);
    prefix.push_back(best);
  }
  return out;
}

std::vector<int> beam_decode(const SmadModel& model, const EncoderOutput& enc,
                             const DecodeOptions& opts, double* best_score) {
  if (opts.beam_width < 1) throw UsageError("beam_decode: beam_width >= 1");

  struct Live {
    BeamHypothesis hyp;
    DecoderCache cache;
  };
  std::vector<Live> live;
  live.push_back({BeamHypothesis{}, model.make_cache(enc)});
  std::vector<BeamHypothesis> finished;

  for (std::size_t step = 0; step < opts.max_len && !live.empty(); ++step) {
    struct Candidate {
      double log_prob;
      std::size_t from;
      int token;
    };
    std::vector<Candidate> cands;
    for (std::size_t h = 0; h < live.size(); ++h) {
      std::vector<int> prefix = {Vocab::kSosId};
      prefix.insert(prefix.end(), live[h].hyp.tokens.begin(),
                    live[h].hyp.tokens.end());
      const Tensor logits =
          model.decode_incremental(enc, prefix, live[h].cache);
      const std::vector<double> logp = row_log_probs(logits);
      for (std::size_t id = 0; id < logp.size(); ++id) {
        if (id == Vocab::kPadId || id == Vocab::kSosId) continue;
        cands.push_back({live[h].hyp.log_prob + logp[id], h,
                         static_cast<int>(id)});
      }
    }
    std::sort(cands.begin(), cands.end(), [](const Candidate& a,
                                             const Candidate& b) {
      if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
      if (a.token != b.token) return a.token < b.token;
      return a.from < b.from;
    });
    const std::size_t keep = std::min(opts.beam_width, cands.size());
    std::vector<Live> next;
    for (std::size_t c = 0; c < keep; ++c) {
      const Candidate& cand = cands[c];
      BeamHypothesis hyp = live[cand.from].hyp;
      hyp.tokens.push_back(cand.token);
      hyp.log_prob = cand.log_prob;
      if (cand.token == Vocab::kEosId) {
        hyp.finished = true;
        finished.push_back(std::move(hyp));
      } else {
        next.push_back({std::move(hyp), live[cand.from].cache});
      }
    }
    live = std::move(next);
  }

  // Anything still in flight competes without an EOS bonus.
  for (auto& l : live) finished.push_back(l.hyp);
  if (finished.empty()) {
    if (best_score) *best_score = 0.0;
    return {};
  }
  const BeamHypothesis* best = &finished[0];
  for (const auto& h : finished) {
    if (h.normalized_score(opts.length_penalty) >
        best->normalized_score(opts.length_penalty)) {
      best = &h;
    }
  }
  if (best_score) *best_score = best->normalized_score(opts.length_penalty);
  return strip_specials(best->tokens);
}

}  // namespace smad
