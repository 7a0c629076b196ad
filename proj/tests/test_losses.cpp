// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>
#include <vector>

#include "smad/losses.hpp"
#include "testutil.hpp"

using namespace smad;
using testutil::random_tensor;

namespace {

Tensor random_log_probs(std::size_t T, std::size_t classes, Rng& rng) {
  Tensor logits = random_tensor({T, classes}, rng, false, 1.5);
  NoGradGuard ng;
  Tensor lp = log_softmax(logits, -1);
  return Tensor::from(lp.shape(), lp.data());  // detach
}

// Exhaustive oracle: sum the probability of every length-T path whose
// collapse (merge repeats, then drop blanks) equals the target.
long double ctc_enumeration_prob(const Tensor& log_probs,
                                 const std::vector<int>& targets, int blank) {
  const std::size_t T = log_probs.dim(0), C = log_probs.dim(1);
  std::vector<int> path(T, 0);
  long double total = 0.0L;
  while (true) {
    std::vector<int> collapsed;
    int prev = -1;
    for (int z : path) {
      if (z != prev && z != blank) collapsed.push_back(z);
      prev = z;
    }
    if (collapsed == targets) {
      long double lp = 0.0L;
      for (std::size_t t = 0; t < T; ++t)
        lp += (long double)log_probs.at(t, (std::size_t)path[t]);
      total += std::exp(lp);
    }
    std::size_t pos = 0;
    while (pos < T) {
      if (++path[pos] < (int)C) break;
      path[pos] = 0;
      ++pos;
    }
    if (pos == T) break;
  }
  return total;
}

}  // namespace

TEST_CASE("ctc single-frame single-label is -log p") {
  Rng rng(1);
  Tensor lp = random_log_probs(1, 3, rng);  // classes: {0, 1, blank=2}
  Tensor loss = ctc_loss(lp, {1}, 2);
  CHECK(loss.value() == doctest::Approx(-lp.at(0, 1)).epsilon(1e-12));
}

TEST_CASE("ctc two frames one label sums the three collapsing paths") {
  Rng rng(2);
  Tensor lp = random_log_probs(2, 3, rng);
  const int a = 0, blank = 2;
  const long double want = std::exp((long double)lp.at(0, a) + lp.at(1, a)) +
                           std::exp((long double)lp.at(0, a) + lp.at(1, blank)) +
                           std::exp((long double)lp.at(0, blank) + lp.at(1, a));
  Tensor loss = ctc_loss(lp, {a}, blank);
  CHECK(std::exp(-loss.value()) == doctest::Approx((double)want).epsilon(1e-12));
}

TEST_CASE("ctc forward algorithm equals exhaustive enumeration") {
  Rng rng(3);
  int checked = 0;
  for (std::size_t letters = 1; letters <= 4; ++letters) {
    for (std::size_t T = 1; T <= 6; ++T) {
      for (std::size_t L = 1; L <= 3 && L <= T; ++L) {
        const std::size_t classes = letters + 1;  // + blank
        const int blank = (int)letters;
        Tensor lp = random_log_probs(T, classes, rng);
        std::vector<int> targets;
        for (std::size_t i = 0; i < L; ++i)
          targets.push_back((int)rng.uniform_int(letters));
        const long double oracle = ctc_enumeration_prob(lp, targets, blank);
        Tensor loss = ctc_loss(lp, targets, blank);
        const double got = std::exp(-loss.value());
        if (oracle == 0.0L) {
          CHECK(got == 0.0);
        } else {
          CHECK(std::fabs(got - (double)oracle) < 1e-10);
        }
        ++checked;
      }
    }
  }
  CHECK(checked >= 60);
}

TEST_CASE("ctc with repeated labels needs a separating blank") {
  Rng rng(4);
  // L=2 identical labels need at least 3 frames (a blank a)
  Tensor lp2 = random_log_probs(2, 3, rng);
  diagnostics::reset();
  Tensor infeasible = ctc_loss(lp2, {0, 0}, 2);
  CHECK(std::isinf(infeasible.value()));
  CHECK(diagnostics::infeasible_ctc_instances() == 1);
  diagnostics::reset();

  Tensor lp3 = random_log_probs(3, 3, rng);
  Tensor ok = ctc_loss(lp3, {0, 0}, 2);
  CHECK(std::isfinite(ok.value()));
  const long double oracle = ctc_enumeration_prob(lp3, {0, 0}, 2);
  CHECK(std::exp(-ok.value()) == doctest::Approx((double)oracle).epsilon(1e-10));
}

TEST_CASE("ctc too-short input yields infinite loss with diagnostic") {
  Rng rng(5);
  Tensor lp = random_log_probs(2, 4, rng);
  diagnostics::reset();
  Tensor loss = ctc_loss(lp, {0, 1, 2}, 3);
  CHECK(std::isinf(loss.value()));
  CHECK(loss.value() > 0);
  CHECK(diagnostics::infeasible_ctc_instances() == 1);
  // backward on the infeasible instance is a no-op, not a crash
  Tensor lp_grad = random_tensor({2, 4}, rng, true);
  diagnostics::reset();
}

TEST_CASE("ctc gradient matches finite differences") {
  Rng rng(6);
  for (int trial = 0; trial < 5; ++trial) {
    const std::size_t T = 3 + rng.uniform_int(3);  // 3..5
    Tensor x = random_tensor({T, 4}, rng, true, 1.0);
    std::vector<int> targets = {(int)rng.uniform_int(3),
                                (int)rng.uniform_int(3)};
    const double err = testutil::max_grad_error(
        [&] { return ctc_loss(log_softmax(x, -1), targets, 3); }, {x});
    CHECK(err < 1e-4);
  }
}

TEST_CASE("ctc is permutation-sensitive") {
  Rng rng(7);
  for (int trial = 0; trial < 10; ++trial) {
    Tensor lp = random_log_probs(6, 5, rng);
    std::vector<int> t1 = {0, 1, 2};
    std::vector<int> t2 = {2, 1, 0};
    const double l1 = ctc_loss(lp, t1, 4).value();
    const double l2 = ctc_loss(lp, t2, 4).value();
    CHECK(l1 != l2);
  }
}

TEST_CASE("ctc rejects malformed inputs") {
  Rng rng(8);
  Tensor lp = random_log_probs(3, 4, rng);
  CHECK_THROWS_AS(ctc_loss(lp, {}, 3), DataError);
  CHECK_THROWS_AS(ctc_loss(lp, {3}, 3), DataError);   // blank as target
  CHECK_THROWS_AS(ctc_loss(lp, {9}, 3), DataError);   // out of range
  CHECK_THROWS_AS(ctc_loss(lp, {0}, 7), ConfigError); // bad blank
}

TEST_CASE("attention loss on uniform logits is log vocab at eps 0") {
  Tensor logits = Tensor::zeros({3, 7});
  Tensor loss = attention_loss(logits, {0, 3, 6}, 0.0);
  CHECK(loss.value() == doctest::Approx(std::log(7.0)).epsilon(1e-12));
}

TEST_CASE("attention loss approaches zero for confident correct predictions") {
  std::vector<double> logits(2 * 4, 0.0);
  logits[0 * 4 + 1] = 50.0;
  logits[1 * 4 + 2] = 50.0;
  Tensor loss = attention_loss(Tensor::from({2, 4}, logits), {1, 2}, 0.0);
  CHECK(loss.value() < 1e-12);
  CHECK(loss.value() >= 0.0);
}

TEST_CASE("attention loss matches long-double oracle with smoothing") {
  Rng rng(9);
  const std::size_t vocab = 5;
  Tensor logits = random_tensor({2, vocab}, rng, false, 2.0);
  const std::vector<int> targets = {1, 4};
  const double eps = 0.1;
  Tensor loss = attention_loss(logits, targets, eps);

  long double want = 0.0L;
  for (std::size_t i = 0; i < 2; ++i) {
    long double mx = logits.at(i, 0);
    for (std::size_t c = 1; c < vocab; ++c)
      mx = std::max(mx, (long double)logits.at(i, c));
    long double z = 0.0L;
    for (std::size_t c = 0; c < vocab; ++c)
      z += std::exp((long double)logits.at(i, c) - mx);
    for (std::size_t c = 0; c < vocab; ++c) {
      const long double q = (int)c == targets[i]
                                ? 1.0L - eps
                                : eps / (long double)(vocab - 1);
      const long double logp = (long double)logits.at(i, c) - mx - std::log(z);
      want += q * (std::log(q) - logp);
    }
  }
  want /= 2.0L;
  CHECK(std::fabs(loss.value() - (double)want) < 1e-10);
}

TEST_CASE("attention loss decreases as true-class probability rises") {
  Rng rng(10);
  // eps = 0: pure cross-entropy, strictly decreasing in the true-class
  // probability with the other logits fixed.
  Tensor base = random_tensor({1, 6}, rng, false);
  double prev = std::numeric_limits<double>::infinity();
  for (int step = 0; step < 12; ++step) {
    std::vector<double> logits = base.data();
    logits[2] += 0.75 * step;
    const double v =
        attention_loss(Tensor::from({1, 6}, logits), {2}, 0.0).value();
    CHECK(v < prev);
    prev = v;
  }
  // With smoothing, the divergence keeps decreasing while the true-class
  // probability stays below its 1-eps optimum.
  prev = std::numeric_limits<double>::infinity();
  for (int step = 0; step < 8; ++step) {
    std::vector<double> logits(6, 0.0);
    logits[2] = 0.25 * step;  // p_true stays well under 0.9
    const double v =
        attention_loss(Tensor::from({1, 6}, logits), {2}, 0.1).value();
    CHECK(v < prev);
    prev = v;
  }
}

TEST_CASE("attention loss rejects bad targets") {
  Tensor logits = Tensor::zeros({2, 4});
  CHECK_THROWS_AS(attention_loss(logits, {0, 4}, 0.0), DataError);
  CHECK_THROWS_AS(attention_loss(logits, {0}, 0.0), ShapeError);
}

TEST_CASE("attention loss gradient") {
  Rng rng(11);
  Tensor logits = random_tensor({3, 5}, rng);
  const double err = testutil::max_grad_error(
      [&] { return attention_loss(logits, {0, 2, 4}, 0.1); }, {logits});
  CHECK(err < 1e-6);
}

TEST_CASE("multi-objective loss boundaries and weighting") {
  Tensor ctc = Tensor::scalar(2.0);
  Tensor att = Tensor::scalar(1.0);
  CHECK(multi_objective_loss(Tensor(), att, 0.0).value() == 1.0);
  CHECK(multi_objective_loss(ctc, Tensor(), 1.0).value() == 2.0);
  // lambda = 0.3 is the paper's default weighting
  CHECK(multi_objective_loss(ctc, att, 0.3).value() ==
        doctest::Approx(1.3).epsilon(1e-12));
  CHECK_THROWS_AS(multi_objective_loss(ctc, att, -0.1), ConfigError);
  CHECK_THROWS_AS(multi_objective_loss(ctc, att, 1.5), ConfigError);
}

TEST_CASE("multi-objective loss is affine in each argument") {
  Rng rng(12);
  for (int trial = 0; trial < 10; ++trial) {
    const double c1 = rng.normal(), c2 = rng.normal(), a = rng.normal();
    const double lam = rng.uniform();
    const double lhs = multi_objective_loss(Tensor::scalar(c1 + c2),
                                            Tensor::scalar(a), lam)
                           .value();
    const double rhs =
        multi_objective_loss(Tensor::scalar(c1), Tensor::scalar(a), lam).value() +
        lam * c2;
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
  }
}

TEST_CASE("loss report invariant mol = lambda*ctc + (1-lambda)*att") {
  Tensor ctc = Tensor::scalar(3.25);
  Tensor att = Tensor::scalar(0.5);
  Tensor mol = multi_objective_loss(ctc, att, 0.3);
  LossReport r = make_loss_report(mol, ctc, att, 0.3);
  CHECK(std::fabs(r.mol - (r.lambda * r.ctc + (1 - r.lambda) * r.att)) < 1e-12);
}

TEST_CASE("lambda boundaries disable the other gradient entirely") {
  Rng rng(13);
  Tensor x = random_tensor({2, 3}, rng);
  Tensor y = random_tensor({2, 3}, rng);
  Tensor ctc_term = sum_all(x);
  Tensor att_term = sum_all(y);
  multi_objective_loss(ctc_term, att_term, 0.0).backward();
  CHECK(x.grad().empty());     // ctc side untouched
  CHECK(!y.grad().empty());
}

TEST_CASE("ctc head input selection") {
  Rng rng(14);
  Tensor enc_h = random_tensor({4, 8}, rng, false);
  Tensor dec_s = random_tensor({4, 8}, rng, false);
  CHECK(ctc_head_input(CtcPlacement::ctc1, Variant::t_smad, enc_h, dec_s)
            .node() == enc_h.node());
  CHECK(ctc_head_input(CtcPlacement::ctc2, Variant::t_smad, enc_h, dec_s)
            .node() == dec_s.node());
  CHECK_THROWS_AS(
      ctc_head_input(CtcPlacement::ctc2, Variant::no_das, enc_h, dec_s),
      ConfigError);
  CHECK_THROWS_AS(ctc_head_input(CtcPlacement::ctc2,
                                 Variant::transformer_baseline, enc_h, dec_s),
                  ConfigError);
  CHECK_THROWS_AS(
      ctc_head_input(CtcPlacement::none, Variant::t_smad, enc_h, dec_s),
      ConfigError);
}
