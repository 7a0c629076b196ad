// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>

#include "smad/attention.hpp"
#include "testutil.hpp"

using namespace smad;
using testutil::random_tensor;

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();

// Straight-line oracle: explicit exp/normalize at long double precision.
std::vector<double> sdpa_oracle(const Tensor& q, const Tensor& k,
                                const Tensor& v) {
  const std::size_t rq = q.rows(), rk = k.rows(), d = q.cols(),
                    dv = v.cols();
  std::vector<double> out(rq * dv, 0.0);
  for (std::size_t i = 0; i < rq; ++i) {
    std::vector<long double> logits(rk, 0.0L);
    for (std::size_t j = 0; j < rk; ++j) {
      long double dot = 0.0L;
      for (std::size_t c = 0; c < d; ++c) dot += (long double)q.at(i, c) * k.at(j, c);
      logits[j] = dot / std::sqrt((long double)d);
    }
    long double mx = logits[0];
    for (long double l : logits) mx = std::max(mx, l);
    long double z = 0.0L;
    for (long double l : logits) z += std::exp(l - mx);
    for (std::size_t j = 0; j < rk; ++j) {
      const long double w = std::exp(logits[j] - mx) / z;
      for (std::size_t c = 0; c < dv; ++c)
        out[i * dv + c] += (double)(w * (long double)v.at(j, c));
    }
  }
  return out;
}

HeadProjections identity_projections(std::size_t d) {
  HeadProjections p;
  p.n_heads = 1;
  p.d_model = d;
  p.d_head = d;
  std::vector<double> eye(d * d, 0.0);
  for (std::size_t i = 0; i < d; ++i) eye[i * d + i] = 1.0;
  p.wq = Tensor::from({d, d}, eye);
  p.wk = Tensor::from({d, d}, eye);
  p.wv = Tensor::from({d, d}, eye);
  p.wo = Tensor::from({d, d}, eye);
  return p;
}

}  // namespace

TEST_CASE("mixed mask: single target row sees everything") {
  for (std::size_t n : {0u, 1u, 5u}) {
    AttentionMask m = build_mixed_mask(1, n);
    REQUIRE(m.matrix.rows() == 1);
    REQUIRE(m.matrix.cols() == n + 1);
    for (std::size_t j = 0; j < n + 1; ++j) CHECK(m.matrix.at(0, j) == 0.0);
  }
}

TEST_CASE("mixed mask with n=0 is the causal triangle") {
  AttentionMask m = build_mixed_mask(3, 0);
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 3; ++j) {
      if (j <= i) {
        CHECK(m.matrix.at(i, j) == 0.0);
      } else {
        CHECK(m.matrix.at(i, j) == -kInf);
      }
    }
  }
}

TEST_CASE("mixed mask m=3 n=2 admits exactly columns up to i+n") {
  AttentionMask m = build_mixed_mask(3, 2);
  REQUIRE(m.matrix.rows() == 3);
  REQUIRE(m.matrix.cols() == 5);
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 5; ++j) {
      const bool open = j <= i + 2;
      CHECK(m.matrix.at(i, j) == (open ? 0.0 : -kInf));
    }
  }
}

TEST_CASE("mixed mask totality: every row keeps an open column") {
  for (std::size_t mm = 1; mm <= 8; ++mm) {
    for (std::size_t nn = 0; nn <= 8; ++nn) {
      AttentionMask mask = build_mixed_mask(mm, nn);
      for (std::size_t i = 0; i < mm; ++i) {
        bool any_open = false;
        for (std::size_t j = 0; j < nn + mm; ++j)
          any_open |= mask.matrix.at(i, j) == 0.0;
        CHECK(any_open);
      }
    }
  }
}

TEST_CASE("example mask for n=2 m=2") {
  // forced by the j > i+n rule
  AttentionMask m = build_mixed_mask(2, 2);
  const double want[2][4] = {{0, 0, 0, -kInf}, {0, 0, 0, 0}};
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 4; ++j) CHECK(m.matrix.at(i, j) == want[i][j]);
}

TEST_CASE("single key-value pair returns V regardless of Q") {
  Rng rng(1);
  Tensor q = random_tensor({3, 4}, rng, false);
  Tensor k = random_tensor({1, 4}, rng, false);
  Tensor v = random_tensor({1, 4}, rng, false);
  AttentionResult r = scaled_dot_attention(q, k, v);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t c = 0; c < 4; ++c)
      CHECK(r.output.at(i, c) == doctest::Approx(v.at(0, c)).epsilon(1e-12));
}

TEST_CASE("equal logits average the value rows") {
  // zero queries -> all logits equal -> uniform weights
  Tensor q = Tensor::zeros({2, 3});
  Rng rng(2);
  Tensor k = random_tensor({4, 3}, rng, false);
  Tensor v = random_tensor({4, 5}, rng, false);
  AttentionResult r = scaled_dot_attention(q, k, v);
  for (std::size_t i = 0; i < 2; ++i) {
    for (std::size_t c = 0; c < 5; ++c) {
      double mean = 0;
      for (std::size_t j = 0; j < 4; ++j) mean += v.at(j, c);
      mean /= 4;
      CHECK(r.output.at(i, c) == doctest::Approx(mean).epsilon(1e-12));
    }
  }
}

TEST_CASE("random case matches the straight-line oracle within 1e-12") {
  Rng rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    Tensor q = random_tensor({2, 2}, rng, false);
    Tensor k = random_tensor({2, 2}, rng, false);
    Tensor v = random_tensor({2, 2}, rng, false);
    AttentionResult r = scaled_dot_attention(q, k, v);
    const auto want = sdpa_oracle(q, k, v);
    for (std::size_t i = 0; i < want.size(); ++i)
      CHECK(std::fabs(r.output.at(i) - want[i]) < 1e-12);
  }
}

TEST_CASE("attention weight rows sum to one after masking") {
  Rng rng(4);
  Tensor q = random_tensor({3, 4}, rng, false);
  Tensor kv = random_tensor({5, 4}, rng, false);
  AttentionResult r =
      scaled_dot_attention(q, kv, kv, build_mixed_mask(3, 2));
  for (std::size_t i = 0; i < 3; ++i) {
    double s = 0;
    for (std::size_t j = 0; j < 5; ++j) s += r.weights.at(i, j);
    CHECK(std::fabs(s - 1.0) < 1e-9);
    // masked tail is exactly zero
    for (std::size_t j = i + 3; j < 5; ++j) CHECK(r.weights.at(i, j) == 0.0);
  }
}

TEST_CASE("attention shape and mask mismatches throw") {
  Rng rng(5);
  Tensor q = random_tensor({2, 4}, rng, false);
  Tensor k = random_tensor({3, 5}, rng, false);
  Tensor v = random_tensor({3, 4}, rng, false);
  CHECK_THROWS_AS(scaled_dot_attention(q, k, v), ShapeError);
  Tensor k2 = random_tensor({3, 4}, rng, false);
  Tensor v2 = random_tensor({2, 4}, rng, false);
  CHECK_THROWS_AS(scaled_dot_attention(q, k2, v2), ShapeError);
  CHECK_THROWS_AS(
      scaled_dot_attention(q, k2, k2, build_mixed_mask(2, 2)), ShapeError);
}

TEST_CASE("H=1 identity projections reduce MHA to scaled dot attention") {
  Rng rng(6);
  Tensor x = random_tensor({4, 6}, rng, false);
  HeadProjections proj = identity_projections(6);
  MhaResult mha = multi_head_attention(x, x, x, AttentionMask::none(), proj);
  AttentionResult plain = scaled_dot_attention(x, x, x);
  for (std::size_t i = 0; i < mha.output.numel(); ++i)
    CHECK(std::fabs(mha.output.at(i) - plain.output.at(i)) < 1e-12);
}

TEST_CASE("MHA output shape is rows x d_model for any head count") {
  Rng rng(7);
  ParamStore store(7);
  for (std::size_t heads : {1u, 2u, 4u}) {
    HeadProjections proj(store, "mha_h" + std::to_string(heads), 8, heads);
    Tensor q = random_tensor({5, 8}, rng, false);
    Tensor kv = random_tensor({3, 8}, rng, false);
    MhaResult r = multi_head_attention(q, kv, kv, AttentionMask::none(), proj);
    CHECK(r.output.rows() == 5);
    CHECK(r.output.cols() == 8);
  }
  CHECK_THROWS_AS(HeadProjections(store, "bad", 8, 3), ConfigError);
}

TEST_CASE("two-head MHA equals the manual per-head computation") {
  Rng rng(8);
  ParamStore store(8);
  HeadProjections proj(store, "mha", 4, 2);
  Tensor q = random_tensor({3, 4}, rng, false);
  Tensor kv = random_tensor({5, 4}, rng, false);
  MhaResult got = multi_head_attention(q, kv, kv, AttentionMask::none(), proj);

  // manual: project, split columns, attend per head, concat, project out
  NoGradGuard ng;
  Tensor qp = matmul(q, proj.wq), kp = matmul(kv, proj.wk),
         vp = matmul(kv, proj.wv);
  std::vector<Tensor> heads;
  for (std::size_t h = 0; h < 2; ++h) {
    heads.push_back(scaled_dot_attention(slice_cols(qp, h * 2, h * 2 + 2),
                                         slice_cols(kp, h * 2, h * 2 + 2),
                                         slice_cols(vp, h * 2, h * 2 + 2))
                        .output);
  }
  Tensor want = matmul(concat_cols(heads), proj.wo);
  for (std::size_t i = 0; i < want.numel(); ++i)
    CHECK(std::fabs(got.output.at(i) - want.at(i)) < 1e-12);
}

TEST_CASE("sma: perturbing T leaves the acoustic output bit-identical") {
  Rng rng(9);
  ParamStore store(9);
  SmaProjections proj(store, "sma", 8, 2);
  Tensor s = random_tensor({4, 8}, rng, false);
  Tensor t1 = random_tensor({3, 8}, rng, false);
  Tensor t2 = random_tensor({3, 8}, rng, false);
  JointStream out1 = sma_layer_attention({s, t1, 4, 3}, proj);
  JointStream out2 = sma_layer_attention({s, t2, 4, 3}, proj);
  for (std::size_t i = 0; i < out1.S.numel(); ++i)
    CHECK(out1.S.at(i) == out2.S.at(i));
}

TEST_CASE("sma causality: target row i ignores later target rows") {
  Rng rng(10);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 1 + rng.uniform_int(6), m = 1 + rng.uniform_int(6);
    ParamStore store(100 + trial);
    SmaProjections proj(store, "sma", 8, 2);
    Tensor s = random_tensor({n, 8}, rng, false);
    Tensor t = random_tensor({m, 8}, rng, false);
    JointStream base = sma_layer_attention({s, t, n, m}, proj);
    for (std::size_t i = 0; i < m; ++i) {
      Tensor t_pert = Tensor::from(t.shape(), t.data());
      for (std::size_t r = i + 1; r < m; ++r)
        for (std::size_t c = 0; c < 8; ++c)
          t_pert.mutable_data()[r * 8 + c] += rng.normal();
      JointStream pert = sma_layer_attention({s, t_pert, n, m}, proj);
      for (std::size_t c = 0; c < 8; ++c)
        CHECK(pert.T.at(i, c) == doctest::Approx(base.T.at(i, c)).epsilon(1e-12));
    }
  }
}

TEST_CASE("sma rejects empty blocks") {
  Rng rng(11);
  ParamStore store(11);
  SmaProjections proj(store, "sma", 4, 1);
  Tensor s = random_tensor({2, 4}, rng, false);
  Tensor t = random_tensor({2, 4}, rng, false);
  Tensor empty = Tensor::zeros({0, 4});
  CHECK_THROWS_AS(sma_layer_attention({empty, t, 0, 2}, proj), ConfigError);
}

TEST_CASE("degenerate n=0: mixed attention equals masked self-attention") {
  // With no acoustic block, MixedAtt over Concat(S,T)=T under the j<=i+0
  // mask must reproduce plain causal self-attention with the same weights.
  Rng rng(12);
  ParamStore store(12);
  HeadProjections proj(store, "mixed", 8, 2);
  Tensor t = random_tensor({5, 8}, rng, false);
  MhaResult mixed =
      multi_head_attention(t, t, t, build_mixed_mask(5, 0), proj);
  MhaResult causal =
      multi_head_attention(t, t, t, build_mixed_mask(5, 0), proj);
  // same call twice is trivially equal; the real check: build the mask by
  // hand as a [5x5] lower-triangular causal mask
  std::vector<double> tri(25, 0.0);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = i + 1; j < 5; ++j) tri[i * 5 + j] = -kInf;
  AttentionMask hand;
  hand.kind = MaskKind::mixed_causal;
  hand.matrix = Tensor::from({5, 5}, tri);
  MhaResult hand_r = multi_head_attention(t, t, t, hand, proj);
  for (std::size_t i = 0; i < mixed.output.numel(); ++i) {
    CHECK(std::fabs(mixed.output.at(i) - hand_r.output.at(i)) < 1e-12);
    CHECK(std::fabs(causal.output.at(i) - hand_r.output.at(i)) < 1e-12);
  }
}

TEST_CASE("padding mask blocks trailing key columns") {
  Rng rng(13);
  Tensor q = random_tensor({2, 4}, rng, false);
  Tensor kv = random_tensor({5, 4}, rng, false);
  AttentionResult r =
      scaled_dot_attention(q, kv, kv, AttentionMask::padding(2, 5, 3));
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(r.weights.at(i, 3) == 0.0);
    CHECK(r.weights.at(i, 4) == 0.0);
  }
}

TEST_CASE("attention gradients flow through MHA") {
  Rng rng(14);
  ParamStore store(14);
  HeadProjections proj(store, "mha", 6, 2);
  Tensor q = random_tensor({3, 6}, rng);
  Tensor kv = random_tensor({4, 6}, rng);
  const double err = testutil::max_grad_error(
      [&] {
        return sum_all(multi_head_attention(q, kv, kv,
                                            build_mixed_mask(3, 1), proj)
                           .output);
      },
      {q, kv, proj.wq, proj.wk, proj.wv, proj.wo});
  CHECK(err < 1e-5);
}
