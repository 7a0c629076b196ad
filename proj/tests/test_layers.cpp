// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>

#include "smad/layers.hpp"
#include "smad/param_store.hpp"
#include "testutil.hpp"

using namespace smad;
using testutil::max_grad_error;
using testutil::random_tensor;

TEST_CASE("param store enforces unique names and counts elements") {
  ParamStore store(1);
  store.create("a.w", {2, 3}, Init::xavier_uniform);
  store.create("a.b", {3}, Init::zeros);
  CHECK_THROWS_AS(store.create("a.w", {1}, Init::zeros), ConfigError);
  CHECK(store.count() == 2);
  CHECK(store.total_elements() == 9);
}

TEST_CASE("param store init kinds") {
  ParamStore store(7);
  Tensor ones = store.create("ones", {4}, Init::ones);
  for (std::size_t i = 0; i < 4; ++i) CHECK(ones.at(i) == 1.0);
  Tensor xav = store.create("xav", {16, 16}, Init::xavier_uniform);
  const double limit = std::sqrt(6.0 / 32.0);
  bool nonzero = false;
  for (std::size_t i = 0; i < xav.numel(); ++i) {
    CHECK(std::fabs(xav.at(i)) <= limit);
    nonzero |= xav.at(i) != 0.0;
  }
  CHECK(nonzero);
}

TEST_CASE("checkpoint round-trip is bit-exact") {
  const auto path = std::filesystem::temp_directory_path() / "smad_ckpt_test.bin";
  ParamStore a(3);
  a.create("layer.w", {5, 4}, Init::xavier_uniform);
  a.create("layer.b", {4}, Init::xavier_uniform);
  a.save(path);

  ParamStore b(99);  // different seed -> different init values
  b.create("layer.w", {5, 4}, Init::xavier_uniform);
  b.create("layer.b", {4}, Init::xavier_uniform);
  b.load(path);
  for (std::size_t p = 0; p < 2; ++p) {
    const auto& ta = a.params()[p].tensor;
    const auto& tb = b.params()[p].tensor;
    REQUIRE(ta.numel() == tb.numel());
    for (std::size_t i = 0; i < ta.numel(); ++i) CHECK(ta.at(i) == tb.at(i));
  }
  std::filesystem::remove(path);
}

TEST_CASE("checkpoint load rejects mismatched models") {
  const auto path = std::filesystem::temp_directory_path() / "smad_ckpt_bad.bin";
  ParamStore a(3);
  a.create("w", {2, 2}, Init::xavier_uniform);
  a.save(path);

  ParamStore wrong_shape(3);
  wrong_shape.create("w", {2, 3}, Init::zeros);
  CHECK_THROWS_AS(wrong_shape.load(path), DataError);

  ParamStore wrong_name(3);
  wrong_name.create("v", {2, 2}, Init::zeros);
  CHECK_THROWS_AS(wrong_name.load(path), DataError);
  std::filesystem::remove(path);
}

TEST_CASE("count-only store records shapes without payloads") {
  ParamStore store(1, /*count_only=*/true);
  store.create("w", {100, 200}, Init::xavier_uniform);
  CHECK(store.total_elements() == 20000);
  CHECK_THROWS_AS(store.zero_grad(), UsageError);
}

TEST_CASE("linear layer forward and gradient") {
  ParamStore store(5);
  Linear lin(store, "lin", 4, 3);
  Rng rng(2);
  Tensor x = random_tensor({2, 4}, rng);
  Tensor y = lin.forward(x);
  CHECK(y.rows() == 2);
  CHECK(y.cols() == 3);
  const double err = max_grad_error(
      [&] { return sum_all(lin.forward(x)); }, {x, lin.w, lin.b});
  CHECK(err < 1e-6);
}

TEST_CASE("ffn applies rectifier between the two linears") {
  ParamStore store(6);
  Ffn ffn(store, "ffn", 3, 5);
  Rng rng(3);
  Tensor x = random_tensor({2, 3}, rng);
  const double err = max_grad_error(
      [&] { return sum_all(ffn.forward(x)); }, {x, ffn.fc1.w, ffn.fc2.w});
  CHECK(err < 1e-5);
}

TEST_CASE("conv layer halves time and rectifies") {
  ParamStore store(8);
  ConvLayer conv(store, "conv", 1, 4);
  Rng rng(4);
  Tensor x = random_tensor({10, 6, 1}, rng, false);
  Tensor y = conv.forward(x);
  CHECK(y.dim(0) == 5);
  CHECK(y.dim(1) == 3);
  CHECK(y.dim(2) == 4);
  for (std::size_t i = 0; i < y.numel(); ++i) CHECK(y.at(i) >= 0.0);
}
