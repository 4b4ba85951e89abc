// SPDX-License-Identifier: Apache-2.0
#include <catch_amalgamated.hpp>

#include <cmath>
#include <sstream>

#include "sessrec/tensor.hpp"

using namespace sessrec;
using Catch::Matchers::WithinAbs;

TEST_CASE("affine with identity input returns W") {
  Matrix x(2, 2, {1, 0, 0, 1});
  Matrix w(2, 2, {1, 2, 3, 4});
  std::vector<double> b{0, 0};
  CHECK(affine(x, w, b) == w);
}

TEST_CASE("affine with zero input returns the bias in every row") {
  Matrix x(3, 2);
  Matrix w(2, 4, 1.5);
  std::vector<double> b{1, -2, 3, 0.25};
  const Matrix out = affine(x, w, b);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 4; ++j) CHECK(out(i, j) == b[j]);
}

TEST_CASE("affine matches a triple loop") {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 1 + rng.below(5), k = 1 + rng.below(6), m = 1 + rng.below(4);
    Matrix x(n, k), w(k, m);
    std::vector<double> b(m);
    for (double& v : x.flat()) v = rng.uniform(-2, 2);
    for (double& v : w.flat()) v = rng.uniform(-2, 2);
    for (double& v : b) v = rng.uniform(-2, 2);
    const Matrix out = affine(x, w, b);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) {
        double s = b[j];
        for (std::size_t q = 0; q < k; ++q) s += x(i, q) * w(q, j);
        CHECK_THAT(out(i, j), WithinAbs(s, 1e-12));
      }
  }
}

TEST_CASE("affine rejects mismatched shapes") {
  std::vector<double> b(2);
  CHECK_THROWS_AS(affine(Matrix(2, 3), Matrix(2, 2), b), ShapeError);
  std::vector<double> b3(3);
  CHECK_THROWS_AS(affine(Matrix(2, 2), Matrix(2, 2), b3), ShapeError);
}

TEST_CASE("activations") {
  CHECK(apply_activation(Matrix(1, 1, 0.0), Activation::kSigmoid)(0, 0) == 0.5);
  CHECK(apply_activation(Matrix(1, 1, 0.0), Activation::kTanh)(0, 0) == 0.0);
  CHECK_THAT(apply_activation(Matrix(1, 1, 1.0), Activation::kTanh)(0, 0),
             WithinAbs(0.76159415595576488812, 1e-15));
  const Matrix s = apply_activation(Matrix(1, 3, 0.0), Activation::kSoftmaxRow);
  for (double v : s.flat()) CHECK_THAT(v, WithinAbs(1.0 / 3.0, 1e-15));
  const Matrix id = apply_activation(Matrix(1, 2, {3.0, -1.0}), Activation::kIdentity);
  CHECK(id == Matrix(1, 2, {3.0, -1.0}));
}

TEST_CASE("sigmoid is stable at extreme inputs") {
  CHECK(sigmoid(-800.0) >= 0.0);
  CHECK(sigmoid(800.0) == 1.0);
  CHECK(std::isfinite(sigmoid(-800.0)));
}

TEST_CASE("softmax rows sum to one and ignore constant shifts") {
  Rng rng(9);
  Matrix x(4, 7);
  for (double& v : x.flat()) v = rng.uniform(-30, 30);
  Matrix shifted = x;
  for (double& v : shifted.flat()) v += 123.0;
  const Matrix a = apply_activation(x, Activation::kSoftmaxRow);
  const Matrix b = apply_activation(shifted, Activation::kSoftmaxRow);
  for (std::size_t i = 0; i < 4; ++i) {
    double sum = 0;
    for (double v : a.row(i)) sum += v;
    CHECK_THAT(sum, WithinAbs(1.0, 1e-12));
    for (std::size_t j = 0; j < 7; ++j) CHECK_THAT(a(i, j), WithinAbs(b(i, j), 1e-12));
  }
}

TEST_CASE("dropout is the identity when inactive") {
  Rng rng(1);
  Matrix x(3, 3, 2.0);
  CHECK(dropout(x, 0.0, rng, true) == x);
  CHECK(dropout(x, 0.7, rng, false) == x);
  CHECK_THROWS(dropout(x, 1.0, rng, true));
}

TEST_CASE("dropout keeps half the units and preserves the mean") {
  Rng rng(2024);
  Matrix x(1, 100000, 1.0);
  const Matrix y = dropout(x, 0.5, rng, true);
  double kept = 0, sum = 0;
  for (double v : y.flat()) {
    kept += v != 0.0;
    sum += v;
  }
  CHECK_THAT(kept / 1e5, WithinAbs(0.5, 0.01));
  CHECK_THAT(sum / 1e5, WithinAbs(1.0, 0.02));
}

TEST_CASE("same seed gives identical streams and masks") {
  Rng a(77), b(77);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
  Rng c(3), d(3);
  CHECK(dropout_mask(50, 0.3, c, true) == dropout_mask(50, 0.3, d, true));
  Rng e(3), f(3);
  CHECK(init_uniform(e, 5, 4) == init_uniform(f, 5, 4));
  CHECK(Rng::derive(1, 0).next_u64() != Rng::derive(1, 1).next_u64());
}

TEST_CASE("init_uniform stays inside the bound") {
  Rng rng(4);
  const Matrix w = init_uniform(rng, 10, 6);
  const double bound = std::sqrt(6.0 / 16.0);
  for (double v : w.flat()) CHECK(std::abs(v) <= bound);
}

TEST_CASE("adagrad with zero gradient and zero velocity leaves params") {
  Matrix p(2, 2, {1, 2, 3, 4});
  const Matrix before = p;
  OptState st(p);
  adagrad_momentum_step(p, Matrix(2, 2), st, OptimizerConfig{0.1, 0.5, 1e-6});
  CHECK(p == before);
}

TEST_CASE("first adagrad step has magnitude about lr") {
  Matrix p(1, 3, 0.0);
  Matrix g(1, 3, {0.3, -7.0, 1e-3});
  OptState st(p);
  adagrad_momentum_step(p, g, st, OptimizerConfig{0.1, 0.0, 1e-6});
  for (std::size_t j = 0; j < 3; ++j) CHECK_THAT(p(0, j), WithinAbs(-0.1 * g(0, j) / (std::abs(g(0, j)) + 1e-6), 1e-15));
}

TEST_CASE("two adagrad-momentum steps match a scalar recurrence") {
  Matrix p(1, 1, 0.0);
  OptState st(p);
  const OptimizerConfig cfg{0.1, 0.1, 1e-6};
  for (int i = 0; i < 2; ++i) adagrad_momentum_step(p, Matrix(1, 1, 1.0), st, cfg);
  // step 1: acc 1, v1 = 0.1/(1+1e-6); step 2: acc 2, v2 = 0.1*v1 + 0.1/(sqrt2+1e-6)
  const double v1 = 0.1 / (1.0 + 1e-6);
  const double v2 = 0.1 * v1 + 0.1 / (std::sqrt(2.0) + 1e-6);
  CHECK_THAT(p(0, 0), WithinAbs(-(v1 + v2), 1e-15));
  CHECK(st.accum(0, 0) == 2.0);
}

TEST_CASE("adagrad accumulator never decreases") {
  Rng rng(8);
  Matrix p(3, 3);
  OptState st(p);
  Matrix prev = st.accum;
  for (int i = 0; i < 20; ++i) {
    Matrix g(3, 3);
    for (double& v : g.flat()) v = rng.uniform(-1, 1);
    adagrad_momentum_step(p, g, st, OptimizerConfig{});
    for (std::size_t k = 0; k < 9; ++k) CHECK(st.accum.flat()[k] >= prev.flat()[k]);
    prev = st.accum;
  }
}

TEST_CASE("row-restricted adagrad only touches listed rows") {
  Matrix p(3, 2, 1.0), g(3, 2, 1.0);
  OptState st(p);
  std::vector<std::size_t> rows{1};
  adagrad_momentum_step_rows(p, g, st, OptimizerConfig{}, rows);
  CHECK(p(0, 0) == 1.0);
  CHECK(p(2, 1) == 1.0);
  CHECK(p(1, 0) < 1.0);
}

TEST_CASE("matrix serialization round-trips bit-exactly") {
  Rng rng(6);
  Matrix m(3, 5);
  for (double& v : m.flat()) v = rng.uniform(-1e6, 1e6);
  m(0, 0) = -0.0;
  std::stringstream ss;
  write_matrix(ss, m);
  CHECK(ss.str().size() == 16 + 15 * 8);
  const Matrix back = read_matrix(ss);
  CHECK(back == m);
  CHECK(std::signbit(back(0, 0)));
  std::stringstream truncated(ss.str().substr(0, 20));
  CHECK_THROWS(read_matrix(truncated));
}
