// Copyright (c) 2026 the capgan authors
// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "capgan/autograd.hpp"
#include "capgan/rng.hpp"

using namespace capgan;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double lo = -2.0, double hi = 2.0) {
  std::vector<double> v(shape_count(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor(std::move(shape), std::move(v));
}

}  // namespace

TEST_CASE("matmul identity and hand-checked product") {
  Tensor a({2, 2}, {1, 2, 3, 4});
  Tensor eye({2, 2}, {1, 0, 0, 1});
  Tensor r = matmul(a, eye);
  CHECK(same_values(r, a));

  Tensor row({1, 2}, {1, 2});
  Tensor col({2, 1}, {3, 4});
  Tensor p = matmul(row, col);
  CHECK(p.shape() == Shape{1, 1});
  CHECK(p.item() == 11.0);
}

TEST_CASE("shape mismatch errors name the operator and both shapes") {
  Tensor a({2, 3}, std::vector<double>(6, 1.0));
  Tensor b({2, 2}, std::vector<double>(4, 1.0));
  CHECK_THROWS_WITH_AS(matmul(a, b), doctest::Contains("matmul"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(add(a, b), doctest::Contains("[2 x 3]"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(add(a, b), doctest::Contains("[2 x 2]"), std::invalid_argument);
}

TEST_CASE("log rejects non-positive input") {
  Tensor a({2}, {1.0, -0.5});
  CHECK_THROWS_AS(log(a), std::domain_error);
  CHECK_THROWS_AS(log(Tensor::scalar(0.0)), std::domain_error);
}

TEST_CASE("exp overflow is surfaced, not propagated") {
  CHECK_THROWS_AS(exp(Tensor::scalar(1e4)), std::runtime_error);
}

TEST_CASE("softmax symmetry and stability") {
  Tensor u = softmax(Tensor({3}, {0, 0, 0}));
  for (std::size_t i = 0; i < 3; ++i) CHECK(u.at(i) == doctest::Approx(1.0 / 3).epsilon(1e-12));

  Tensor big = softmax(Tensor({2}, {1000, 1000}));
  CHECK(big.at(0) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(big.at(1) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("softmax rows are normalized for large magnitudes") {
  Rng rng(7);
  for (int it = 0; it < 20; ++it) {
    Tensor x = random_tensor({4, 9}, rng, -1e4, 1e4);
    Tensor s = softmax(x);
    for (std::size_t i = 0; i < 4; ++i) {
      double total = 0.0;
      for (std::size_t j = 0; j < 9; ++j) {
        CHECK(s.at(i, j) >= 0.0);
        total += s.at(i, j);
      }
      CHECK(total == doctest::Approx(1.0).epsilon(1e-6));
    }
  }
}

TEST_CASE("grad of x squared and of sigmoid") {
  DiffRecord rec;
  RecordScope scope(rec);
  Tensor x = rec.leaf(Tensor::scalar(3.0));
  Tensor y = multiply(x, x);
  Tensor g = grad(y, {x})[0];
  CHECK(g.item() == doctest::Approx(6.0).epsilon(1e-12));

  Tensor z = rec.leaf(Tensor::scalar(0.0));
  Tensor s = sum(sigmoid(z));
  Tensor gs = grad(s, {z})[0];
  CHECK(gs.item() == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("grad contract failures") {
  DiffRecord rec;
  RecordScope scope(rec);
  Tensor x = rec.leaf(Tensor({2}, {1, 2}));
  Tensor y = multiply(x, x);  // not scalar
  CHECK_THROWS_AS(grad(y, {x}), std::invalid_argument);

  DiffRecord other;
  Tensor foreign = other.leaf(Tensor::scalar(1.0));
  Tensor root = sum(y);
  CHECK_THROWS_AS(grad(root, {foreign}), std::invalid_argument);
  CHECK_THROWS_AS(grad(root, {Tensor::scalar(1.0)}), std::invalid_argument);
}

TEST_CASE("disconnected leaves get zero gradients") {
  DiffRecord rec;
  RecordScope scope(rec);
  Tensor x = rec.leaf(Tensor::scalar(2.0));
  Tensor unused = rec.leaf(Tensor({2, 2}, {1, 2, 3, 4}));
  Tensor y = multiply(x, x);
  auto gs = grad(y, {x, unused});
  CHECK(gs[0].item() == doctest::Approx(4.0));
  CHECK(gs[1].shape() == Shape{2, 2});
  for (std::size_t i = 0; i < 4; ++i) CHECK(gs[1].at(i) == 0.0);
}

TEST_CASE("backward of sum over concat is all ones") {
  DiffRecord rec;
  RecordScope scope(rec);
  Tensor a = rec.leaf(Tensor({2, 2}, {1, 2, 3, 4}));
  Tensor b = rec.leaf(Tensor({2, 3}, {5, 6, 7, 8, 9, 10}));
  Tensor y = sum(concat(a, b));
  auto gs = grad(y, {a, b});
  for (std::size_t i = 0; i < gs[0].size(); ++i) CHECK(gs[0].at(i) == 1.0);
  for (std::size_t i = 0; i < gs[1].size(); ++i) CHECK(gs[1].at(i) == 1.0);
}

TEST_CASE("grad_check on a cubic is nearly exact") {
  auto f = [](const Tensor& x) { return multiply(multiply(x, x), x); };
  double err = grad_check(f, Tensor::scalar(2.0));
  CHECK(err < 1e-8);
}

TEST_CASE("second derivative of x cubed via grad of grad") {
  DiffRecord rec;
  RecordScope scope(rec);
  Tensor x = rec.leaf(Tensor::scalar(2.0));
  Tensor y = multiply(multiply(x, x), x);
  Tensor g = grad(y, {x}, /*create_record=*/true)[0];
  CHECK(g.item() == doctest::Approx(12.0).epsilon(1e-12));
  Tensor gg = grad(sum(g), {x})[0];
  CHECK(gg.item() == doctest::Approx(12.0).epsilon(1e-12));
}

TEST_CASE("grad_check on a small two-layer tanh network") {
  Rng rng(11);
  // 50 parameters: W1 is 4 x 6, W2 is 6 x 1, bias 2 slots folded into theta.
  Tensor theta = random_tensor({50}, rng, -1.0, 1.0);
  Tensor x0 = random_tensor({3, 4}, rng);
  auto f = [x0](const Tensor& th) {
    Tensor w1 = reshape(slice(th, 0, 24), {4, 6});
    Tensor w2 = reshape(slice(th, 24, 30), {6, 1});
    Tensor b1 = slice(th, 30, 36);
    Tensor rest = slice(th, 36, 50);
    Tensor h = tanh(add(matmul(x0, w1), broadcast_rows(b1, 3)));
    Tensor out = tanh(matmul(h, w2));
    return add(sum(out), multiply(sum(rest), Tensor::scalar(0.1)));
  };
  CHECK(grad_check(f, theta) < 1e-4);
}

TEST_CASE("every primitive passes a finite-difference check on random input") {
  Rng rng(23);
  for (int it = 0; it < 3; ++it) {
    Tensor a = random_tensor({3, 4}, rng);
    Tensor b = random_tensor({3, 4}, rng);
    Tensor m = random_tensor({4, 2}, rng);
    Tensor pos = random_tensor({3, 4}, rng, 0.5, 2.0);
    Tensor weight = random_tensor({3, 4}, rng);
    Tensor w32 = random_tensor({3, 2}, rng);
    Tensor w38 = random_tensor({3, 8}, rng);
    Tensor w43 = random_tensor({4, 3}, rng);
    Tensor w31 = random_tensor({3, 1}, rng);
    Tensor w4 = random_tensor({4}, rng);
    Tensor w54 = random_tensor({5, 4}, rng);
    Tensor w35 = random_tensor({3, 5}, rng);
    Tensor w23 = random_tensor({2, 3}, rng);
    Tensor v4 = random_tensor({4}, rng);
    Tensor v31 = random_tensor({3, 1}, rng);

    auto check = [&](auto&& fn, const Tensor& at) { CHECK(grad_check(fn, at) < 1e-4); };

    check([&](const Tensor& t) { return sum(multiply(add(t, b), weight)); }, a);
    check([&](const Tensor& t) { return sum(multiply(subtract(t, b), weight)); }, a);
    check([&](const Tensor& t) { return sum(multiply(multiply(t, b), weight)); }, a);
    check([&](const Tensor& t) { return sum(scalar_multiply(t, -1.7)); }, a);
    check([&](const Tensor& t) { return sum(multiply(matmul(t, m), w32)); }, a);
    check([&](const Tensor& t) { return sum(multiply(sigmoid(t), weight)); }, a);
    check([&](const Tensor& t) { return sum(multiply(tanh(t), weight)); }, a);
    check([&](const Tensor& t) { return sum(multiply(exp(t), weight)); }, a);
    check([&](const Tensor& t) { return sum(multiply(log(t), weight)); }, pos);
    check([&](const Tensor& t) { return sum(multiply(log_sigmoid(t), weight)); }, a);
    check([&](const Tensor& t) { return sum(multiply(sqrt(t), weight)); }, pos);
    check([&](const Tensor& t) { return sum(multiply(reciprocal(t), weight)); }, pos);
    check([&](const Tensor& t) { return mean(multiply(t, weight)); }, a);
    check([&](const Tensor& t) { return l2_norm(t); }, pos);
    check([&](const Tensor& t) { return sum(multiply(softmax(t), weight)); }, a);
    check([&](const Tensor& t) { return sum(multiply(concat(t, b), w38)); }, a);
    check([&](const Tensor& t) { return sum(multiply(slice(t, 1, 3), w32)); }, a);
    check([&](const Tensor& t) { return sum(multiply(transpose(t), w43)); }, a);
    check([&](const Tensor& t) { return sum(multiply(row_sum(t), w31)); }, a);
    check([&](const Tensor& t) { return sum(multiply(col_sum(t), w4)); }, a);
    check([&](const Tensor& t) { return sum(multiply(reshape(t, {4, 3}), w43)); }, a);
    check([&](const Tensor& t) { return sum(multiply(broadcast_rows(t, 5), w54)); }, v4);
    check([&](const Tensor& t) { return sum(multiply(col_broadcast(t, 5), w35)); }, v31);
    check([&](const Tensor& t) { return sum(multiply(scalar_broadcast(t, {2, 3}), w23)); },
          Tensor::scalar(rng.uniform(-1, 1)));
    check([&](const Tensor& t) { return sum(multiply(gather_rows(t, {0, 2, 2}), weight)); }, a);
    check([&](const Tensor& t) { return sum(multiply(scatter_rows(t, {1, 3, 1}, 5), w54)); }, a);
    check([&](const Tensor& t) { return sum(multiply(divide(t, pos), weight)); }, a);
  }
}

TEST_CASE("second-order: gradient-norm-squared of a parameterized map") {
  Rng rng(31);
  Tensor x0 = random_tensor({2, 3}, rng);
  Tensor w0 = random_tensor({3, 2}, rng);
  auto gfun = [x0](const Tensor& w) -> Tensor {
    if (w.recorded()) {
      RecordScope scope(*w.record());
      Tensor xl = w.record()->leaf(x0);
      Tensor y = sum(tanh(matmul(xl, w)));
      Tensor gx = grad(y, {xl}, /*create_record=*/true)[0];
      return sum(multiply(gx, gx));
    }
    DiffRecord local;
    RecordScope scope(local);
    Tensor xl = local.leaf(x0);
    Tensor y = sum(tanh(matmul(xl, w)));
    Tensor gx = grad(y, {xl})[0];
    return Tensor::scalar(sum(multiply(gx, gx)).item());
  };
  CHECK(grad_check(gfun, w0) < 1e-3);
}

TEST_CASE("gradients can flow through gradients of elementwise chains") {
  // d/dx of (d/dx sigma(x))  =  sigma''(x)
  DiffRecord rec;
  RecordScope scope(rec);
  Tensor x = rec.leaf(Tensor::scalar(0.7));
  Tensor y = sum(sigmoid(x));
  Tensor g = grad(y, {x}, true)[0];
  Tensor gg = grad(sum(g), {x})[0];
  const double s = 1.0 / (1.0 + std::exp(-0.7));
  const double expected = s * (1 - s) * (1 - 2 * s);
  CHECK(gg.item() == doctest::Approx(expected).epsilon(1e-10));
}

TEST_CASE("tensor invariants") {
  CHECK_THROWS_AS(Tensor({2, 3}, {1, 2, 3}), std::invalid_argument);
  Tensor t({2, 2}, {1, 2, 3, 4});
  CHECK(t.at(1, 0) == 3.0);
  CHECK(shape_count(t.shape()) == t.size());
}
