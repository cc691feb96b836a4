// Copyright (c) 2026 the capgan authors
// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cstdio>
#include <fstream>

#include "capgan/nn.hpp"

using namespace capgan;

namespace {

GruCellParams zero_gru(std::size_t d_in, std::size_t d_h) {
  GruCellParams p;
  p.w_update = Tensor::zeros({d_in, d_h});
  p.w_reset = Tensor::zeros({d_in, d_h});
  p.w_cand = Tensor::zeros({d_in, d_h});
  p.u_update = Tensor::zeros({d_h, d_h});
  p.u_reset = Tensor::zeros({d_h, d_h});
  p.u_cand = Tensor::zeros({d_h, d_h});
  p.b_update = Tensor::zeros({d_h});
  p.b_reset = Tensor::zeros({d_h});
  p.b_cand = Tensor::zeros({d_h});
  return p;
}

}  // namespace

TEST_CASE("gru_step with zero parameters halves the state") {
  GruCellParams p = zero_gru(3, 2);
  Tensor x({2, 3}, {1, -2, 0.5, 3, 0, -1});
  Tensor h({2, 2}, {0.8, -0.4, 0.2, 1.0});
  Tensor out = gru_step(p, x, h);
  for (std::size_t i = 0; i < 4; ++i) CHECK(out.at(i) == doctest::Approx(0.5 * h.at(i)).epsilon(1e-15));

  Tensor hz = Tensor::zeros({2, 2});
  Tensor out0 = gru_step(p, x, hz);
  for (std::size_t i = 0; i < 4; ++i) CHECK(out0.at(i) == 0.0);
}

TEST_CASE("gru_step matches an independent straight-line transcription") {
  GruCellParams p;
  p.w_update = Tensor({3, 2}, {0.1, -0.2, 0.3, 0.05, -0.1, 0.2});
  p.w_reset = Tensor({3, 2}, {0.2, 0.1, -0.3, 0.15, 0.05, -0.25});
  p.w_cand = Tensor({3, 2}, {0.12, -0.08, 0.22, 0.18, -0.3, 0.1});
  p.u_update = Tensor({2, 2}, {0.05, 0.1, -0.15, 0.2});
  p.u_reset = Tensor({2, 2}, {0.3, -0.1, 0.12, 0.08});
  p.u_cand = Tensor({2, 2}, {-0.2, 0.25, 0.1, -0.05});
  p.b_update = Tensor({2}, {0.01, -0.02});
  p.b_reset = Tensor({2}, {0.03, 0.0});
  p.b_cand = Tensor({2}, {-0.01, 0.02});
  Tensor x({2, 3}, {0.5, -1.0, 0.25, -0.75, 0.4, 1.1});
  Tensor h({2, 2}, {0.2, -0.3, 0.0, 0.6});
  Tensor out = gru_step(p, x, h);
  const double expected[4] = {-0.01297399553349959, -0.22486029360850268,
                              -0.14171087250226258, 0.37911569465485084};
  for (std::size_t i = 0; i < 4; ++i) CHECK(out.at(i) == doctest::Approx(expected[i]).epsilon(1e-12));
}

TEST_CASE("gru_step output stays inside the interpolation bound") {
  Rng rng(5);
  GruCellParams p = make_gru(4, 3, rng);
  for (int it = 0; it < 20; ++it) {
    std::vector<double> xv(8), hv(6);
    for (auto& v : xv) v = rng.uniform(-3, 3);
    for (auto& v : hv) v = rng.uniform(-2, 2);
    Tensor x({2, 4}, xv);
    Tensor h({2, 3}, hv);
    Tensor out = gru_step(p, x, h);
    double hmax = 1.0;
    for (double v : hv) hmax = std::max(hmax, std::abs(v));
    for (std::size_t i = 0; i < out.size(); ++i) CHECK(std::abs(out.at(i)) <= hmax + 1e-12);
  }
}

TEST_CASE("gru_step rejects mismatched shapes") {
  GruCellParams p = zero_gru(3, 2);
  CHECK_THROWS_AS(gru_step(p, Tensor::zeros({2, 4}), Tensor::zeros({2, 2})), std::invalid_argument);
  CHECK_THROWS_AS(gru_step(p, Tensor::zeros({2, 3}), Tensor::zeros({3, 2})), std::invalid_argument);
}

TEST_CASE("embed_tokens basics") {
  Rng rng(3);
  EmbeddingTable emb = make_embedding(5, 4, rng);
  Tensor one = embed_tokens(emb, {2});
  for (std::size_t j = 0; j < 4; ++j) CHECK(one.at(0, j) == emb.table.at(2, j));

  Tensor empty = embed_tokens(emb, {});
  CHECK(empty.shape() == Shape{0, 4});

  Tensor twice = embed_tokens(emb, {3, 3});
  for (std::size_t j = 0; j < 4; ++j) CHECK(twice.at(0, j) == twice.at(1, j));

  CHECK_THROWS_AS(embed_tokens(emb, {5}), std::invalid_argument);
}

TEST_CASE("embed_distribution equals lookup on one-hot rows, bitwise") {
  Rng rng(9);
  EmbeddingTable emb = make_embedding(6, 3, rng);
  std::vector<int> ids = {4, 0, 5, 2};
  std::vector<double> p(ids.size() * 6, 0.0);
  for (std::size_t t = 0; t < ids.size(); ++t) p[t * 6 + ids[t]] = 1.0;
  Tensor mixed = embed_distribution(emb, Tensor({ids.size(), 6}, p));
  Tensor looked = embed_tokens(emb, ids);
  CHECK(same_values(mixed, looked));
}

TEST_CASE("embed_distribution linearity and brute-force oracle") {
  Rng rng(13);
  EmbeddingTable emb = make_embedding(5, 3, rng);
  std::vector<double> row(5, 0.0);
  row[1] = 0.5;
  row[4] = 0.5;
  Tensor mixed = embed_distribution(emb, Tensor({1, 5}, row));
  for (std::size_t j = 0; j < 3; ++j) {
    CHECK(mixed.at(0, j) == doctest::Approx((emb.table.at(1, j) + emb.table.at(4, j)) / 2)
                                .epsilon(1e-15));
  }

  // random simplex row vs an index-by-index weighted sum
  std::vector<double> w(5);
  double total = 0.0;
  for (auto& v : w) {
    v = rng.uniform(0.01, 1.0);
    total += v;
  }
  for (auto& v : w) v /= total;
  Tensor out = embed_distribution(emb, Tensor({1, 5}, w));
  for (std::size_t j = 0; j < 3; ++j) {
    double acc = 0.0;
    for (std::size_t v = 0; v < 5; ++v) acc += w[v] * emb.table.at(v, j);
    CHECK(out.at(0, j) == doctest::Approx(acc).epsilon(1e-12));
  }

  std::vector<double> bad(5, 0.3);
  CHECK_THROWS_AS(embed_distribution(emb, Tensor({1, 5}, bad)), std::invalid_argument);
}

TEST_CASE("attention_fuse annihilation, identity, and loop oracle") {
  Rng rng(17);
  AttentionParams att = make_attention(4, 3, rng);
  Tensor h({2, 3}, {1, 1, 1, 1, 1, 1});
  Tensor zero_img = Tensor::zeros({2, 4});
  Tensor v0 = attention_fuse(att, h, zero_img);
  for (std::size_t i = 0; i < v0.size(); ++i) CHECK(v0.at(i) == 0.0);

  std::vector<double> iv(8);
  for (auto& x : iv) x = rng.uniform(-1, 1);
  Tensor images({2, 4}, iv);
  Tensor ones_v = attention_fuse(att, h, images);
  Tensor proj = matmul(images, att.w_img);
  CHECK(same_values(ones_v, proj));

  std::vector<double> hv(6);
  for (auto& x : hv) x = rng.uniform(-1, 1);
  Tensor hr({2, 3}, hv);
  Tensor v = attention_fuse(att, hr, images);
  for (std::size_t i = 0; i < 2; ++i) {
    for (std::size_t j = 0; j < 3; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < 4; ++k) acc += images.at(i, k) * att.w_img.at(k, j);
      CHECK(v.at(i, j) == doctest::Approx(hr.at(i, j) * acc).epsilon(1e-12));
    }
  }
}

TEST_CASE("dropout identity cases") {
  Rng rng(1);
  Tensor x({3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
  DropoutSpec off{0.0, 0.0, true};
  CHECK(same_values(dropout_apply(off, DropoutSite::hidden, x, rng), x));

  DropoutSpec eval_mode{0.5, 0.5, false};
  CHECK(same_values(dropout_apply(eval_mode, DropoutSite::hidden, x, rng), x));
  CHECK(same_values(dropout_apply(eval_mode, DropoutSite::embedding, x, rng), x));
}

TEST_CASE("dropout keeps the expectation and the advertised zero fraction") {
  Rng rng(2026);
  const std::size_t n = 100000;
  Tensor ones = Tensor::full({n}, 1.0);
  DropoutSpec spec{0.0, 0.5, true};
  Tensor dropped = dropout_apply(spec, DropoutSite::hidden, ones, rng);
  double total = 0.0;
  std::size_t zeros = 0;
  for (std::size_t i = 0; i < n; ++i) {
    total += dropped.at(i);
    if (dropped.at(i) == 0.0) ++zeros;
  }
  CHECK(total / n == doctest::Approx(1.0).epsilon(0.02));
  CHECK(static_cast<double>(zeros) / n == doctest::Approx(0.5).epsilon(0.02));
}

TEST_CASE("linear identity, zero, and loop oracle") {
  Tensor x({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor eye({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  CHECK(same_values(linear(eye, x), x));

  Tensor zero = Tensor::zeros({3, 2});
  Tensor z = linear(zero, x);
  for (std::size_t i = 0; i < z.size(); ++i) CHECK(z.at(i) == 0.0);

  Rng rng(21);
  std::vector<double> wv(6), bv(2);
  for (auto& v : wv) v = rng.uniform(-1, 1);
  for (auto& v : bv) v = rng.uniform(-1, 1);
  Tensor w({3, 2}, wv);
  Tensor b({2}, bv);
  Tensor out = linear(w, x, b);
  for (std::size_t i = 0; i < 2; ++i) {
    for (std::size_t j = 0; j < 2; ++j) {
      double acc = bv[j];
      for (std::size_t k = 0; k < 3; ++k) acc += x.at(i, k) * w.at(k, j);
      CHECK(out.at(i, j) == doctest::Approx(acc).epsilon(1e-12));
    }
  }
}

TEST_CASE("layers are differentiable through their parameters") {
  Rng rng(77);
  Tensor x({2, 3}, {0.5, -1.0, 0.25, -0.75, 0.4, 1.1});
  Tensor h({2, 2}, {0.2, -0.3, 0.0, 0.6});
  GruCellParams base;
  {
    Rng wrng(8);
    base = make_gru(3, 2, wrng);
  }

  auto gru_loss_on = [&](Tensor GruCellParams::*member) {
    return [&, member](const Tensor& t) {
      GruCellParams p = base;
      p.*member = t;
      return sum(gru_step(p, x, h));
    };
  };
  CHECK(grad_check(gru_loss_on(&GruCellParams::w_update), base.w_update) < 1e-4);
  CHECK(grad_check(gru_loss_on(&GruCellParams::u_cand), base.u_cand) < 1e-4);
  CHECK(grad_check(gru_loss_on(&GruCellParams::b_reset), base.b_reset) < 1e-4);

  Tensor images({2, 4}, {0.3, -0.2, 0.9, 0.1, -0.5, 0.4, 0.2, -0.8});
  auto att_loss = [&](const Tensor& w) {
    return sum(attention_fuse(AttentionParams{w}, h, images));
  };
  CHECK(grad_check(att_loss, make_attention(4, 2, rng).w_img) < 1e-4);

  std::vector<double> pv = {0.2, 0.5, 0.3, 0.9, 0.05, 0.05};
  auto emb_loss = [&](const Tensor& table) {
    EmbeddingTable e{table, false};
    return sum(embed_distribution(e, Tensor({2, 3}, pv)));
  };
  CHECK(grad_check(emb_loss, make_embedding(3, 2, rng).table) < 1e-4);
}

TEST_CASE("glove reader fills known rows and randomizes the rest") {
  const char* path = "glove_test_rows.txt";
  {
    std::ofstream out(path);
    out << "apple 0.1 0.2 0.3\n";
    out << "banana -1 -2 -3\n";
    out << "pear 9 9 9\n";
  }
  Rng rng(4);
  EmbeddingTable emb = load_glove(path, {"banana", "cherry", "apple"}, 3, rng);
  CHECK(emb.frozen);
  CHECK(emb.table.at(0, 0) == -1.0);
  CHECK(emb.table.at(0, 2) == -3.0);
  CHECK(emb.table.at(2, 0) == 0.1);
  for (std::size_t j = 0; j < 3; ++j) {
    CHECK(std::abs(emb.table.at(1, j)) <= 0.1);  // missing token: small random
  }
  std::remove(path);

  CHECK_THROWS_AS(load_glove("no_such_glove_file.txt", {"a"}, 3, rng), std::invalid_argument);
}
