// Copyright (c) 2026 the capgan authors
// SPDX-License-Identifier: Apache-2.0

#include "capgan/nn.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace capgan {

namespace {

Tensor gate_preact(const Tensor& x, const Tensor& w, const Tensor& h, const Tensor& u,
                   const Tensor& b) {
  Tensor pre = add(matmul(x, w), matmul(h, u));
  return add(pre, broadcast_rows(b, pre.shape()[0]));
}

}  // namespace

Tensor gru_step(const GruCellParams& params, const Tensor& input, const Tensor& state) {
  if (input.shape().size() != 2 || state.shape().size() != 2 ||
      input.shape()[1] != params.input_dim() || state.shape()[1] != params.hidden_dim() ||
      input.shape()[0] != state.shape()[0]) {
    throw std::invalid_argument("gru_step: input " + shape_str(input.shape()) + " and state " +
                                shape_str(state.shape()) + " do not fit cell " +
                                std::to_string(params.input_dim()) + " -> " +
                                std::to_string(params.hidden_dim()));
  }
  Tensor z = sigmoid(gate_preact(input, params.w_update, state, params.u_update, params.b_update));
  Tensor r = sigmoid(gate_preact(input, params.w_reset, state, params.u_reset, params.b_reset));
  Tensor cand = tanh(gate_preact(input, params.w_cand, multiply(r, state), params.u_cand,
                                 params.b_cand));
  Tensor keep = subtract(Tensor::full(z.shape(), 1.0), z);
  return add(multiply(keep, state), multiply(z, cand));
}

Tensor embed_tokens(const EmbeddingTable& emb, const std::vector<int>& ids) {
  return gather_rows(emb.table, ids);
}

Tensor embed_distribution(const EmbeddingTable& emb, const Tensor& p) {
  if (p.shape().size() != 2 || p.shape()[1] != emb.vocab_size()) {
    throw std::invalid_argument("embed_distribution: rows " + shape_str(p.shape()) +
                                " do not match vocabulary of " +
                                std::to_string(emb.vocab_size()));
  }
  for (std::size_t i = 0; i < p.shape()[0]; ++i) {
    double total = 0.0;
    for (std::size_t j = 0; j < p.shape()[1]; ++j) {
      const double v = p.at(i, j);
      if (v < 0.0) {
        throw std::invalid_argument("embed_distribution: negative probability at row " +
                                    std::to_string(i));
      }
      total += v;
    }
    if (std::abs(total - 1.0) > 1e-5) {
      throw std::invalid_argument("embed_distribution: row " + std::to_string(i) +
                                  " sums to " + std::to_string(total));
    }
  }
  return matmul(p, emb.table);
}

Tensor attention_fuse(const AttentionParams& att, const Tensor& h, const Tensor& images) {
  return multiply(h, matmul(images, att.w_img));
}

Tensor dropout_apply(const DropoutSpec& spec, DropoutSite site, const Tensor& x, Rng& rng) {
  const double p = spec.rate(site);
  if (p < 0.0 || p >= 1.0) {
    throw std::invalid_argument("dropout_apply: rate " + std::to_string(p) +
                                " outside [0, 1)");
  }
  if (!spec.active || p == 0.0) return x;
  const double scale = 1.0 / (1.0 - p);
  std::vector<double> mask(x.size());
  for (auto& m : mask) m = rng.uniform01() < p ? 0.0 : scale;
  return multiply(x, Tensor(x.shape(), std::move(mask)));
}

Tensor linear(const Tensor& w, const Tensor& x, const std::optional<Tensor>& bias) {
  Tensor out = matmul(x, w);
  if (bias) out = add(out, broadcast_rows(*bias, out.shape()[0]));
  return out;
}

Tensor glorot_uniform(std::size_t rows, std::size_t cols, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(rows + cols));
  std::vector<double> v(rows * cols);
  for (auto& x : v) x = rng.uniform(-bound, bound);
  return Tensor({rows, cols}, std::move(v));
}

Tensor uniform_init(Shape shape, double scale, Rng& rng) {
  std::vector<double> v(shape_count(shape));
  for (auto& x : v) x = rng.uniform(-scale, scale);
  return Tensor(std::move(shape), std::move(v));
}

GruCellParams make_gru(std::size_t d_in, std::size_t d_h, Rng& rng) {
  GruCellParams p;
  p.w_update = glorot_uniform(d_in, d_h, rng);
  p.w_reset = glorot_uniform(d_in, d_h, rng);
  p.w_cand = glorot_uniform(d_in, d_h, rng);
  p.u_update = glorot_uniform(d_h, d_h, rng);
  p.u_reset = glorot_uniform(d_h, d_h, rng);
  p.u_cand = glorot_uniform(d_h, d_h, rng);
  p.b_update = Tensor::zeros({d_h});
  p.b_reset = Tensor::zeros({d_h});
  p.b_cand = Tensor::zeros({d_h});
  return p;
}

AttentionParams make_attention(std::size_t d_img, std::size_t d_h, Rng& rng) {
  return AttentionParams{glorot_uniform(d_img, d_h, rng)};
}

EmbeddingTable make_embedding(std::size_t vocab_size, std::size_t d_emb, Rng& rng, bool frozen,
                              double scale) {
  return EmbeddingTable{uniform_init({vocab_size, d_emb}, scale, rng), frozen};
}

EmbeddingTable load_glove(const std::string& path, const std::vector<std::string>& tokens,
                          std::size_t d_emb, Rng& rng, bool frozen) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("load_glove: cannot open " + path);

  std::unordered_map<std::string, std::size_t> wanted;
  for (std::size_t i = 0; i < tokens.size(); ++i) wanted.emplace(tokens[i], i);

  std::vector<double> table(tokens.size() * d_emb);
  for (auto& x : table) x = rng.uniform(-0.1, 0.1);

  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string token;
    ls >> token;
    auto it = wanted.find(token);
    if (it == wanted.end()) continue;
    for (std::size_t j = 0; j < d_emb; ++j) {
      if (!(ls >> table[it->second * d_emb + j])) {
        throw std::invalid_argument("load_glove: line " + std::to_string(line_no) +
                                    " has fewer than " + std::to_string(d_emb) + " values");
      }
    }
  }
  return EmbeddingTable{Tensor({tokens.size(), d_emb}, std::move(table)), frozen};
}

}  // namespace capgan
