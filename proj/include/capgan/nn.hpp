// Copyright (c) 2026 the capgan authors
// SPDX-License-Identifier: Apache-2.0
//
// Parameterized layers shared by the generator and discriminator
// branches: embedding lookup/mixing, a standard gated recurrent cell,
// the element-wise image attention, dropout, and linear projection.
#pragma once

#include <optional>
#include <string>
#include <vector>

#include "capgan/autograd.hpp"
#include "capgan/rng.hpp"

namespace capgan {

struct EmbeddingTable {
  Tensor table;        // |V| x d_emb
  bool frozen = true;  // frozen tables are excluded from optimizer updates

  std::size_t vocab_size() const { return table.shape()[0]; }
  std::size_t dim() const { return table.shape()[1]; }
};

struct GruCellParams {
  Tensor w_update, w_reset, w_cand;  // d_in x d_h
  Tensor u_update, u_reset, u_cand;  // d_h x d_h
  Tensor b_update, b_reset, b_cand;  // d_h

  std::size_t input_dim() const { return w_update.shape()[0]; }
  std::size_t hidden_dim() const { return w_update.shape()[1]; }
};

struct AttentionParams {
  Tensor w_img;  // d_img x d_h

  std::size_t image_dim() const { return w_img.shape()[0]; }
  std::size_t hidden_dim() const { return w_img.shape()[1]; }
};

enum class DropoutSite { embedding, hidden };

struct DropoutSpec {
  double p_embedding = 0.0;
  double p_hidden = 0.0;
  bool active = true;

  double rate(DropoutSite site) const {
    return site == DropoutSite::embedding ? p_embedding : p_hidden;
  }
};

// z = sig(x Wz + h Uz + bz), r = sig(x Wr + h Ur + br),
// c = tanh(x Wc + (r . h) Uc + bc), h' = (1 - z) . h + z . c
Tensor gru_step(const GruCellParams& params, const Tensor& input, const Tensor& state);

// Row t of the result is the embedding of ids[t].
Tensor embed_tokens(const EmbeddingTable& emb, const std::vector<int>& ids);

// Mixes embedding rows by probability weight: result = p . E. One-hot rows
// reproduce embed_tokens exactly. Rows must be non-negative and sum to
// 1 within 1e-5.
Tensor embed_distribution(const EmbeddingTable& emb, const Tensor& p);

// v = h . (I W_img): the image is projected into the hidden space and
// gates the recurrent state element-wise.
Tensor attention_fuse(const AttentionParams& att, const Tensor& h, const Tensor& images);

// Inverted dropout: zeroes entries with probability p and scales survivors
// by 1/(1-p), so the expectation is unchanged. Identity when inactive.
Tensor dropout_apply(const DropoutSpec& spec, DropoutSite site, const Tensor& x, Rng& rng);

// x W (+ bias broadcast over rows).
Tensor linear(const Tensor& w, const Tensor& x, const std::optional<Tensor>& bias = std::nullopt);

// ---- initialization -------------------------------------------------------

Tensor glorot_uniform(std::size_t rows, std::size_t cols, Rng& rng);
Tensor uniform_init(Shape shape, double scale, Rng& rng);
GruCellParams make_gru(std::size_t d_in, std::size_t d_h, Rng& rng);
AttentionParams make_attention(std::size_t d_img, std::size_t d_h, Rng& rng);
EmbeddingTable make_embedding(std::size_t vocab_size, std::size_t d_emb, Rng& rng,
                              bool frozen = false, double scale = 0.1);

// Reads a GloVe-format text file (token followed by d_emb decimals per
// line) into an embedding table aligned with `tokens`. Tokens absent from
// the file get small random vectors.
EmbeddingTable load_glove(const std::string& path, const std::vector<std::string>& tokens,
                          std::size_t d_emb, Rng& rng, bool frozen = true);

}  // namespace capgan
