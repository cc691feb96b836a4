// Copyright (c) 2026 the capgan authors
// SPDX-License-Identifier: Apache-2.0
//
// The shared dual-branch recurrent architecture. The generator branch
// turns an image and a teacher-forced token prefix into per-step
// vocabulary distributions; the discriminator branch turns an image and
// a distribution sequence into one unbounded realism score per item.
// The two branches differ in their first-cell recurrence: the generator
// feeds the second cell's output back, the discriminator its own.
#pragma once

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "capgan/nn.hpp"
#include "capgan/vocab.hpp"

namespace capgan {

struct ModelDims {
  std::size_t d_emb = 300;
  std::size_t d_h = 256;
  std::size_t d_img = 2048;
  std::size_t vocab = 0;
};

struct GeneratorParams {
  std::shared_ptr<EmbeddingTable> embedding;
  GruCellParams gru1, gru2;
  AttentionParams att;
  Tensor w_proj;  // d_h x |V|

  std::size_t vocab_size() const { return w_proj.shape()[1]; }
  std::size_t hidden_dim() const { return w_proj.shape()[0]; }
};

struct DiscriminatorParams {
  std::shared_ptr<EmbeddingTable> embedding;
  GruCellParams gru1, gru2;
  AttentionParams att;
  Tensor w_ans;  // d_h x 1

  std::size_t hidden_dim() const { return w_ans.shape()[0]; }
};

// Intermediate tensors of one recurrence step; p is generator-only.
struct StepState {
  Tensor h, v, h_prime, p;
};

enum class DecodeStrategy { greedy };

struct DecodeConfig {
  std::size_t max_len = 20;
  DecodeStrategy strategy = DecodeStrategy::greedy;
  bool dropout_active = false;
};

GeneratorParams make_generator(const ModelDims& dims, Rng& rng,
                               std::shared_ptr<EmbeddingTable> embedding = nullptr);
DiscriminatorParams make_discriminator(const ModelDims& dims, Rng& rng,
                                       std::shared_ptr<EmbeddingTable> embedding);

// Teacher forcing: step t consumes <bos> for t = 0 and ground-truth token
// t-1 afterwards, never the model's own output. Returns one distribution
// tensor [batch x |V|] per step.
std::vector<Tensor> generator_rollout_teacher_forced(const GeneratorParams& g,
                                                     const Tensor& images,
                                                     const std::vector<std::vector<int>>& gt_ids,
                                                     const DropoutSpec& dropout, Rng& rng);
std::vector<StepState> generator_rollout_states(const GeneratorParams& g, const Tensor& images,
                                                const std::vector<std::vector<int>>& gt_ids,
                                                const DropoutSpec& dropout, Rng& rng);

// Feeds the argmax token back as the next input. Stops at <eos> or
// max_len; <pad>/<bos>/<eos> never appear in the output, <unk> does.
// Deterministic unless dropout is explicitly activated.
std::vector<int> greedy_decode(const GeneratorParams& g, const Tensor& image,
                               const DecodeConfig& cfg, const DropoutSpec* dropout = nullptr,
                               Rng* rng = nullptr);

// Mean over unmasked steps of the per-step affine score. dists rows must
// be normalized (one-hot for real captions, softmax for generated ones).
// mask, when defined, is a [batch x T] 0/1 tensor. Returns [batch x 1].
Tensor discriminator_score(const DiscriminatorParams& d, const Tensor& images,
                           const std::vector<Tensor>& dists, const Tensor& mask = Tensor());

// Same score but embedding real tokens via table lookup instead of
// distribution mixing; bit-identical to the one-hot path.
Tensor discriminator_score_tokens(const DiscriminatorParams& d, const Tensor& images,
                                  const std::vector<std::vector<int>>& ids,
                                  const Tensor& mask = Tensor());

// ---- parameter plumbing ---------------------------------------------------

using NamedParams = std::vector<std::pair<std::string, Tensor*>>;

// Deterministically ordered views over the trainable tensors. The shared
// embedding is listed only when include_embedding is set (the generator
// owns a shared table).
NamedParams named_params(GeneratorParams& g, bool include_embedding);
NamedParams named_params(DiscriminatorParams& d, bool include_embedding);

// Copies whose tensors are leaves of the given record.
GeneratorParams bind(const GeneratorParams& g, DiffRecord& rec);
DiscriminatorParams bind(const DiscriminatorParams& d, DiffRecord& rec);

struct BoundPair {
  GeneratorParams g;
  DiscriminatorParams d;
};
// Binds both branches, attaching a shared embedding table exactly once.
BoundPair bind_pair(const GeneratorParams& g, const DiscriminatorParams& d, DiffRecord& rec);

// ---- checkpoints ----------------------------------------------------------

struct Checkpoint {
  GeneratorParams generator;
  DiscriminatorParams discriminator;
  Vocabulary vocab;
  ModelDims dims;
  bool shared_embedding = true;
};

// manifest.json (named shapes + byte offsets) plus params.bin, a raw
// little-endian 64-bit-float blob. Round-trips bit-exactly.
void save_checkpoint(const std::string& dir, const GeneratorParams& g,
                     const DiscriminatorParams& d, const Vocabulary& vocab,
                     const ModelDims& dims);
Checkpoint load_checkpoint(const std::string& dir);

}  // namespace capgan
