// Copyright (c) 2026 the capgan authors
// SPDX-License-Identifier: Apache-2.0

#include "capgan/model.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace capgan {

static_assert(std::endian::native == std::endian::little,
              "checkpoint blobs are little-endian");

namespace {

using nlohmann::json;

void require_batch(const Tensor& images, std::size_t batch, const char* where) {
  if (images.shape().size() != 2 || images.shape()[0] != batch) {
    throw std::invalid_argument(std::string(where) + ": image tensor " +
                                shape_str(images.shape()) + " does not match batch of " +
                                std::to_string(batch));
  }
}

// Column t of the 0/1 step mask as a [B x 1] constant.
Tensor mask_column(const Tensor& mask, std::size_t t, std::size_t batch) {
  std::vector<double> col(batch, 1.0);
  if (mask.defined()) {
    for (std::size_t b = 0; b < batch; ++b) col[b] = mask.at(b, t);
  }
  return Tensor({batch, 1}, std::move(col));
}

Tensor inverse_lengths(const Tensor& mask, std::size_t batch, std::size_t steps) {
  std::vector<double> inv(batch, 0.0);
  for (std::size_t b = 0; b < batch; ++b) {
    double len = 0.0;
    for (std::size_t t = 0; t < steps; ++t) {
      len += mask.defined() ? mask.at(b, t) : 1.0;
    }
    inv[b] = len > 0.0 ? 1.0 / len : 0.0;
  }
  return Tensor({batch, 1}, std::move(inv));
}

}  // namespace

GeneratorParams make_generator(const ModelDims& dims, Rng& rng,
                               std::shared_ptr<EmbeddingTable> embedding) {
  GeneratorParams g;
  g.embedding = embedding ? std::move(embedding)
                          : std::make_shared<EmbeddingTable>(
                                make_embedding(dims.vocab, dims.d_emb, rng));
  g.gru1 = make_gru(dims.d_emb, dims.d_h, rng);
  g.gru2 = make_gru(dims.d_h, dims.d_h, rng);
  g.att = make_attention(dims.d_img, dims.d_h, rng);
  g.w_proj = glorot_uniform(dims.d_h, dims.vocab, rng);
  return g;
}

DiscriminatorParams make_discriminator(const ModelDims& dims, Rng& rng,
                                       std::shared_ptr<EmbeddingTable> embedding) {
  DiscriminatorParams d;
  d.embedding = embedding ? std::move(embedding)
                          : std::make_shared<EmbeddingTable>(
                                make_embedding(dims.vocab, dims.d_emb, rng));
  d.gru1 = make_gru(dims.d_emb, dims.d_h, rng);
  d.gru2 = make_gru(dims.d_h, dims.d_h, rng);
  d.att = make_attention(dims.d_img, dims.d_h, rng);
  d.w_ans = glorot_uniform(dims.d_h, 1, rng);
  return d;
}

std::vector<StepState> generator_rollout_states(const GeneratorParams& g, const Tensor& images,
                                                const std::vector<std::vector<int>>& gt_ids,
                                                const DropoutSpec& dropout, Rng& rng) {
  const std::size_t batch = gt_ids.size();
  if (batch == 0 || gt_ids[0].empty()) {
    throw std::invalid_argument("generator_rollout: empty ground-truth batch");
  }
  const std::size_t steps = gt_ids[0].size();
  for (const auto& row : gt_ids) {
    if (row.size() != steps) {
      throw std::invalid_argument("generator_rollout: ragged ground-truth batch");
    }
  }
  require_batch(images, batch, "generator_rollout");

  const Tensor img_proj = matmul(images, g.att.w_img);
  Tensor h_prime = Tensor::zeros({batch, g.hidden_dim()});
  std::vector<StepState> out;
  out.reserve(steps);
  std::vector<int> step_ids(batch);
  for (std::size_t t = 0; t < steps; ++t) {
    for (std::size_t b = 0; b < batch; ++b) {
      step_ids[b] = t == 0 ? Vocabulary::kBos : gt_ids[b][t - 1];
    }
    Tensor x = embed_tokens(*g.embedding, step_ids);
    x = dropout_apply(dropout, DropoutSite::embedding, x, rng);
    Tensor h = gru_step(g.gru1, x, h_prime);
    h = dropout_apply(dropout, DropoutSite::hidden, h, rng);
    Tensor v = multiply(h, img_proj);
    h_prime = gru_step(g.gru2, h, v);
    Tensor p = softmax(matmul(h_prime, g.w_proj));
    out.push_back(StepState{h, v, h_prime, p});
  }
  return out;
}

std::vector<Tensor> generator_rollout_teacher_forced(const GeneratorParams& g,
                                                     const Tensor& images,
                                                     const std::vector<std::vector<int>>& gt_ids,
                                                     const DropoutSpec& dropout, Rng& rng) {
  std::vector<StepState> states = generator_rollout_states(g, images, gt_ids, dropout, rng);
  std::vector<Tensor> dists;
  dists.reserve(states.size());
  for (auto& s : states) dists.push_back(std::move(s.p));
  return dists;
}

std::vector<int> greedy_decode(const GeneratorParams& g, const Tensor& image,
                               const DecodeConfig& cfg, const DropoutSpec* dropout, Rng* rng) {
  if (cfg.max_len < 1) throw std::invalid_argument("greedy_decode: max_len must be positive");
  require_batch(image, 1, "greedy_decode");
  PauseRecording pause;  // inference never contributes to a record

  const bool use_dropout = cfg.dropout_active && dropout != nullptr && rng != nullptr;
  const DropoutSpec off{};
  const DropoutSpec& spec = use_dropout ? *dropout : off;
  Rng fallback(0);
  Rng& noise = use_dropout ? *rng : fallback;

  const Tensor img_proj = matmul(image, g.att.w_img);
  Tensor h_prime = Tensor::zeros({1, g.hidden_dim()});
  int current = Vocabulary::kBos;
  std::vector<int> out;
  for (std::size_t t = 0; t < cfg.max_len; ++t) {
    Tensor x = embed_tokens(*g.embedding, {current});
    if (use_dropout) x = dropout_apply(spec, DropoutSite::embedding, x, noise);
    Tensor h = gru_step(g.gru1, x, h_prime);
    if (use_dropout) h = dropout_apply(spec, DropoutSite::hidden, h, noise);
    Tensor v = multiply(h, img_proj);
    h_prime = gru_step(g.gru2, h, v);
    Tensor logits = matmul(h_prime, g.w_proj);
    const int next = static_cast<int>(argmax_row(logits, 0));
    if (next == Vocabulary::kEos) break;
    if (next != Vocabulary::kPad && next != Vocabulary::kBos) out.push_back(next);
    current = next;
  }
  return out;
}

namespace {

Tensor score_steps(const DiscriminatorParams& d, const Tensor& images, std::size_t batch,
                   std::size_t steps, const Tensor& mask,
                   const std::function<Tensor(std::size_t)>& embed_step) {
  require_batch(images, batch, "discriminator_score");
  const Tensor img_proj = matmul(images, d.att.w_img);
  Tensor h_prev = Tensor::zeros({batch, d.hidden_dim()});
  Tensor acc = Tensor::zeros({batch, 1});
  for (std::size_t t = 0; t < steps; ++t) {
    Tensor x = embed_step(t);
    Tensor h = gru_step(d.gru1, x, h_prev);
    Tensor v = multiply(h, img_proj);
    Tensor h_prime = gru_step(d.gru2, h, v);
    Tensor s = matmul(h_prime, d.w_ans);
    acc = add(acc, multiply(s, mask_column(mask, t, batch)));
    h_prev = h;  // first-cell state is the branch's own previous output
  }
  return multiply(acc, inverse_lengths(mask, batch, steps));
}

}  // namespace

Tensor discriminator_score(const DiscriminatorParams& d, const Tensor& images,
                           const std::vector<Tensor>& dists, const Tensor& mask) {
  if (dists.empty()) throw std::invalid_argument("discriminator_score: empty sequence");
  const std::size_t batch = dists[0].shape()[0];
  return score_steps(d, images, batch, dists.size(), mask,
                     [&](std::size_t t) { return embed_distribution(*d.embedding, dists[t]); });
}

Tensor discriminator_score_tokens(const DiscriminatorParams& d, const Tensor& images,
                                  const std::vector<std::vector<int>>& ids, const Tensor& mask) {
  if (ids.empty() || ids[0].empty()) {
    throw std::invalid_argument("discriminator_score: empty sequence");
  }
  const std::size_t batch = ids.size();
  const std::size_t steps = ids[0].size();
  std::vector<int> step_ids(batch);
  return score_steps(d, images, batch, steps, mask, [&](std::size_t t) {
    for (std::size_t b = 0; b < batch; ++b) step_ids[b] = ids[b][t];
    return embed_tokens(*d.embedding, step_ids);
  });
}

// ---- parameter plumbing ---------------------------------------------------

namespace {

void append_gru(NamedParams& out, const std::string& prefix, GruCellParams& cell) {
  out.emplace_back(prefix + ".w_update", &cell.w_update);
  out.emplace_back(prefix + ".w_reset", &cell.w_reset);
  out.emplace_back(prefix + ".w_cand", &cell.w_cand);
  out.emplace_back(prefix + ".u_update", &cell.u_update);
  out.emplace_back(prefix + ".u_reset", &cell.u_reset);
  out.emplace_back(prefix + ".u_cand", &cell.u_cand);
  out.emplace_back(prefix + ".b_update", &cell.b_update);
  out.emplace_back(prefix + ".b_reset", &cell.b_reset);
  out.emplace_back(prefix + ".b_cand", &cell.b_cand);
}

}  // namespace

NamedParams named_params(GeneratorParams& g, bool include_embedding) {
  NamedParams out;
  if (include_embedding) out.emplace_back("g.embedding.table", &g.embedding->table);
  append_gru(out, "g.gru1", g.gru1);
  append_gru(out, "g.gru2", g.gru2);
  out.emplace_back("g.att.w_img", &g.att.w_img);
  out.emplace_back("g.w_proj", &g.w_proj);
  return out;
}

NamedParams named_params(DiscriminatorParams& d, bool include_embedding) {
  NamedParams out;
  if (include_embedding) out.emplace_back("d.embedding.table", &d.embedding->table);
  append_gru(out, "d.gru1", d.gru1);
  append_gru(out, "d.gru2", d.gru2);
  out.emplace_back("d.att.w_img", &d.att.w_img);
  out.emplace_back("d.w_ans", &d.w_ans);
  return out;
}

namespace {

GruCellParams bind_gru(const GruCellParams& cell, DiffRecord& rec) {
  GruCellParams b;
  b.w_update = rec.leaf(cell.w_update);
  b.w_reset = rec.leaf(cell.w_reset);
  b.w_cand = rec.leaf(cell.w_cand);
  b.u_update = rec.leaf(cell.u_update);
  b.u_reset = rec.leaf(cell.u_reset);
  b.u_cand = rec.leaf(cell.u_cand);
  b.b_update = rec.leaf(cell.b_update);
  b.b_reset = rec.leaf(cell.b_reset);
  b.b_cand = rec.leaf(cell.b_cand);
  return b;
}

std::shared_ptr<EmbeddingTable> bind_embedding(const EmbeddingTable& emb, DiffRecord& rec) {
  return std::make_shared<EmbeddingTable>(EmbeddingTable{rec.leaf(emb.table), emb.frozen});
}

}  // namespace

GeneratorParams bind(const GeneratorParams& g, DiffRecord& rec) {
  GeneratorParams b;
  b.embedding = bind_embedding(*g.embedding, rec);
  b.gru1 = bind_gru(g.gru1, rec);
  b.gru2 = bind_gru(g.gru2, rec);
  b.att = AttentionParams{rec.leaf(g.att.w_img)};
  b.w_proj = rec.leaf(g.w_proj);
  return b;
}

DiscriminatorParams bind(const DiscriminatorParams& d, DiffRecord& rec) {
  DiscriminatorParams b;
  b.embedding = bind_embedding(*d.embedding, rec);
  b.gru1 = bind_gru(d.gru1, rec);
  b.gru2 = bind_gru(d.gru2, rec);
  b.att = AttentionParams{rec.leaf(d.att.w_img)};
  b.w_ans = rec.leaf(d.w_ans);
  return b;
}

BoundPair bind_pair(const GeneratorParams& g, const DiscriminatorParams& d, DiffRecord& rec) {
  BoundPair pair;
  pair.g = bind(g, rec);
  pair.d.gru1 = bind_gru(d.gru1, rec);
  pair.d.gru2 = bind_gru(d.gru2, rec);
  pair.d.att = AttentionParams{rec.leaf(d.att.w_img)};
  pair.d.w_ans = rec.leaf(d.w_ans);
  pair.d.embedding = (d.embedding == g.embedding) ? pair.g.embedding
                                                  : bind_embedding(*d.embedding, rec);
  return pair;
}

// ---- checkpoints ----------------------------------------------------------

namespace {

void write_param(std::ofstream& blob, json& manifest_params, const std::string& name,
                 const Tensor& t, std::size_t& offset) {
  manifest_params.push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}});
  blob.write(reinterpret_cast<const char*>(t.values().data()),
             static_cast<std::streamsize>(t.size() * sizeof(double)));
  offset += t.size() * sizeof(double);
}

Tensor read_param(const std::vector<char>& blob, const json& entry) {
  Shape shape = entry.at("shape").get<Shape>();
  const std::size_t offset = entry.at("offset").get<std::size_t>();
  const std::size_t n = shape_count(shape);
  if (offset + n * sizeof(double) > blob.size()) {
    throw std::runtime_error("checkpoint: blob too small for parameter " +
                             entry.at("name").get<std::string>());
  }
  std::vector<double> values(n);
  std::memcpy(values.data(), blob.data() + offset, n * sizeof(double));
  return Tensor(std::move(shape), std::move(values));
}

}  // namespace

void save_checkpoint(const std::string& dir, const GeneratorParams& g,
                     const DiscriminatorParams& d, const Vocabulary& vocab,
                     const ModelDims& dims) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  const bool shared = g.embedding == d.embedding;

  json manifest;
  manifest["format"] = "capgan-checkpoint";
  manifest["version"] = 1;
  manifest["dims"] = {{"d_emb", dims.d_emb}, {"d_h", dims.d_h}, {"d_img", dims.d_img},
                      {"vocab", dims.vocab}};
  manifest["shared_embedding"] = shared;
  manifest["embedding_frozen"] = g.embedding->frozen;
  manifest["vocab"] = vocab.tokens();
  manifest["params"] = json::array();

  std::ofstream blob(fs::path(dir) / "params.bin", std::ios::binary);
  if (!blob) throw std::runtime_error("checkpoint: cannot write blob in " + dir);
  std::size_t offset = 0;
  auto gp = named_params(const_cast<GeneratorParams&>(g), true);
  auto dp = named_params(const_cast<DiscriminatorParams&>(d), !shared);
  for (auto& [name, tensor] : gp) write_param(blob, manifest["params"], name, *tensor, offset);
  for (auto& [name, tensor] : dp) write_param(blob, manifest["params"], name, *tensor, offset);
  blob.close();

  std::ofstream mf(fs::path(dir) / "manifest.json");
  if (!mf) throw std::runtime_error("checkpoint: cannot write manifest in " + dir);
  mf << manifest.dump(2) << "\n";
}

Checkpoint load_checkpoint(const std::string& dir) {
  namespace fs = std::filesystem;
  std::ifstream mf(fs::path(dir) / "manifest.json");
  if (!mf) throw std::runtime_error("checkpoint: cannot open manifest in " + dir);
  json manifest = json::parse(mf);
  if (manifest.value("format", "") != "capgan-checkpoint") {
    throw std::runtime_error("checkpoint: unrecognized manifest format in " + dir);
  }

  std::ifstream bf(fs::path(dir) / "params.bin", std::ios::binary);
  if (!bf) throw std::runtime_error("checkpoint: cannot open blob in " + dir);
  std::vector<char> blob((std::istreambuf_iterator<char>(bf)), std::istreambuf_iterator<char>());

  Checkpoint ck;
  ck.dims.d_emb = manifest["dims"]["d_emb"].get<std::size_t>();
  ck.dims.d_h = manifest["dims"]["d_h"].get<std::size_t>();
  ck.dims.d_img = manifest["dims"]["d_img"].get<std::size_t>();
  ck.dims.vocab = manifest["dims"]["vocab"].get<std::size_t>();
  ck.vocab = Vocabulary(manifest["vocab"].get<std::vector<std::string>>());
  ck.shared_embedding = manifest.value("shared_embedding", true);

  std::unordered_map<std::string, Tensor> loaded;
  for (const auto& entry : manifest["params"]) {
    loaded.emplace(entry.at("name").get<std::string>(), read_param(blob, entry));
  }
  auto take = [&](const std::string& name) {
    auto it = loaded.find(name);
    if (it == loaded.end()) throw std::runtime_error("checkpoint: missing parameter " + name);
    return it->second;
  };
  auto take_gru = [&](const std::string& prefix) {
    GruCellParams cell;
    cell.w_update = take(prefix + ".w_update");
    cell.w_reset = take(prefix + ".w_reset");
    cell.w_cand = take(prefix + ".w_cand");
    cell.u_update = take(prefix + ".u_update");
    cell.u_reset = take(prefix + ".u_reset");
    cell.u_cand = take(prefix + ".u_cand");
    cell.b_update = take(prefix + ".b_update");
    cell.b_reset = take(prefix + ".b_reset");
    cell.b_cand = take(prefix + ".b_cand");
    return cell;
  };

  const bool frozen = manifest.value("embedding_frozen", false);
  auto g_emb = std::make_shared<EmbeddingTable>(EmbeddingTable{take("g.embedding.table"), frozen});
  ck.generator.embedding = g_emb;
  ck.generator.gru1 = take_gru("g.gru1");
  ck.generator.gru2 = take_gru("g.gru2");
  ck.generator.att = AttentionParams{take("g.att.w_img")};
  ck.generator.w_proj = take("g.w_proj");

  ck.discriminator.embedding =
      ck.shared_embedding
          ? g_emb
          : std::make_shared<EmbeddingTable>(EmbeddingTable{take("d.embedding.table"), frozen});
  ck.discriminator.gru1 = take_gru("d.gru1");
  ck.discriminator.gru2 = take_gru("d.gru2");
  ck.discriminator.att = AttentionParams{take("d.att.w_img")};
  ck.discriminator.w_ans = take("d.w_ans");
  return ck;
}

}  // namespace capgan
