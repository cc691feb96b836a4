// Copyright (c) 2026 the capgan authors
// SPDX-License-Identifier: Apache-2.0
//
// Caption ingestion and batching: tokenizer, vocabulary construction,
// COCO-style annotation files, precomputed image-feature tables, and a
// synthetic desk-scale dataset whose captions are exactly recoverable
// from the noiseless features.
#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "capgan/autograd.hpp"
#include "capgan/rng.hpp"
#include "capgan/vocab.hpp"

namespace capgan {

// Lowercases, keeps alphanumerics and apostrophes, splits on everything
// else. Empty results are legal.
std::vector<std::string> tokenize(const std::string& text);

// Tokens with count >= min_count get ids 4.. ordered by count descending,
// ties broken lexicographically; everything else maps to <unk>.
Vocabulary build_vocab(const std::vector<std::vector<std::string>>& corpus, int min_count);

struct CaptionRecord {
  std::int64_t image_id = 0;
  std::size_t feature_row = 0;
  std::vector<std::vector<int>> references;  // token-id sequences, <eos>-terminated
};

class FeatureTable {
public:
  FeatureTable() = default;
  FeatureTable(std::size_t dim, std::vector<std::int64_t> ids, std::vector<double> data);

  std::size_t dim() const { return dim_; }
  std::size_t size() const { return ids_.size(); }
  bool has(std::int64_t image_id) const { return index_.count(image_id) > 0; }
  std::size_t row_of(std::int64_t image_id) const;
  std::int64_t id_of(std::size_t row) const { return ids_.at(row); }
  const std::vector<std::int64_t>& ids() const { return ids_; }
  const std::vector<double>& data() const { return data_; }

  Tensor row(std::size_t r) const;                              // [1 x d]
  Tensor rows(const std::vector<std::size_t>& row_index) const;  // [B x d]

private:
  std::size_t dim_ = 0;
  std::vector<std::int64_t> ids_;
  std::vector<double> data_;  // row-major, size() * dim_
  std::unordered_map<std::int64_t, std::size_t> index_;
};

// COCO-compatible subset: {"images": [{"id": ...}], "annotations":
// [{"image_id": ..., "caption": ...}]}. Returned in annotation order.
std::vector<std::pair<std::int64_t, std::string>> load_caption_text(const std::string& path);

struct CaptionLoadResult {
  std::vector<CaptionRecord> records;
  std::size_t missing_features = 0;  // images skipped for lack of a feature row
};

// Groups captions by image, encodes them with <unk> substitution, and
// truncates to max_len - 1 tokens before the closing <eos>.
CaptionLoadResult load_captions(const std::string& path, const Vocabulary& vocab,
                                const FeatureTable& features, std::size_t max_len);

// Binary feature format: magic "CAPF", u32 version, u32 n_rows, u32 d_img,
// n_rows x d_img little-endian f64, then n_rows little-endian u64 image ids.
FeatureTable load_features(const std::string& path);
void write_features(const std::string& path, const FeatureTable& table);

struct SyntheticSpec {
  std::vector<std::string> colors{"red", "green", "blue", "yellow"};
  std::vector<std::string> shapes{"cube", "ball", "cone", "ring"};
  std::vector<std::string> surfaces{"table", "shelf", "floor", "mat"};
  std::size_t d_img = 64;
  double noise_sigma = 0.05;
  std::size_t n_train = 500;
  std::size_t n_val = 100;
  std::uint64_t seed = 42;
};

struct SyntheticDataset {
  std::vector<std::pair<std::int64_t, std::string>> train_text, val_text;
  FeatureTable features;  // train and validation rows in one table
  Vocabulary vocab;       // built from the training captions, min_count 1
  std::vector<CaptionRecord> train, val;
};

// Every example draws (color1, shape, color2, surface) and captions it as
// "a {color1} {shape} on a {color2} {surface}". The feature vector is the
// concatenation of the four one-hot attribute blocks, zero-padded to d_img,
// plus Gaussian noise.
SyntheticDataset generate_synthetic(const SyntheticSpec& spec);

struct Batch {
  Tensor features;                          // B x d_img
  std::vector<std::vector<int>> token_ids;  // B x T, padded with <pad>
  std::vector<Tensor> real_steps;           // T one-hot tensors [B x |V|]
  Tensor mask;                              // B x T, 1 on real positions

  std::size_t batch_size() const { return token_ids.size(); }
  std::size_t seq_len() const { return token_ids.empty() ? 0 : token_ids[0].size(); }
};

// One epoch of shuffled batches. Each record contributes one reference,
// re-sampled per epoch; sequences are padded to the per-batch maximum.
std::vector<Batch> make_epoch_batches(const std::vector<CaptionRecord>& records,
                                      const FeatureTable& features, std::size_t vocab_size,
                                      std::size_t batch_size, Rng& rng);

}  // namespace capgan
