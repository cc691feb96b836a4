// Copyright (c) 2026 the capgan authors
// SPDX-License-Identifier: Apache-2.0

#include "capgan/data.hpp"

#include <algorithm>
#include <cctype>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>

#include <json.hpp>

namespace capgan {

using nlohmann::json;

// ---- Vocabulary -------------------------------------------------------------

namespace {
const std::vector<std::string> kSpecials = {"<pad>", "<bos>", "<eos>", "<unk>"};
}

Vocabulary::Vocabulary() {
  for (const auto& s : kSpecials) {
    token_to_id_.emplace(s, static_cast<int>(id_to_token_.size()));
    id_to_token_.push_back(s);
  }
}

Vocabulary::Vocabulary(const std::vector<std::string>& tokens) {
  if (tokens.size() < kSpecials.size() ||
      !std::equal(kSpecials.begin(), kSpecials.end(), tokens.begin())) {
    throw std::invalid_argument("vocabulary: token list must start with the special tokens");
  }
  for (const auto& t : tokens) {
    if (!token_to_id_.emplace(t, static_cast<int>(id_to_token_.size())).second) {
      throw std::invalid_argument("vocabulary: duplicate token '" + t + "'");
    }
    id_to_token_.push_back(t);
  }
}

int Vocabulary::add(const std::string& token) {
  auto [it, inserted] = token_to_id_.emplace(token, static_cast<int>(id_to_token_.size()));
  if (!inserted) throw std::invalid_argument("vocabulary: duplicate token '" + token + "'");
  id_to_token_.push_back(token);
  return it->second;
}

int Vocabulary::id(const std::string& token) const {
  auto it = token_to_id_.find(token);
  return it == token_to_id_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= id_to_token_.size()) {
    throw std::invalid_argument("vocabulary: id " + std::to_string(id) + " out of range");
  }
  return id_to_token_[id];
}

bool Vocabulary::contains(const std::string& token) const { return token_to_id_.count(token) > 0; }

std::vector<int> Vocabulary::encode(const std::vector<std::string>& tokens) const {
  std::vector<int> out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) out.push_back(id(t));
  return out;
}

std::vector<std::string> Vocabulary::decode(const std::vector<int>& ids) const {
  std::vector<std::string> out;
  out.reserve(ids.size());
  for (int id : ids) {
    if (id == kPad || id == kBos || id == kEos) continue;
    out.push_back(token(id));
  }
  return out;
}

// ---- tokenizer --------------------------------------------------------------

std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> out;
  std::string current;
  for (unsigned char c : text) {
    if (std::isalnum(c) || c == '\'') {
      current.push_back(static_cast<char>(std::tolower(c)));
    } else if (!current.empty()) {
      out.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) out.push_back(std::move(current));
  return out;
}

Vocabulary build_vocab(const std::vector<std::vector<std::string>>& corpus, int min_count) {
  if (corpus.empty()) throw std::invalid_argument("build_vocab: empty corpus");
  std::map<std::string, long long> counts;
  for (const auto& caption : corpus) {
    for (const auto& token : caption) ++counts[token];
  }
  std::vector<std::pair<std::string, long long>> ordered(counts.begin(), counts.end());
  std::sort(ordered.begin(), ordered.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  Vocabulary vocab;
  vocab.min_count_used = min_count;
  for (const auto& [token, count] : ordered) {
    if (count >= min_count) vocab.add(token);
  }
  return vocab;
}

// ---- features ----------------------------------------------------------------

FeatureTable::FeatureTable(std::size_t dim, std::vector<std::int64_t> ids,
                           std::vector<double> data)
    : dim_(dim), ids_(std::move(ids)), data_(std::move(data)) {
  if (data_.size() != ids_.size() * dim_) {
    throw std::invalid_argument("feature table: " + std::to_string(ids_.size()) + " rows of " +
                                std::to_string(dim_) + " do not match " +
                                std::to_string(data_.size()) + " values");
  }
  for (std::size_t r = 0; r < ids_.size(); ++r) {
    for (std::size_t j = 0; j < dim_; ++j) {
      const double v = data_[r * dim_ + j];
      if (!(v - v == 0.0)) {
        throw std::invalid_argument("feature table: non-finite value in row " +
                                    std::to_string(r));
      }
    }
    if (!index_.emplace(ids_[r], r).second) {
      throw std::invalid_argument("feature table: duplicate image id " +
                                  std::to_string(ids_[r]));
    }
  }
}

std::size_t FeatureTable::row_of(std::int64_t image_id) const {
  auto it = index_.find(image_id);
  if (it == index_.end()) {
    throw std::invalid_argument("feature table: unknown image id " + std::to_string(image_id));
  }
  return it->second;
}

Tensor FeatureTable::row(std::size_t r) const { return rows({r}); }

Tensor FeatureTable::rows(const std::vector<std::size_t>& row_index) const {
  std::vector<double> out(row_index.size() * dim_);
  for (std::size_t i = 0; i < row_index.size(); ++i) {
    if (row_index[i] >= ids_.size()) {
      throw std::invalid_argument("feature table: row " + std::to_string(row_index[i]) +
                                  " out of range");
    }
    std::copy_n(data_.data() + row_index[i] * dim_, dim_, out.data() + i * dim_);
  }
  return Tensor({row_index.size(), dim_}, std::move(out));
}

// ---- caption files -------------------------------------------------------------

std::vector<std::pair<std::int64_t, std::string>> load_caption_text(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("load_captions: cannot open " + path);
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw std::invalid_argument("load_captions: " + path + " is not valid JSON: " + e.what());
  }
  if (!doc.contains("images") || !doc.contains("annotations")) {
    throw std::invalid_argument("load_captions: " + path +
                                " lacks the images/annotations arrays");
  }
  std::vector<std::pair<std::int64_t, std::string>> out;
  try {
    for (const auto& ann : doc["annotations"]) {
      out.emplace_back(ann.at("image_id").get<std::int64_t>(),
                       ann.at("caption").get<std::string>());
    }
  } catch (const json::exception& e) {
    throw std::invalid_argument("load_captions: malformed annotation in " + path + ": " +
                                e.what());
  }
  return out;
}

CaptionLoadResult load_captions(const std::string& path, const Vocabulary& vocab,
                                const FeatureTable& features, std::size_t max_len) {
  auto text = load_caption_text(path);
  CaptionLoadResult result;
  std::unordered_map<std::int64_t, std::size_t> slot;
  for (auto& [image_id, caption] : text) {
    if (!features.has(image_id)) {
      ++result.missing_features;
      continue;
    }
    std::vector<int> ids = vocab.encode(tokenize(caption));
    if (ids.size() > max_len - 1) ids.resize(max_len - 1);
    ids.push_back(Vocabulary::kEos);

    auto it = slot.find(image_id);
    if (it == slot.end()) {
      slot.emplace(image_id, result.records.size());
      result.records.push_back(
          CaptionRecord{image_id, features.row_of(image_id), {std::move(ids)}});
    } else {
      result.records[it->second].references.push_back(std::move(ids));
    }
  }
  return result;
}

// ---- binary feature files --------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'C', 'A', 'P', 'F'};
constexpr std::uint32_t kFeatureVersion = 1;

template <typename T>
void write_raw(std::ofstream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_raw(std::ifstream& in, const std::string& path) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) {
    throw std::invalid_argument("load_features: " + path + " is truncated");
  }
  return v;
}

}  // namespace

void write_features(const std::string& path, const FeatureTable& table) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::invalid_argument("write_features: cannot open " + path);
  out.write(kMagic, 4);
  write_raw(out, kFeatureVersion);
  write_raw(out, static_cast<std::uint32_t>(table.size()));
  write_raw(out, static_cast<std::uint32_t>(table.dim()));
  out.write(reinterpret_cast<const char*>(table.data().data()),
            static_cast<std::streamsize>(table.data().size() * sizeof(double)));
  for (std::int64_t id : table.ids()) {
    write_raw(out, static_cast<std::uint64_t>(id));
  }
  if (!out) throw std::runtime_error("write_features: short write to " + path);
}

FeatureTable load_features(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::invalid_argument("load_features: cannot open " + path);
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
    throw std::invalid_argument("load_features: " + path + " lacks the CAPF magic");
  }
  const auto version = read_raw<std::uint32_t>(in, path);
  if (version != kFeatureVersion) {
    throw std::invalid_argument("load_features: unsupported version " +
                                std::to_string(version) + " in " + path);
  }
  const auto n_rows = read_raw<std::uint32_t>(in, path);
  const auto dim = read_raw<std::uint32_t>(in, path);
  std::vector<double> data(static_cast<std::size_t>(n_rows) * dim);
  if (!in.read(reinterpret_cast<char*>(data.data()),
               static_cast<std::streamsize>(data.size() * sizeof(double)))) {
    throw std::invalid_argument("load_features: " + path + " payload is smaller than header");
  }
  std::vector<std::int64_t> ids(n_rows);
  for (auto& id : ids) id = static_cast<std::int64_t>(read_raw<std::uint64_t>(in, path));
  char extra;
  if (in.read(&extra, 1)) {
    throw std::invalid_argument("load_features: " + path + " has trailing bytes");
  }
  return FeatureTable(dim, std::move(ids), std::move(data));
}

// ---- synthetic dataset --------------------------------------------------------

SyntheticDataset generate_synthetic(const SyntheticSpec& spec) {
  if (spec.colors.empty() || spec.shapes.empty() || spec.surfaces.empty()) {
    throw std::invalid_argument("generate_synthetic: attribute lists must be non-empty");
  }
  if (spec.n_val < 1) throw std::invalid_argument("generate_synthetic: n_val must be >= 1");
  const std::size_t block = 2 * spec.colors.size() + spec.shapes.size() + spec.surfaces.size();
  if (spec.d_img < block) {
    throw std::invalid_argument("generate_synthetic: d_img " + std::to_string(spec.d_img) +
                                " is smaller than the " + std::to_string(block) +
                                " attribute slots");
  }

  Rng rng(spec.seed);
  const std::size_t total = spec.n_train + spec.n_val;
  std::vector<double> data(total * spec.d_img, 0.0);
  std::vector<std::int64_t> ids(total);
  SyntheticDataset out;

  for (std::size_t i = 0; i < total; ++i) {
    const std::size_t c1 = rng.index(spec.colors.size());
    const std::size_t sh = rng.index(spec.shapes.size());
    const std::size_t c2 = rng.index(spec.colors.size());
    const std::size_t sf = rng.index(spec.surfaces.size());
    double* row = data.data() + i * spec.d_img;
    row[c1] = 1.0;
    row[spec.colors.size() + sh] = 1.0;
    row[spec.colors.size() + spec.shapes.size() + c2] = 1.0;
    row[spec.colors.size() + spec.shapes.size() + spec.colors.size() + sf] = 1.0;
    if (spec.noise_sigma > 0.0) {
      for (std::size_t j = 0; j < spec.d_img; ++j) row[j] += spec.noise_sigma * rng.normal();
    }
    ids[i] = static_cast<std::int64_t>(i + 1);
    const std::string caption = "a " + spec.colors[c1] + " " + spec.shapes[sh] + " on a " +
                                spec.colors[c2] + " " + spec.surfaces[sf];
    if (i < spec.n_train) {
      out.train_text.emplace_back(ids[i], caption);
    } else {
      out.val_text.emplace_back(ids[i], caption);
    }
  }

  out.features = FeatureTable(spec.d_img, std::move(ids), std::move(data));

  std::vector<std::vector<std::string>> corpus;
  corpus.reserve(out.train_text.size());
  for (const auto& [id, caption] : out.train_text) corpus.push_back(tokenize(caption));
  out.vocab = build_vocab(corpus, 1);

  auto encode_split = [&](const std::vector<std::pair<std::int64_t, std::string>>& text) {
    std::vector<CaptionRecord> records;
    records.reserve(text.size());
    for (const auto& [id, caption] : text) {
      std::vector<int> enc = out.vocab.encode(tokenize(caption));
      enc.push_back(Vocabulary::kEos);
      records.push_back(CaptionRecord{id, out.features.row_of(id), {std::move(enc)}});
    }
    return records;
  };
  out.train = encode_split(out.train_text);
  out.val = encode_split(out.val_text);
  return out;
}

// ---- batches ----------------------------------------------------------------

std::vector<Batch> make_epoch_batches(const std::vector<CaptionRecord>& records,
                                      const FeatureTable& features, std::size_t vocab_size,
                                      std::size_t batch_size, Rng& rng) {
  if (batch_size < 1) throw std::invalid_argument("make_epoch_batches: batch_size must be >= 1");
  std::vector<std::size_t> order(records.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  rng.shuffle(order);

  std::vector<Batch> out;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t n = std::min(batch_size, order.size() - start);
    Batch batch;
    std::vector<std::size_t> feature_rows(n);
    std::size_t max_t = 0;
    batch.token_ids.resize(n);
    for (std::size_t b = 0; b < n; ++b) {
      const CaptionRecord& rec = records[order[start + b]];
      const auto& ref = rec.references[rng.index(rec.references.size())];
      batch.token_ids[b] = ref;
      feature_rows[b] = rec.feature_row;
      max_t = std::max(max_t, ref.size());
    }
    std::vector<double> mask(n * max_t, 0.0);
    for (std::size_t b = 0; b < n; ++b) {
      for (std::size_t t = 0; t < max_t; ++t) {
        if (t < batch.token_ids[b].size()) mask[b * max_t + t] = 1.0;
      }
      batch.token_ids[b].resize(max_t, Vocabulary::kPad);
    }
    batch.mask = Tensor({n, max_t}, std::move(mask));
    batch.features = features.rows(feature_rows);
    batch.real_steps.reserve(max_t);
    for (std::size_t t = 0; t < max_t; ++t) {
      std::vector<double> step(n * vocab_size, 0.0);
      for (std::size_t b = 0; b < n; ++b) {
        step[b * vocab_size + static_cast<std::size_t>(batch.token_ids[b][t])] = 1.0;
      }
      batch.real_steps.push_back(Tensor({n, vocab_size}, std::move(step)));
    }
    out.push_back(std::move(batch));
  }
  return out;
}

}  // namespace capgan
