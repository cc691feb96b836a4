// Copyright (c) 2026 the capgan authors
// SPDX-License-Identifier: Apache-2.0
//
// BLEU-4 scoring (corpus and sentence), validation-set evaluation via
// greedy decoding, and the two-site dropout grid sweep.
#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "capgan/data.hpp"
#include "capgan/model.hpp"
#include "capgan/training.hpp"

namespace capgan {

using TokenSeq = std::vector<std::string>;

struct BleuReport {
  double bleu4 = 0.0;
  std::array<double, 4> precisions{};  // modified 1..4-gram precisions
  double brevity_penalty = 0.0;
  std::size_t candidate_length = 0;
  std::size_t reference_length = 0;  // closest reference length per candidate, summed
};

struct Smoothing {
  enum class Kind { none, add_k };
  Kind kind = Kind::none;
  double k = 1.0;

  static Smoothing none() { return {}; }
  static Smoothing add_k(double k) { return {Kind::add_k, k}; }
};

// Corpus-wide clipped n-gram matches and candidate n-gram total. Counts
// are clipped per n-gram by the maximum count over that candidate's
// references.
std::pair<long long, long long> ngram_precision(const std::vector<TokenSeq>& candidates,
                                                const std::vector<std::vector<TokenSeq>>& references,
                                                int n);

// Geometric mean of the four precisions times the brevity penalty
// min(1, exp(1 - r/c)). Unsmoothed scores are 0 whenever any precision
// is 0; add-k smoothing applies to orders 2..4.
BleuReport bleu4(const std::vector<TokenSeq>& candidates,
                 const std::vector<std::vector<TokenSeq>>& references,
                 const Smoothing& smoothing = Smoothing::none());

struct PerImageEval {
  std::int64_t image_id = 0;
  std::string candidate;
  std::vector<std::string> references;
  double sentence_bleu4 = 0.0;
};

struct EvalResult {
  BleuReport corpus;
  std::vector<PerImageEval> per_image;
};

// Greedy-decodes every image with dropout off and scores against all of
// its references.
EvalResult evaluate(const GeneratorParams& g, const std::vector<CaptionRecord>& dataset,
                    const FeatureTable& features, const Vocabulary& vocab,
                    const DecodeConfig& cfg);

// ---- dropout sweep -----------------------------------------------------------

struct SweepCell {
  double val_bleu4 = 0.0;
  int epochs_run = 0;
  bool aborted = false;  // numerical abort; recorded instead of failing the sweep
  std::vector<EpochHistory> history;
};

struct SweepGrid {
  std::vector<double> embedding_rates;              // columns
  std::vector<double> hidden_rates;                 // rows
  std::vector<std::vector<SweepCell>> cells;        // [hidden][embedding]

  // Header "p_hidden\p_emb,<rates...>", one row per hidden rate,
  // 6-decimal fixed point throughout.
  std::string to_csv() const;
};

// Trains one model per (p_embedding, p_hidden) cell under identical seeds
// and an epoch budget; cells may run on `jobs` worker threads.
SweepGrid dropout_sweep(const TrainConfig& base, const ModelDims& dims,
                        const std::vector<CaptionRecord>& train,
                        const std::vector<CaptionRecord>& val, const FeatureTable& features,
                        const Vocabulary& vocab, const std::vector<double>& rates_emb,
                        const std::vector<double>& rates_hid, int budget_epochs, int jobs = 1);

}  // namespace capgan
