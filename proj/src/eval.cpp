// Copyright (c) 2026 the capgan authors
// SPDX-License-Identifier: Apache-2.0

#include "capgan/eval.hpp"

#include <atomic>
#include <cmath>
#include <limits>
#include <map>
#include <sstream>
#include <stdexcept>
#include <thread>

namespace capgan {

namespace {

std::map<std::vector<std::string>, long long> ngram_counts(const TokenSeq& tokens, int n) {
  std::map<std::vector<std::string>, long long> counts;
  if (static_cast<int>(tokens.size()) < n) return counts;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
    ++counts[std::vector<std::string>(tokens.begin() + i, tokens.begin() + i + n)];
  }
  return counts;
}

}  // namespace

std::pair<long long, long long> ngram_precision(const std::vector<TokenSeq>& candidates,
                                                const std::vector<std::vector<TokenSeq>>& references,
                                                int n) {
  if (n < 1) throw std::invalid_argument("ngram_precision: order must be >= 1");
  if (candidates.size() != references.size()) {
    throw std::invalid_argument("ngram_precision: " + std::to_string(candidates.size()) +
                                " candidates vs " + std::to_string(references.size()) +
                                " reference sets");
  }
  long long matches = 0, total = 0;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    auto cand_counts = ngram_counts(candidates[i], n);
    std::map<std::vector<std::string>, long long> ref_max;
    for (const auto& ref : references[i]) {
      for (const auto& [gram, count] : ngram_counts(ref, n)) {
        auto& slot = ref_max[gram];
        slot = std::max(slot, count);
      }
    }
    for (const auto& [gram, count] : cand_counts) {
      total += count;
      auto it = ref_max.find(gram);
      if (it != ref_max.end()) matches += std::min(count, it->second);
    }
  }
  return {matches, total};
}

BleuReport bleu4(const std::vector<TokenSeq>& candidates,
                 const std::vector<std::vector<TokenSeq>>& references,
                 const Smoothing& smoothing) {
  if (candidates.empty()) throw std::invalid_argument("bleu4: empty corpus");
  if (candidates.size() != references.size()) {
    throw std::invalid_argument("bleu4: candidate/reference count mismatch");
  }

  BleuReport report;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    if (references[i].empty()) {
      throw std::invalid_argument("bleu4: candidate " + std::to_string(i) + " has no references");
    }
    const std::size_t c = candidates[i].size();
    report.candidate_length += c;
    // closest reference length; ties go to the shorter reference
    std::size_t best_len = references[i][0].size();
    for (const auto& ref : references[i]) {
      const auto d_new = std::llabs(static_cast<long long>(ref.size()) - static_cast<long long>(c));
      const auto d_old = std::llabs(static_cast<long long>(best_len) - static_cast<long long>(c));
      if (d_new < d_old || (d_new == d_old && ref.size() < best_len)) best_len = ref.size();
    }
    report.reference_length += best_len;
  }

  for (int n = 1; n <= 4; ++n) {
    const auto [matches, total] = ngram_precision(candidates, references, n);
    double p = 0.0;
    if (smoothing.kind == Smoothing::Kind::add_k && n >= 2) {
      p = total > 0 ? (static_cast<double>(matches) + smoothing.k) /
                          (static_cast<double>(total) + smoothing.k)
                    : 0.0;
    } else {
      p = total > 0 ? static_cast<double>(matches) / static_cast<double>(total) : 0.0;
    }
    report.precisions[n - 1] = p;
  }

  const double c = static_cast<double>(report.candidate_length);
  const double r = static_cast<double>(report.reference_length);
  report.brevity_penalty = c == 0.0 ? 0.0 : std::min(1.0, std::exp(1.0 - r / c));

  double log_sum = 0.0;
  bool any_zero = false;
  for (double p : report.precisions) {
    if (p <= 0.0) {
      any_zero = true;
      break;
    }
    log_sum += 0.25 * std::log(p);
  }
  report.bleu4 = any_zero ? 0.0 : report.brevity_penalty * std::exp(log_sum);
  return report;
}

EvalResult evaluate(const GeneratorParams& g, const std::vector<CaptionRecord>& dataset,
                    const FeatureTable& features, const Vocabulary& vocab,
                    const DecodeConfig& cfg) {
  if (dataset.empty()) throw std::invalid_argument("evaluate: empty dataset");

  std::vector<TokenSeq> candidates;
  std::vector<std::vector<TokenSeq>> references;
  EvalResult result;
  candidates.reserve(dataset.size());
  references.reserve(dataset.size());

  for (const auto& record : dataset) {
    Tensor image = features.row(record.feature_row);
    std::vector<int> ids = greedy_decode(g, image, cfg);
    TokenSeq cand = vocab.decode(ids);

    std::vector<TokenSeq> refs;
    refs.reserve(record.references.size());
    for (const auto& ref_ids : record.references) refs.push_back(vocab.decode(ref_ids));

    PerImageEval row;
    row.image_id = record.image_id;
    {
      std::ostringstream os;
      for (std::size_t i = 0; i < cand.size(); ++i) os << (i ? " " : "") << cand[i];
      row.candidate = os.str();
    }
    for (const auto& ref : refs) {
      std::ostringstream os;
      for (std::size_t i = 0; i < ref.size(); ++i) os << (i ? " " : "") << ref[i];
      row.references.push_back(os.str());
    }
    row.sentence_bleu4 = bleu4({cand}, {refs}).bleu4;
    result.per_image.push_back(std::move(row));

    candidates.push_back(std::move(cand));
    references.push_back(std::move(refs));
  }
  result.corpus = bleu4(candidates, references);
  return result;
}

// ---- dropout sweep -----------------------------------------------------------

std::string SweepGrid::to_csv() const {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(6);
  os << "p_hidden\\p_emb";
  for (double rate : embedding_rates) os << "," << rate;
  os << "\n";
  for (std::size_t row = 0; row < hidden_rates.size(); ++row) {
    os << hidden_rates[row];
    for (std::size_t col = 0; col < embedding_rates.size(); ++col) {
      os << "," << cells[row][col].val_bleu4;
    }
    os << "\n";
  }
  return os.str();
}

SweepGrid dropout_sweep(const TrainConfig& base, const ModelDims& dims,
                        const std::vector<CaptionRecord>& train,
                        const std::vector<CaptionRecord>& val, const FeatureTable& features,
                        const Vocabulary& vocab, const std::vector<double>& rates_emb,
                        const std::vector<double>& rates_hid, int budget_epochs, int jobs) {
  if (rates_emb.empty() || rates_hid.empty()) {
    throw std::invalid_argument("dropout_sweep: rate lists must be non-empty");
  }
  for (double r : rates_emb) {
    if (r < 0.0 || r >= 1.0) {
      throw std::invalid_argument("dropout_sweep: embedding rate " + std::to_string(r) +
                                  " outside [0, 1)");
    }
  }
  for (double r : rates_hid) {
    if (r < 0.0 || r >= 1.0) {
      throw std::invalid_argument("dropout_sweep: hidden rate " + std::to_string(r) +
                                  " outside [0, 1)");
    }
  }
  if (budget_epochs < 1) throw std::invalid_argument("dropout_sweep: budget must be >= 1");

  SweepGrid grid;
  grid.embedding_rates = rates_emb;
  grid.hidden_rates = rates_hid;
  grid.cells.assign(rates_hid.size(), std::vector<SweepCell>(rates_emb.size()));

  auto run_cell = [&](std::size_t row, std::size_t col) {
    TrainConfig cfg = base;
    cfg.dropout.p_hidden = rates_hid[row];
    cfg.dropout.p_embedding = rates_emb[col];
    cfg.dropout.active = true;
    cfg.max_epochs = budget_epochs;
    SweepCell& cell = grid.cells[row][col];
    try {
      auto [g, d] = make_models(dims, cfg);
      TrainResult result =
          train_loop(cfg, train, val, features, vocab, std::move(g), std::move(d));
      cell.val_bleu4 = result.best_bleu4;
      cell.epochs_run = static_cast<int>(result.history.size());
      cell.history = std::move(result.history);
    } catch (const TrainingError&) {
      cell.val_bleu4 = 0.0;
      cell.aborted = true;
    }
  };

  const std::size_t total = rates_hid.size() * rates_emb.size();
  if (jobs <= 1) {
    for (std::size_t i = 0; i < total; ++i) run_cell(i / rates_emb.size(), i % rates_emb.size());
  } else {
    std::atomic<std::size_t> cursor{0};
    auto worker = [&] {
      for (std::size_t i = cursor.fetch_add(1); i < total; i = cursor.fetch_add(1)) {
        run_cell(i / rates_emb.size(), i % rates_emb.size());
      }
    };
    std::vector<std::thread> pool;
    const std::size_t n_threads = std::min<std::size_t>(static_cast<std::size_t>(jobs), total);
    pool.reserve(n_threads);
    for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  return grid;
}

}  // namespace capgan
