// Copyright (c) 2026 the capgan authors
// SPDX-License-Identifier: Apache-2.0
//
// Adversarial training: the critic-difference objective with a gradient
// penalty on interpolated distribution sequences (default), the log-loss
// variant, Adam, and the alternating update loop with validation-driven
// early stopping.
#pragma once

#include <functional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "capgan/data.hpp"
#include "capgan/model.hpp"

namespace capgan {

enum class Objective { wgan_gp, log_loss };

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.5;
  double beta2 = 0.9;
  double eps = 1e-8;
};

struct TrainConfig {
  double lambda_gp = 9.0;
  DropoutSpec dropout{0.0, 0.5, true};  // hidden-site dropout is the generator's noise
  std::size_t batch_size = 512;
  int critic_ratio = 5;  // discriminator updates per generator update
  Objective objective = Objective::wgan_gp;
  bool log_loss_penalty = false;  // log-loss normally runs without the penalty term
  AdamConfig adam;
  int patience = 5;
  int max_epochs = 200;
  std::uint64_t seed = 42;
  std::size_t max_len = 20;
  bool split_embedding = false;
  bool freeze_embedding = false;

  void validate() const;
};

// Fresh generator/discriminator pair per the config's embedding policy,
// initialized from the config seed.
std::pair<GeneratorParams, DiscriminatorParams> make_models(const ModelDims& dims,
                                                            const TrainConfig& cfg);

// ---- interpolation ---------------------------------------------------------

struct InterpolationResult {
  std::vector<Tensor> x_hat;  // per-step convex combinations, still on the simplex
  std::vector<double> eps;    // one draw per batch item, shared across steps
};

InterpolationResult interpolate(const std::vector<Tensor>& x, const std::vector<Tensor>& x_tilde,
                                Rng& rng);
std::vector<Tensor> interpolate_with_eps(const std::vector<Tensor>& x,
                                         const std::vector<Tensor>& x_tilde,
                                         const std::vector<double>& eps);

// ---- gradient penalty ------------------------------------------------------

// A critic maps the interpolated step sequence to one score per item.
using CriticFn = std::function<Tensor(const std::vector<Tensor>& x_hat_steps)>;

// lambda * mean over items of (||grad_xhat critic||_2 - 1)^2. The returned
// scalar is recorded on `rec` and remains differentiable with respect to
// every recorded tensor the critic used.
Tensor gradient_penalty(const CriticFn& critic, const std::vector<Tensor>& x_hat, double lambda,
                        DiffRecord& rec);
Tensor gradient_penalty(const DiscriminatorParams& bound_d, const Tensor& images,
                        const std::vector<Tensor>& x_hat, const Tensor& mask, double lambda,
                        DiffRecord& rec);

// ---- losses ----------------------------------------------------------------

struct LossResult {
  Tensor loss;
  double penalty = 0.0;
};

// Critic loss on one batch. The fake sequence comes from a teacher-forced
// generator pass with dropout active, taken as a constant: only the
// discriminator's parameters are differentiated here.
LossResult discriminator_loss(const TrainConfig& cfg, const DiscriminatorParams& bound_d,
                              const GeneratorParams& g, const Batch& batch, Rng& rng,
                              DiffRecord& rec);

// Generator loss; gradients flow through the discriminator into the
// generator's softmax outputs and parameters.
Tensor generator_loss(const TrainConfig& cfg, const BoundPair& pair, const Batch& batch,
                      Rng& rng);

// ---- optimizer -------------------------------------------------------------

class Adam {
public:
  explicit Adam(AdamConfig cfg) : cfg_(cfg) {}

  // Applies one update; params and grads are index-aligned. Parameter
  // tensors are replaced, never mutated in place.
  void step(const NamedParams& params, const std::vector<Tensor>& grads);

private:
  AdamConfig cfg_;
  long long t_ = 0;
  std::unordered_map<std::string, std::pair<std::vector<double>, std::vector<double>>> state_;
};

// ---- the loop ---------------------------------------------------------------

class TrainingError : public std::runtime_error {
public:
  TrainingError(const std::string& msg, long long step)
      : std::runtime_error(msg + " (training step " + std::to_string(step) + ")"),
        step_(step) {}
  long long step() const { return step_; }

private:
  long long step_;
};

// Endless shuffled batch stream; every full pass over the records counts
// as one epoch.
class BatchFeed {
public:
  BatchFeed(const std::vector<CaptionRecord>& records, const FeatureTable& features,
            std::size_t vocab_size, std::size_t batch_size, std::uint64_t seed);

  const Batch& next();
  long long epochs_completed() const { return epochs_completed_; }
  std::size_t batches_per_epoch() const { return queue_.size(); }

private:
  void refill();

  const std::vector<CaptionRecord>* records_;
  const FeatureTable* features_;
  std::size_t vocab_size_, batch_size_;
  Rng rng_;
  std::vector<Batch> queue_;
  std::size_t pos_ = 0;
  long long epochs_completed_ = 0;
};

struct TrainerState {
  TrainerState(GeneratorParams g_in, DiscriminatorParams d_in, const TrainConfig& cfg);

  GeneratorParams g;
  DiscriminatorParams d;
  Adam adam_g, adam_d;
  Rng noise;  // dropout masks and interpolation draws
  long long step = 0;

  bool generator_trains_embedding() const;
  bool discriminator_trains_embedding() const;
};

struct StepStats {
  double d_loss = 0.0;
  double g_loss = 0.0;
  double penalty = 0.0;
};

// critic_ratio discriminator updates followed by one generator update,
// each on a fresh batch from the feed.
StepStats train_step(const TrainConfig& cfg, TrainerState& state, BatchFeed& feed);

struct EpochHistory {
  int epoch = 0;
  double d_loss = 0.0;
  double g_loss = 0.0;
  double penalty = 0.0;
  double val_bleu4 = 0.0;
  double wallclock_s = 0.0;
};

// Tracks the best metric value; stops after `patience` consecutive
// non-improving observations.
class EarlyStopper {
public:
  explicit EarlyStopper(int patience) : patience_(patience) {}

  bool observe(double metric);  // true when the metric improved
  bool should_stop() const { return stall_ >= patience_; }
  double best() const { return best_; }
  int best_index() const { return best_index_; }  // 1-based observation index

private:
  int patience_;
  double best_ = -1.0;
  int best_index_ = 0;
  int stall_ = 0;
  int seen_ = 0;
};

struct TrainHooks {
  // Replaces the default validation metric (greedy decode + corpus BLEU-4).
  std::function<double(const GeneratorParams& g, int epoch)> metric;
  // Called after each epoch's bookkeeping; return false to stop training.
  std::function<bool(const EpochHistory& row)> on_epoch;
};

struct TrainResult {
  std::vector<EpochHistory> history;
  double best_bleu4 = 0.0;
  int best_epoch = 0;
  GeneratorParams generator;          // parameters of the best epoch
  DiscriminatorParams discriminator;  // parameters of the best epoch
};

// Alternating updates with one validation pass per epoch. Stops on
// patience, max_epochs, or the on_epoch hook, and returns the best-metric
// parameters.
TrainResult train_loop(const TrainConfig& cfg, const std::vector<CaptionRecord>& train,
                       const std::vector<CaptionRecord>& val, const FeatureTable& features,
                       const Vocabulary& vocab, GeneratorParams g, DiscriminatorParams d,
                       const TrainHooks& hooks = {});

}  // namespace capgan
