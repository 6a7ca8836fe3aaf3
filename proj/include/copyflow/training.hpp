// Copyright 2026 The copyflow Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "copyflow/corpus.hpp"
#include "copyflow/model.hpp"
#include "copyflow/param_store.hpp"
#include "copyflow/vocab.hpp"

namespace copyflow {

inline constexpr double kKlFloor = 1e-10;

// ---------------------------------------------------------------------------
// Encoded data.

struct EncodedTurn {
  std::vector<int> prev_response;
  std::vector<int> user;
  std::vector<int> response;
  std::vector<int> span;  // gold state span; empty when unannotated
  bool thanks_only = false;
};

struct EncodedSession {
  std::string id;
  std::vector<EncodedTurn> turns;
  /// Member of the annotated set: gold spans are used for this session.
  bool annotated = false;
};

/// Every user, delexicalized response and span token plus the schema values,
/// requestable names and placeholders.
Vocabulary build_vocabulary(const std::vector<DialogueSession>& sessions, const SlotSchema& schema);

/// Gold spans are kept only where `annotated[i]` is set (all sessions when the
/// mask is empty and the session carries states).
std::vector<EncodedSession> encode_sessions(const std::vector<DialogueSession>& sessions,
                                            const Vocabulary& vocab, const SlotSchema& schema,
                                            const std::vector<bool>& annotated = {});

/// Seeded session-level selection of round(proportion * count) annotated
/// sessions. Throws ConfigError for a proportion outside [0, 1].
std::vector<bool> supervision_mask(std::size_t count, double proportion, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Losses.

enum class TrainingMode { supervised, semi_supervised, unsupervised };
std::string to_string(TrainingMode mode);
/// 0 -> unsupervised, 1 -> supervised, otherwise semi-supervised.
TrainingMode mode_for(double supervision);

struct LossBreakdown {
  double response_nll = 0.0;
  double span_prior_nll = 0.0;
  double span_posterior_nll = 0.0;
  double reconstruction_nll = 0.0;
  double kl_term = 0.0;  // unweighted sum of step-wise KL(q || p)
  double lambda = 0.0;
  /// response + span_prior + span_posterior + reconstruction + lambda * kl
  double total = 0.0;
  std::size_t sessions = 0;
  std::size_t ignored_gold_spans = 0;

  void add(const LossBreakdown& other);
  void finish();  // recomputes `total`
};

struct LossOptions {
  double kl_floor = kKlFloor;
  /// Span decoding used for sessions without gold spans.
  std::size_t span_len = 8;
};

/// Builds the loss of one session on `model`'s tape. `unsupervised` selects the
/// reconstruction objective (gold spans ignored); otherwise annotated sessions
/// are teacher-forced on gold spans and the rest contribute response NLL and KL.
struct SessionLoss {
  Var total;
  LossBreakdown parts;
};
SessionLoss session_loss(const BoundModel& model, const EncodedSession& session, bool unsupervised,
                         double lambda, const LossOptions& options = {});

/// Semi-supervised objective over a batch, summed over sessions. Fills `grads`
/// (same scale as the returned total) when non-null. Throws DataError on an
/// empty batch.
LossBreakdown loss_semi_supervised(std::span<const EncodedSession> batch, const ParamStore& params,
                                   const ModelConfig& config, double lambda,
                                   GradientMap* grads = nullptr, const LossOptions& options = {});
/// Unsupervised objective (response + reconstruction + lambda KL). Gold spans
/// are ignored and counted in `ignored_gold_spans`.
LossBreakdown loss_unsupervised(std::span<const EncodedSession> batch, const ParamStore& params,
                                const ModelConfig& config, double lambda,
                                GradientMap* grads = nullptr, const LossOptions& options = {});

struct EquivalencePair {
  double lhs;
  double rhs;
};
/// (log p_i, -KL(onehot(i) || p)).
EquivalencePair onehot_kl_identity(std::span<const double> p, std::size_t i);

struct LambdaSchedule {
  enum class Kind { constant, linear };
  Kind kind = Kind::constant;
  double start = 0.1;
  double end = 0.001;
  std::size_t steps_per_epoch = 1;
};
double lambda_at(std::size_t step, const LambdaSchedule& schedule);

// ---------------------------------------------------------------------------
// Batch gradients. The parallel form runs sessions on OpenMP threads and
// reduces per-session results in session order, so it matches the serial form
// bit for bit.

struct BatchResult {
  LossBreakdown loss;
  GradientMap grads;
};
BatchResult batch_gradient_serial(std::span<const EncodedSession> batch, const ParamStore& params,
                                  const ModelConfig& config, bool unsupervised, double lambda,
                                  const LossOptions& options);
BatchResult batch_gradient_parallel(std::span<const EncodedSession> batch,
                                    const ParamStore& params, const ModelConfig& config,
                                    bool unsupervised, double lambda, const LossOptions& options);
/// Loss only, on a non-recording tape.
LossBreakdown batch_loss(std::span<const EncodedSession> batch, const ParamStore& params,
                         const ModelConfig& config, bool unsupervised, double lambda,
                         const LossOptions& options, bool parallel);

// ---------------------------------------------------------------------------
// Training loop.

struct TrainingConfig {
  double learning_rate = 0.003;
  std::size_t batch_size = 32;
  std::size_t hidden = 50;
  std::size_t embed = 50;
  std::size_t utterance_len = 16;
  std::size_t span_len = 8;
  LambdaSchedule lambda;
  double supervision = 1.0;
  std::uint64_t seed = 1;
  std::size_t patience = 3;
  std::size_t max_epochs = 30;
  /// Drop the unannotated sessions altogether.
  bool use_unlabeled = true;
  /// Include the KL term. Off gives the ablation without regularization.
  bool posterior_regularization = true;
  double clip_norm = 5.0;
  bool parallel = true;

  TrainingMode mode() const { return mode_for(supervision); }
  /// Throws ConfigError on invalid settings.
  void validate() const;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double lambda = 0.0;
  LossBreakdown train;
  LossBreakdown validation;
  double seconds = 0.0;
};

struct TrainingData {
  Vocabulary vocab;
  std::vector<EncodedSession> train;
  std::vector<EncodedSession> validation;
  std::size_t annotated = 0;
  std::size_t unannotated = 0;
};

/// Builds the vocabulary from the training split and applies the supervision
/// mask to both training and validation sessions.
TrainingData prepare_training_data(const CorpusSplit& split, const SlotSchema& schema,
                                   const TrainingConfig& config);

ModelConfig model_config(const TrainingConfig& config, std::size_t vocab_size);

struct FitResult {
  ParamStore params;  // best validation checkpoint
  std::vector<EpochRecord> log;
  std::size_t best_epoch = 0;
  std::uint64_t steps = 0;
  bool diverged = false;
  std::string message;
  std::string rng_state;
};

/// Minibatch Adam with early stopping on validation total loss. Training stops
/// once `patience` epochs pass without improvement (patience 0: one epoch).
/// A non-finite loss or gradient ends training with `diverged` set and the
/// last good parameters returned.
FitResult fit(const TrainingData& data, const TrainingConfig& config,
              const std::function<void(const EpochRecord&)>& on_epoch = {});

/// Tab-separated epoch log. Deterministic: wall-clock time is written by
/// `timing_tsv` instead.
std::string training_log_tsv(const std::vector<EpochRecord>& log, TrainingMode mode);
std::string timing_tsv(const std::vector<EpochRecord>& log);

}  // namespace copyflow
