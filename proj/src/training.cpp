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

#include "copyflow/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <limits>
#include <random>
#include <sstream>

#include "copyflow/errors.hpp"
#include "copyflow/ops.hpp"

namespace copyflow {

Vocabulary build_vocabulary(const std::vector<DialogueSession>& sessions,
                            const SlotSchema& schema) {
  std::vector<std::string> words = schema.all_values();
  words.insert(words.end(), schema.requestable.begin(), schema.requestable.end());
  for (const auto& p : schema.placeholders()) words.push_back(p);
  for (const auto& s : sessions) {
    for (const auto& t : s.turns) {
      words.insert(words.end(), t.user.begin(), t.user.end());
      words.insert(words.end(), t.resp_delex.begin(), t.resp_delex.end());
      if (t.state) {
        const auto span = t.state->to_span(schema);
        words.insert(words.end(), span.begin(), span.end());
      }
    }
  }
  return Vocabulary::build(words);
}

std::vector<EncodedSession> encode_sessions(const std::vector<DialogueSession>& sessions,
                                            const Vocabulary& vocab, const SlotSchema& schema,
                                            const std::vector<bool>& annotated) {
  if (!annotated.empty() && annotated.size() != sessions.size()) {
    throw ContractError("encode_sessions: mask length differs from session count");
  }
  std::vector<EncodedSession> out;
  out.reserve(sessions.size());
  for (std::size_t i = 0; i < sessions.size(); ++i) {
    const auto& s = sessions[i];
    EncodedSession e;
    e.id = s.id;
    bool has_states = !s.turns.empty();
    for (const auto& t : s.turns) has_states = has_states && t.state.has_value();
    e.annotated = has_states && (annotated.empty() || annotated[i]);
    std::vector<int> prev;
    for (const auto& t : s.turns) {
      EncodedTurn et;
      et.prev_response = prev;
      et.user = vocab.encode(t.user);
      et.response = vocab.encode(t.resp_delex);
      et.thanks_only = t.thanks_only;
      if (e.annotated) et.span = vocab.encode(t.state->to_span(schema));
      prev = et.response;
      e.turns.push_back(std::move(et));
    }
    out.push_back(std::move(e));
  }
  return out;
}

std::vector<bool> supervision_mask(std::size_t count, double proportion, std::uint64_t seed) {
  if (!(proportion >= 0.0 && proportion <= 1.0)) {
    throw ConfigError("supervision proportion must lie in [0, 1]");
  }
  std::vector<std::size_t> order(count);
  for (std::size_t i = 0; i < count; ++i) order[i] = i;
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  const auto chosen = static_cast<std::size_t>(std::llround(proportion * static_cast<double>(count)));
  std::vector<bool> mask(count, false);
  for (std::size_t i = 0; i < chosen; ++i) mask[order[i]] = true;
  return mask;
}

std::string to_string(TrainingMode mode) {
  switch (mode) {
    case TrainingMode::supervised:
      return "supervised";
    case TrainingMode::semi_supervised:
      return "semi-supervised";
    case TrainingMode::unsupervised:
      return "unsupervised";
  }
  return "unknown";
}

TrainingMode mode_for(double supervision) {
  if (supervision <= 0.0) return TrainingMode::unsupervised;
  if (supervision >= 1.0) return TrainingMode::supervised;
  return TrainingMode::semi_supervised;
}

void LossBreakdown::add(const LossBreakdown& o) {
  response_nll += o.response_nll;
  span_prior_nll += o.span_prior_nll;
  span_posterior_nll += o.span_posterior_nll;
  reconstruction_nll += o.reconstruction_nll;
  kl_term += o.kl_term;
  lambda = o.lambda;
  sessions += o.sessions;
  ignored_gold_spans += o.ignored_gold_spans;
  finish();
}

void LossBreakdown::finish() {
  total = response_nll + span_prior_nll + span_posterior_nll + reconstruction_nll +
          lambda * kl_term;
}

namespace {

Var sum_terms(Tape& tape, const std::vector<Var>& terms) {
  if (terms.empty()) return tape.constant(Tensor::scalar(0.0));
  return ops::add_n(terms);
}

void add_nll(const std::vector<MixtureDistribution>& steps, std::span<const int> targets,
             std::vector<Var>& out) {
  for (std::size_t j = 0; j < targets.size() && j < steps.size(); ++j) {
    out.push_back(ops::neg_log(steps[j].probs, static_cast<std::size_t>(targets[j])));
  }
}

}  // namespace

SessionLoss session_loss(const BoundModel& model, const EncodedSession& session, bool unsupervised,
                         double lambda, const LossOptions& options) {
  Tape& tape = *model.tape;
  const std::size_t n = model.config.utterance_len;
  const bool gold = !unsupervised && session.annotated;
  SpanDecodeConfig decode;
  decode.span_len = options.span_len;
  decode.mode = unsupervised ? SpanDecodeConfig::Mode::fixed_length
                             : SpanDecodeConfig::Mode::eos_terminated;
  const SpanPolicy free_running = SpanPolicy::free_running(decode);

  std::vector<Var> resp, prior_nll, post_nll, recon, kl;
  EncodedSequence prior_prev, post_prev;
  bool has_prev = false;
  SessionLoss out;
  for (std::size_t t = 0; t < session.turns.size(); ++t) {
    const EncodedTurn& turn = session.turns[t];
    TurnState prior_state{t, turn.prev_response, turn.user, has_prev ? &prior_prev : nullptr};
    TurnState post_state{t, turn.prev_response, turn.user, has_prev ? &post_prev : nullptr};
    if (unsupervised && !turn.span.empty()) ++out.parts.ignored_gold_spans;

    SpanRun prior, post;
    if (gold) {
      if (turn.span.empty()) throw ContractError("annotated session without a gold span");
      const SpanPolicy teacher = SpanPolicy::teacher(turn.span);
      prior = prior_span_distributions(model, prior_state, teacher);
      post = posterior_span_distributions(model, post_state, turn.response, teacher);
      add_nll(prior.span.steps, turn.span, prior_nll);
      add_nll(post.span.steps, turn.span, post_nll);
    } else {
      post = posterior_span_distributions(model, post_state, turn.response, free_running);
      prior = prior_span_distributions(
          model, prior_state, lambda != 0.0 ? SpanPolicy::teacher(post.span.tokens) : free_running);
      const std::size_t steps = std::min(prior.span.steps.size(), post.span.steps.size());
      for (std::size_t i = 0; i < steps; ++i) {
        kl.push_back(
            ops::kl_divergence(post.span.steps[i].probs, prior.span.steps[i].probs, options.kl_floor));
      }
    }

    const ResponseMemory memory = response_memory(model, prior.context, prior.span, gold);
    const auto targets = response_targets(turn.response, n);
    add_nll(response_distributions(model, memory, targets), targets, resp);

    if (unsupervised) {
      const ResponseMemory rmem = reconstruction_memory(model, post.span);
      const auto rtargets = reconstruction_targets(turn.prev_response, turn.user, turn.response, n);
      add_nll(reconstruction_distributions(model, rmem, rtargets), rtargets, recon);
    }

    prior_prev = prior.span.as_source(gold);
    post_prev = post.span.as_source(gold);
    has_prev = true;
  }

  Var resp_sum = sum_terms(tape, resp);
  Var prior_sum = sum_terms(tape, prior_nll);
  Var post_sum = sum_terms(tape, post_nll);
  Var recon_sum = sum_terms(tape, recon);
  Var kl_sum = sum_terms(tape, kl);
  std::vector<Var> total{resp_sum, prior_sum, post_sum, recon_sum};
  if (lambda != 0.0) total.push_back(ops::scale(kl_sum, lambda));
  out.total = ops::add_n(total);

  LossBreakdown& p = out.parts;
  p.response_nll = resp_sum.scalar();
  p.span_prior_nll = prior_sum.scalar();
  p.span_posterior_nll = post_sum.scalar();
  p.reconstruction_nll = recon_sum.scalar();
  p.kl_term = kl_sum.scalar();
  p.lambda = lambda;
  p.sessions = 1;
  p.finish();
  return out;
}

namespace {

struct SessionResult {
  LossBreakdown loss;
  GradientMap grads;
  std::exception_ptr error;
};

SessionResult run_session(const EncodedSession& session, const ParamStore& params,
                          const ModelConfig& config, bool unsupervised, double lambda,
                          const LossOptions& options, bool with_grad) {
  SessionResult r;
  try {
    Tape tape(with_grad);
    BoundModel model(tape, params, config, Phase::training);
    SessionLoss loss = session_loss(model, session, unsupervised, lambda, options);
    r.loss = loss.parts;
    if (with_grad) r.grads = backward(tape, loss.total, params);
  } catch (...) {
    r.error = std::current_exception();
  }
  return r;
}

BatchResult reduce(std::vector<SessionResult>& results, double lambda) {
  BatchResult out;
  out.loss.lambda = lambda;
  for (auto& r : results) {
    if (r.error) std::rethrow_exception(r.error);
    out.loss.add(r.loss);
    if (out.grads.empty()) {
      out.grads = std::move(r.grads);
    } else {
      accumulate(out.grads, r.grads);
    }
    r.grads.clear();
  }
  return out;
}

std::vector<SessionResult> run_batch(std::span<const EncodedSession> batch,
                                     const ParamStore& params, const ModelConfig& config,
                                     bool unsupervised, double lambda, const LossOptions& options,
                                     bool with_grad, bool parallel) {
  std::vector<SessionResult> results(batch.size());
  const auto count = static_cast<long>(batch.size());
  if (parallel) {
#pragma omp parallel for schedule(dynamic, 1)
    for (long i = 0; i < count; ++i) {
      results[static_cast<std::size_t>(i)] =
          run_session(batch[static_cast<std::size_t>(i)], params, config, unsupervised, lambda,
                      options, with_grad);
    }
  } else {
    for (long i = 0; i < count; ++i) {
      results[static_cast<std::size_t>(i)] =
          run_session(batch[static_cast<std::size_t>(i)], params, config, unsupervised, lambda,
                      options, with_grad);
    }
  }
  return results;
}

LossBreakdown objective(std::span<const EncodedSession> batch, const ParamStore& params,
                        const ModelConfig& config, bool unsupervised, double lambda,
                        GradientMap* grads, const LossOptions& options) {
  if (batch.empty()) throw DataError("empty batch");
  if (grads) {
    BatchResult r = batch_gradient_serial(batch, params, config, unsupervised, lambda, options);
    *grads = std::move(r.grads);
    return r.loss;
  }
  return batch_loss(batch, params, config, unsupervised, lambda, options, false);
}

}  // namespace

BatchResult batch_gradient_serial(std::span<const EncodedSession> batch, const ParamStore& params,
                                  const ModelConfig& config, bool unsupervised, double lambda,
                                  const LossOptions& options) {
  BatchResult out;
  out.loss.lambda = lambda;
  for (const auto& session : batch) {
    SessionResult r = run_session(session, params, config, unsupervised, lambda, options, true);
    if (r.error) std::rethrow_exception(r.error);
    out.loss.add(r.loss);
    if (out.grads.empty()) {
      out.grads = std::move(r.grads);
    } else {
      accumulate(out.grads, r.grads);
    }
  }
  return out;
}

BatchResult batch_gradient_parallel(std::span<const EncodedSession> batch,
                                    const ParamStore& params, const ModelConfig& config,
                                    bool unsupervised, double lambda, const LossOptions& options) {
  auto results = run_batch(batch, params, config, unsupervised, lambda, options, true, true);
  return reduce(results, lambda);
}

LossBreakdown batch_loss(std::span<const EncodedSession> batch, const ParamStore& params,
                         const ModelConfig& config, bool unsupervised, double lambda,
                         const LossOptions& options, bool parallel) {
  auto results = run_batch(batch, params, config, unsupervised, lambda, options, false, parallel);
  return reduce(results, lambda).loss;
}

LossBreakdown loss_semi_supervised(std::span<const EncodedSession> batch, const ParamStore& params,
                                   const ModelConfig& config, double lambda, GradientMap* grads,
                                   const LossOptions& options) {
  return objective(batch, params, config, false, lambda, grads, options);
}

LossBreakdown loss_unsupervised(std::span<const EncodedSession> batch, const ParamStore& params,
                                const ModelConfig& config, double lambda, GradientMap* grads,
                                const LossOptions& options) {
  return objective(batch, params, config, true, lambda, grads, options);
}

EquivalencePair onehot_kl_identity(std::span<const double> p, std::size_t i) {
  if (i >= p.size()) throw DimensionError("onehot_kl_identity: index out of range");
  const double lhs = std::log(p[i]);
  if (p[i] == 0.0) return {lhs, lhs};
  std::vector<double> one_hot(p.size(), 0.0);
  one_hot[i] = 1.0;
  return {lhs, -kl_divergence(one_hot, p, std::numeric_limits<double>::min())};
}

double lambda_at(std::size_t step, const LambdaSchedule& schedule) {
  if (schedule.kind == LambdaSchedule::Kind::constant) return schedule.start;
  const std::size_t steps = std::max<std::size_t>(schedule.steps_per_epoch, 1);
  if (step >= steps) return schedule.end;
  const double frac = static_cast<double>(step) / static_cast<double>(steps);
  return schedule.start + (schedule.end - schedule.start) * frac;
}

void TrainingConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
  if (batch_size == 0) throw ConfigError("batch size must be at least 1");
  if (hidden == 0 || embed == 0) throw ConfigError("hidden and embedding sizes must be positive");
  if (utterance_len == 0) throw ConfigError("utterance length must be at least 1");
  if (span_len == 0) throw ConfigError("span length must be at least 1");
  if (!(supervision >= 0.0 && supervision <= 1.0)) {
    throw ConfigError("supervision proportion must lie in [0, 1]");
  }
  if (max_epochs == 0) throw ConfigError("max_epochs must be at least 1");
  if (clip_norm < 0.0) throw ConfigError("clip norm must be non-negative");
  if (lambda.start < 0.0 || lambda.end < 0.0) throw ConfigError("lambda must be non-negative");
}

TrainingData prepare_training_data(const CorpusSplit& split, const SlotSchema& schema,
                                   const TrainingConfig& config) {
  config.validate();
  TrainingData data;
  data.vocab = build_vocabulary(split.train, schema);
  const auto train_mask = supervision_mask(split.train.size(), config.supervision, config.seed);
  const auto valid_mask =
      supervision_mask(split.validation.size(), config.supervision, config.seed + 7919);
  data.train = encode_sessions(split.train, data.vocab, schema, train_mask);
  data.validation = encode_sessions(split.validation, data.vocab, schema, valid_mask);
  if (config.mode() == TrainingMode::semi_supervised && !config.use_unlabeled) {
    auto keep = [](std::vector<EncodedSession>& v) {
      std::erase_if(v, [](const EncodedSession& s) { return !s.annotated; });
    };
    keep(data.train);
    keep(data.validation);
  }
  for (const auto& s : data.train) (s.annotated ? data.annotated : data.unannotated)++;
  return data;
}

ModelConfig model_config(const TrainingConfig& config, std::size_t vocab_size) {
  ModelConfig m;
  m.vocab_size = vocab_size;
  m.embed = config.embed;
  m.hidden = config.hidden;
  m.utterance_len = config.utterance_len;
  m.span_len = config.span_len;
  return m;
}

namespace {

bool all_finite(const GradientMap& grads) {
  for (const auto& [name, g] : grads)
    if (!g.all_finite()) return false;
  return true;
}

}  // namespace

FitResult fit(const TrainingData& data, const TrainingConfig& config,
              const std::function<void(const EpochRecord&)>& on_epoch) {
  config.validate();
  if (data.train.empty()) throw DataError("no training sessions");
  if (data.validation.empty()) throw DataError("no validation sessions");
  const ModelConfig mc = model_config(config, data.vocab.size());
  const bool unsupervised = config.mode() == TrainingMode::unsupervised;
  LossOptions options;
  options.span_len = config.span_len;

  ParamStore params;
  init_params(params, mc, config.seed);
  std::mt19937_64 rng(config.seed * 0x9E3779B97F4A7C15ull + 1);
  AdamConfig adam;
  adam.learning_rate = config.learning_rate;

  LambdaSchedule schedule = config.lambda;
  schedule.steps_per_epoch = (data.train.size() + config.batch_size - 1) / config.batch_size;
  auto lambda_for = [&](std::size_t step) {
    return config.posterior_regularization ? lambda_at(step, schedule) : 0.0;
  };

  FitResult result;
  result.params = params;
  double best = std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;
  std::size_t step = 0;
  std::vector<std::size_t> order(data.train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::vector<EncodedSession> batch;

  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    const auto started = std::chrono::steady_clock::now();
    std::shuffle(order.begin(), order.end(), rng);
    EpochRecord record;
    record.epoch = epoch;
    for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
      const std::size_t end = std::min(order.size(), begin + config.batch_size);
      batch.clear();
      for (std::size_t i = begin; i < end; ++i) batch.push_back(data.train[order[i]]);
      const double lambda = lambda_for(step);
      BatchResult r = config.parallel
                          ? batch_gradient_parallel(batch, params, mc, unsupervised, lambda, options)
                          : batch_gradient_serial(batch, params, mc, unsupervised, lambda, options);
      scale(r.grads, 1.0 / static_cast<double>(batch.size()));
      if (!std::isfinite(r.loss.total) || !all_finite(r.grads)) {
        result.diverged = true;
        result.message = "non-finite loss or gradient at step " + std::to_string(step + 1) +
                         " (epoch " + std::to_string(epoch) + ")";
        if (result.best_epoch == 0) result.params = params;
        result.steps = step;
        std::ostringstream rs;
        rs << rng;
        result.rng_state = rs.str();
        return result;
      }
      if (config.clip_norm > 0.0) {
        const double norm = global_norm(r.grads);
        if (norm > config.clip_norm) scale(r.grads, config.clip_norm / norm);
      }
      adam_step(params, r.grads, adam);
      record.train.add(r.loss);
      ++step;
    }
    record.lambda = lambda_for(step);
    record.validation = batch_loss(data.validation, params, mc, unsupervised, record.lambda,
                                   options, config.parallel);
    record.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    result.log.push_back(record);

    const double valid = record.validation.total;
    if (!std::isfinite(valid)) {
      result.diverged = true;
      result.message = "non-finite validation loss in epoch " + std::to_string(epoch);
      if (on_epoch) on_epoch(record);
      break;
    }
    if (valid < best) {
      best = valid;
      result.params = params;
      result.best_epoch = epoch;
      since_best = 0;
    } else {
      ++since_best;
    }
    if (on_epoch) on_epoch(record);
    if (since_best >= config.patience) break;
  }
  result.steps = step;
  std::ostringstream rs;
  rs << rng;
  result.rng_state = rs.str();
  return result;
}

namespace {

void append_breakdown(std::string& out, const LossBreakdown& l) {
  const double n = l.sessions ? static_cast<double>(l.sessions) : 1.0;
  char buf[256];
  std::snprintf(buf, sizeof(buf), "\t%.10g\t%.10g\t%.10g\t%.10g\t%.10g\t%.10g", l.total / n,
                l.response_nll / n, l.span_prior_nll / n, l.span_posterior_nll / n,
                l.reconstruction_nll / n, l.kl_term / n);
  out += buf;
}

}  // namespace

std::string training_log_tsv(const std::vector<EpochRecord>& log, TrainingMode mode) {
  std::string out =
      "epoch\tmode\tlambda\ttrain_total\ttrain_response\ttrain_span_prior\ttrain_span_posterior\t"
      "train_reconstruction\ttrain_kl\tvalid_total\tvalid_response\tvalid_span_prior\t"
      "valid_span_posterior\tvalid_reconstruction\tvalid_kl\n";
  for (const auto& r : log) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%zu\t%s\t%.10g", r.epoch, to_string(mode).c_str(), r.lambda);
    out += buf;
    append_breakdown(out, r.train);
    append_breakdown(out, r.validation);
    out += '\n';
  }
  return out;
}

std::string timing_tsv(const std::vector<EpochRecord>& log) {
  std::string out = "epoch\tseconds\n";
  for (const auto& r : log) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%zu\t%.3f\n", r.epoch, r.seconds);
    out += buf;
  }
  return out;
}

}  // namespace copyflow
