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

// copyflow: corpus generation, training, evaluation and a terminal chat loop.

#include <cstdlib>
#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "copyflow/checkpoint.hpp"
#include "copyflow/corpus.hpp"
#include "copyflow/decoding.hpp"
#include "copyflow/errors.hpp"
#include "copyflow/evaluation.hpp"
#include "copyflow/metrics.hpp"
#include "copyflow/training.hpp"
#include "json.hpp"

using namespace copyflow;
namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumerical = 3;

fs::path default_out() {
  const char* env = std::getenv("COPYFLOW_OUT");
  return env && *env ? fs::path(env) : fs::path(".");
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
  if (!out) throw DataError("write failed: " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string hex(std::uint64_t v) {
  std::ostringstream s;
  s << std::hex << std::setw(16) << std::setfill('0') << v;
  return s.str();
}

// ---------------------------------------------------------------------------
// gen-corpus

struct GenArgs {
  GeneratorConfig gen;
  std::uint64_t seed = 1;
  fs::path out = default_out();
  std::string camrest_dialogues;
  std::string camrest_db;
};

ojson split_manifest(const CorpusSplit& split) {
  auto ids = [](const std::vector<DialogueSession>& v) {
    ojson a = ojson::array();
    for (const auto& s : v) a.push_back(s.id);
    return a;
  };
  return ojson{{"sessions", split.train.size() + split.validation.size() + split.test.size()},
               {"train", ids(split.train)},
               {"validation", ids(split.validation)},
               {"test", ids(split.test)}};
}

int cmd_gen_corpus(const GenArgs& a) {
  std::vector<DialogueSession> sessions;
  KnowledgeBase kb;
  ojson resolved{{"command", "gen-corpus"}, {"out", a.out.string()}};
  if (!a.camrest_dialogues.empty()) {
    auto adapted = adapt_camrest(read_text(a.camrest_dialogues), read_text(a.camrest_db));
    sessions = std::move(adapted.sessions);
    kb = std::move(adapted.kb);
    resolved["camrest_dialogues"] = a.camrest_dialogues;
    resolved["camrest_db"] = a.camrest_db;
  } else {
    auto corpus = generate_synthetic_corpus(a.gen, a.seed);
    sessions = std::move(corpus.sessions);
    kb = std::move(corpus.kb);
    resolved["seed"] = a.seed;
    resolved["generator"] = ojson{{"slots", a.gen.slots},
                                  {"values_per_slot", a.gen.values_per_slot},
                                  {"entities", a.gen.entities},
                                  {"sessions", a.gen.sessions},
                                  {"min_turns", a.gen.min_turns},
                                  {"max_turns", a.gen.max_turns},
                                  {"templates_per_act", a.gen.templates_per_act},
                                  {"revision_prob", a.gen.revision_prob},
                                  {"request_prob", a.gen.request_prob},
                                  {"thanks_prob", a.gen.thanks_prob}};
  }
  fs::create_directories(a.out);
  save_corpus(a.out / "corpus.jsonl", sessions);
  save_kb(a.out / "kb.json", kb);
  write_text(a.out / "split.json", split_manifest(split_corpus(sessions)).dump(2) + "\n");
  write_text(a.out / "resolved-config.json", resolved.dump(2) + "\n");
  std::cout << "wrote " << sessions.size() << " sessions, " << kb.entities.size()
            << " entities, " << kb.schema.informable.size() << " informable slots to "
            << a.out.string() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// Checkpoint metadata

ojson model_json(const ModelConfig& m) {
  return ojson{{"vocab_size", m.vocab_size},
               {"embed", m.embed},
               {"hidden", m.hidden},
               {"utterance_len", m.utterance_len},
               {"span_len", m.span_len}};
}

ojson training_json(const TrainingConfig& c) {
  return ojson{{"learning_rate", c.learning_rate},
               {"batch_size", c.batch_size},
               {"hidden", c.hidden},
               {"embed", c.embed},
               {"utterance_len", c.utterance_len},
               {"span_len", c.span_len},
               {"lambda", ojson{{"kind", c.lambda.kind == LambdaSchedule::Kind::linear
                                             ? "linear"
                                             : "constant"},
                                {"start", c.lambda.start},
                                {"end", c.lambda.end}}},
               {"supervision", c.supervision},
               {"mode", to_string(c.mode())},
               {"seed", c.seed},
               {"patience", c.patience},
               {"max_epochs", c.max_epochs},
               {"use_unlabeled", c.use_unlabeled},
               {"posterior_regularization", c.posterior_regularization},
               {"clip_norm", c.clip_norm},
               {"parallel", c.parallel}};
}

struct LoadedModel {
  Checkpoint checkpoint;
  ModelConfig config;
  Vocabulary vocab;
  TrainingMode mode = TrainingMode::supervised;
  std::uint64_t seed = 1;
};

LoadedModel load_model(const fs::path& path) {
  LoadedModel m;
  m.checkpoint = load_checkpoint(path);
  ojson meta;
  try {
    meta = ojson::parse(m.checkpoint.metadata);
    const auto& mc = meta.at("model");
    m.config.vocab_size = mc.at("vocab_size").get<std::size_t>();
    m.config.embed = mc.at("embed").get<std::size_t>();
    m.config.hidden = mc.at("hidden").get<std::size_t>();
    m.config.utterance_len = mc.at("utterance_len").get<std::size_t>();
    m.config.span_len = mc.at("span_len").get<std::size_t>();
    m.vocab = Vocabulary(meta.at("vocab").get<std::vector<std::string>>());
    const auto mode = meta.at("training").at("mode").get<std::string>();
    m.mode = mode == "unsupervised"      ? TrainingMode::unsupervised
             : mode == "semi-supervised" ? TrainingMode::semi_supervised
                                         : TrainingMode::supervised;
    m.seed = meta.at("training").at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": checkpoint metadata unreadable (" + e.what() + ")");
  }
  if (hex(m.vocab.hash()) != meta.value("vocab_hash", "")) {
    throw DataError(path.string() + ": vocabulary does not match its recorded hash");
  }
  return m;
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
  fs::path corpus;
  fs::path kb;
  fs::path out = default_out();
  std::string preset = "task";
  TrainingConfig cfg;
  std::optional<double> lr, lambda;
  std::optional<std::size_t> batch, span_len;
  std::string schedule;
  bool without_unlabeled = false;
  bool no_pr = false;
  bool serial = false;
};

TrainingConfig resolve(const TrainArgs& a) {
  TrainingConfig c = a.cfg;
  if (a.preset == "nontask") {
    c.learning_rate = 0.0005;
    c.batch_size = 24;
    c.lambda.kind = LambdaSchedule::Kind::linear;
    c.lambda.start = 0.1;
    c.lambda.end = 0.001;
    c.span_len = 5;
  }
  if (a.lr) c.learning_rate = *a.lr;
  if (a.batch) c.batch_size = *a.batch;
  if (a.span_len) c.span_len = *a.span_len;
  if (a.lambda) c.lambda.start = *a.lambda;
  if (a.schedule == "constant") c.lambda.kind = LambdaSchedule::Kind::constant;
  if (a.schedule == "linear") c.lambda.kind = LambdaSchedule::Kind::linear;
  if (a.without_unlabeled) c.use_unlabeled = false;
  if (a.no_pr) c.posterior_regularization = false;
  if (a.serial) c.parallel = false;
  c.validate();
  return c;
}

int cmd_train(const TrainArgs& a) {
  const TrainingConfig cfg = resolve(a);
  const KnowledgeBase kb = load_kb(a.kb);
  const auto sessions = load_corpus(a.corpus, kb.schema);
  if (sessions.empty()) throw DataError(a.corpus.string() + ": corpus has no sessions");
  const auto split = split_corpus(sessions);
  const TrainingData data = prepare_training_data(split, kb.schema, cfg);
  const ModelConfig mc = model_config(cfg, data.vocab.size());

  fs::create_directories(a.out);
  ojson resolved{{"command", "train"},
                 {"corpus", a.corpus.string()},
                 {"kb", a.kb.string()},
                 {"out", a.out.string()},
                 {"preset", a.preset},
                 {"training", training_json(cfg)},
                 {"model", model_json(mc)}};
  write_text(a.out / "resolved-config.json", resolved.dump(2) + "\n");

  std::cout << "mode " << to_string(cfg.mode()) << "\n"
            << "annotated sessions " << data.annotated << ", unannotated sessions "
            << data.unannotated << (cfg.use_unlabeled ? "" : " (dropped)") << "\n"
            << "vocabulary " << data.vocab.size() << " tokens, hash " << hex(data.vocab.hash())
            << "\n"
            << std::flush;

  const FitResult fitted = fit(data, cfg, [](const EpochRecord& r) {
    std::cout << "epoch " << r.epoch << "  lambda " << r.lambda << "  train " << r.train.total
              << "  validation " << r.validation.total << "\n"
              << std::flush;
  });

  ojson meta{{"format", "copyflow-model"},
             {"model", model_json(mc)},
             {"training", training_json(cfg)},
             {"vocab_hash", hex(data.vocab.hash())},
             {"vocab", data.vocab.tokens()},
             {"best_epoch", fitted.best_epoch},
             {"steps", fitted.steps}};
  save_checkpoint(a.out / "model.ckpt", fitted.params, fitted.rng_state, meta.dump());
  write_text(a.out / "train.log", training_log_tsv(fitted.log, cfg.mode()));
  write_text(a.out / "timing.tsv", timing_tsv(fitted.log));
  std::cout << "best epoch " << fitted.best_epoch << ", checkpoint "
            << (a.out / "model.ckpt").string() << "\n";
  if (fitted.diverged) {
    std::cerr << "numerical failure: " << fitted.message << "\n";
    return kExitNumerical;
  }
  return 0;
}

// ---------------------------------------------------------------------------
// evaluate

struct EvalArgs {
  fs::path checkpoint;
  fs::path corpus;
  fs::path kb;
  fs::path out = default_out();
  fs::path embeddings;
  std::string split = "test";
  std::size_t beam = 5;
  std::string span_mode;
  bool slot_intersection = false;
  bool serial = false;
};

int cmd_evaluate(const EvalArgs& a) {
  const LoadedModel model = load_model(a.checkpoint);
  const KnowledgeBase kb = load_kb(a.kb);
  const auto sessions = load_corpus(a.corpus, kb.schema);
  const auto split = split_corpus(sessions);
  const Vocabulary corpus_vocab = build_vocabulary(split.train, kb.schema);
  if (corpus_vocab.hash() != model.vocab.hash()) {
    throw DataError("vocabulary mismatch: checkpoint " + hex(model.vocab.hash()) + ", corpus " +
                    hex(corpus_vocab.hash()));
  }
  const std::vector<DialogueSession>* target = &split.test;
  if (a.split == "validation") target = &split.validation;
  if (a.split == "train") target = &split.train;
  if (a.split == "all") target = &sessions;

  DecodeOptions opt = evaluation_decode_options(model.mode, model.config.span_len);
  opt.beam_size = a.beam;
  if (a.span_mode == "fixed") opt.span.mode = SpanDecodeConfig::Mode::fixed_length;
  if (a.span_mode == "eos") opt.span.mode = SpanDecodeConfig::Mode::eos_terminated;
  if (a.slot_intersection) opt.intersect_slot_values = true;

  const EmbeddingTable emb = a.embeddings.empty()
                                 ? synthetic_embeddings(model.vocab.tokens(), 50, model.seed)
                                 : load_embeddings(a.embeddings);
  const auto ev = evaluate(model.checkpoint.params, model.config, model.vocab, *target, kb, opt,
                           emb, !a.serial);

  fs::create_directories(a.out);
  ojson resolved{{"command", "evaluate"},
                 {"checkpoint", a.checkpoint.string()},
                 {"corpus", a.corpus.string()},
                 {"kb", a.kb.string()},
                 {"split", a.split},
                 {"embeddings", a.embeddings.empty() ? "synthetic" : a.embeddings.string()},
                 {"beam", opt.beam_size},
                 {"span_mode", opt.span.mode == SpanDecodeConfig::Mode::fixed_length ? "fixed"
                                                                                     : "eos"},
                 {"span_len", opt.span.span_len},
                 {"slot_intersection", opt.intersect_slot_values},
                 {"out", a.out.string()}};
  write_text(a.out / "resolved-config.json", resolved.dump(2) + "\n");
  write_text(a.out / "report.json", ev.report.to_json() + "\n");
  write_text(a.out / "report.txt", ev.report.to_table());
  write_text(a.out / "transcripts.jsonl", transcripts_jsonl(*target, ev.outputs));
  std::cout << ev.report.to_table();
  return 0;
}

// ---------------------------------------------------------------------------
// chat

struct ChatArgs {
  fs::path checkpoint;
  fs::path kb;
  fs::path transcript;
  std::size_t beam = 5;
};

std::string fmt_mass(double v) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(3) << v;
  return s.str();
}

int cmd_chat(const ChatArgs& a) {
  const LoadedModel model = load_model(a.checkpoint);
  std::optional<KnowledgeBase> kb;
  if (!a.kb.empty()) kb = load_kb(a.kb);
  DecodeOptions opt = evaluation_decode_options(model.mode, model.config.span_len);
  opt.beam_size = a.beam;
  DialogueRunner runner(model.checkpoint.params, model.config, model.vocab, kb ? &*kb : nullptr,
                        opt);

  const fs::path transcript_path =
      a.transcript.empty() ? default_out() / "chat_transcript.txt" : a.transcript;
  std::ostringstream transcript;
  auto emit = [&](const std::string& line) {
    std::cout << line << "\n" << std::flush;
    transcript << line << "\n";
  };

  std::vector<std::string> prev;
  std::string line;
  std::cout << "> " << std::flush;
  while (std::getline(std::cin, line)) {
    if (line == ":quit") break;
    std::string lowered = line;
    std::transform(lowered.begin(), lowered.end(), lowered.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    const auto user = tokenize(lowered);
    std::vector<std::string> seen;
    for (const auto& w : user) seen.push_back(model.vocab.find(w) ? w : "<unk>");
    emit("user: " + join(seen));
    const TurnOutput o = runner.step(prev, user);
    emit("span: " + join(o.span));
    for (std::size_t i = 0; i < o.span_components.size(); ++i) {
      const auto& comp = o.span_components[i];
      const double total = std::accumulate(comp.begin(), comp.end(), 0.0);
      std::string masses = "  step " + std::to_string(i) + " masses";
      for (double m : comp) masses += " " + fmt_mass(total > 0.0 ? m / total : 0.0);
      emit(masses);
    }
    if (kb) {
      emit("kb: " + std::to_string(o.kb_matches) + " matching entities" +
           (o.entity_id.empty() ? "" : ", selected " + o.entity_id));
    }
    emit("system: " + join(o.response));
    prev = o.response_delex;
    std::cout << "> " << std::flush;
  }
  std::cout << "\n";
  write_text(transcript_path, transcript.str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"copyflow: two-stage dialogue model with a copy-flow state tracker"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* g = app.add_subcommand("gen-corpus", "Generate a synthetic corpus and knowledge base");
  g->add_option("--seed", gen.seed, "Generator seed")->capture_default_str();
  g->add_option("--out", gen.out, "Output directory (default $COPYFLOW_OUT or .)");
  g->add_option("--sessions", gen.gen.sessions)->capture_default_str();
  g->add_option("--slots", gen.gen.slots)->capture_default_str();
  g->add_option("--values-per-slot", gen.gen.values_per_slot)->capture_default_str();
  g->add_option("--entities", gen.gen.entities)->capture_default_str();
  g->add_option("--min-turns", gen.gen.min_turns)->capture_default_str();
  g->add_option("--max-turns", gen.gen.max_turns)->capture_default_str();
  g->add_option("--templates", gen.gen.templates_per_act)->capture_default_str();
  g->add_option("--revision-prob", gen.gen.revision_prob)->capture_default_str();
  g->add_option("--request-prob", gen.gen.request_prob)->capture_default_str();
  g->add_option("--thanks-prob", gen.gen.thanks_prob)->capture_default_str();
  auto* dlg = g->add_option("--camrest-dialogues", gen.camrest_dialogues,
                            "Convert CamRest-style dialogues instead of generating");
  auto* db = g->add_option("--camrest-db", gen.camrest_db, "CamRest-style restaurant database");
  dlg->needs(db);
  db->needs(dlg);

  TrainArgs train;
  auto* t = app.add_subcommand("train", "Train a model");
  t->add_option("--corpus", train.corpus)->required();
  t->add_option("--kb", train.kb)->required();
  t->add_option("--out", train.out, "Output directory (default $COPYFLOW_OUT or .)");
  t->add_option("--preset", train.preset, "Default settings")
      ->check(CLI::IsMember({"task", "nontask"}))
      ->capture_default_str();
  t->add_option("--supervision", train.cfg.supervision, "Annotated session proportion")
      ->capture_default_str();
  t->add_option("--lambda", train.lambda, "Posterior regularization weight (start value)");
  t->add_option("--lambda-schedule", train.schedule)->check(CLI::IsMember({"constant", "linear"}));
  t->add_option("--lambda-end", train.cfg.lambda.end)->capture_default_str();
  t->add_option("--lr", train.lr, "Learning rate");
  t->add_option("--batch", train.batch, "Batch size");
  t->add_option("--hidden", train.cfg.hidden)->capture_default_str();
  t->add_option("--embed", train.cfg.embed)->capture_default_str();
  t->add_option("--utterance-len", train.cfg.utterance_len)->capture_default_str();
  t->add_option("--span-len", train.span_len, "Span length");
  t->add_option("--epochs", train.cfg.max_epochs)->capture_default_str();
  t->add_option("--patience", train.cfg.patience)->capture_default_str();
  t->add_option("--seed", train.cfg.seed)->capture_default_str();
  t->add_flag("--without-unlabeled", train.without_unlabeled, "Drop unannotated sessions");
  t->add_flag("--no-pr", train.no_pr, "Train without the KL term");
  t->add_flag("--serial", train.serial, "Single-threaded batch gradients");

  EvalArgs eval;
  auto* e = app.add_subcommand("evaluate", "Decode a split and compute metrics");
  e->add_option("--checkpoint", eval.checkpoint)->required();
  e->add_option("--corpus", eval.corpus)->required();
  e->add_option("--kb", eval.kb)->required();
  e->add_option("--out", eval.out, "Output directory (default $COPYFLOW_OUT or .)");
  e->add_option("--split", eval.split)
      ->check(CLI::IsMember({"train", "validation", "test", "all"}))
      ->capture_default_str();
  e->add_option("--embeddings", eval.embeddings, "Embedding text file (default synthetic)");
  e->add_option("--beam", eval.beam)->check(CLI::PositiveNumber)->capture_default_str();
  e->add_option("--span-mode", eval.span_mode, "Override span decoding")
      ->check(CLI::IsMember({"eos", "fixed"}));
  e->add_flag("--unsupervised-slot-intersection", eval.slot_intersection,
              "Read constraints from every span token that is a slot value");
  e->add_flag("--serial", eval.serial, "Single-threaded decoding");

  ChatArgs chat;
  auto* c = app.add_subcommand("chat", "Interactive dialogue; :quit exits");
  c->add_option("--checkpoint", chat.checkpoint)->required();
  c->add_option("--kb", chat.kb, "Knowledge base (omit for non-task mode)");
  c->add_option("--transcript", chat.transcript,
                "Transcript file (default $COPYFLOW_OUT/chat_transcript.txt)");
  c->add_option("--beam", chat.beam)->check(CLI::PositiveNumber)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int rc = app.exit(err);
    return rc == 0 ? 0 : kExitUsage;
  }

  try {
    if (*g) return cmd_gen_corpus(gen);
    if (*t) return cmd_train(train);
    if (*e) return cmd_evaluate(eval);
    if (*c) return cmd_chat(chat);
  } catch (const ConfigError& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kExitUsage;
  } catch (const UsageError& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kExitUsage;
  } catch (const NumericalError& err) {
    std::cerr << "numerical failure: " << err.what() << "\n";
    return kExitNumerical;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}
