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

// Serial vs OpenMP timings for batch gradients and corpus decoding.

#include <chrono>
#include <cmath>
#include <iostream>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "CLI11.hpp"
#include "copyflow/decoding.hpp"
#include "copyflow/training.hpp"

using namespace copyflow;

namespace {

template <class F>
double best_seconds(int repeats, F&& f) {
  double best = INFINITY;
  for (int r = 0; r < repeats; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    f();
    const std::chrono::duration<double> dt = std::chrono::steady_clock::now() - t0;
    best = std::min(best, dt.count());
  }
  return best;
}

bool same_gradients(const GradientMap& a, const GradientMap& b) {
  if (a.size() != b.size()) return false;
  for (const auto& [name, t] : a) {
    auto it = b.find(name);
    if (it == b.end() || it->second.values() != t.values()) return false;
  }
  return true;
}

void row(const std::string& name, double serial, double parallel, bool identical) {
  std::cout << name << "\t" << serial << "\t" << parallel << "\t" << serial / parallel << "\t"
            << (identical ? "yes" : "NO") << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Serial vs parallel kernels"};
  std::size_t sessions = 64, hidden = 50;
  int repeats = 3;
  double supervision = 0.5;
  app.add_option("--sessions", sessions, "Batch size and decoded sessions")->capture_default_str();
  app.add_option("--hidden", hidden)->capture_default_str();
  app.add_option("--repeats", repeats)->capture_default_str();
  app.add_option("--supervision", supervision)->capture_default_str();
  CLI11_PARSE(app, argc, argv);

  GeneratorConfig g;
  g.sessions = sessions * 5 / 3 + 5;
  const auto corpus = generate_synthetic_corpus(g, 1);
  const auto split = split_corpus(corpus.sessions);
  TrainingConfig cfg;
  cfg.hidden = cfg.embed = hidden;
  cfg.supervision = supervision;
  const TrainingData data = prepare_training_data(split, corpus.kb.schema, cfg);
  const ModelConfig mc = model_config(cfg, data.vocab.size());
  ParamStore params;
  init_params(params, mc, 1);
  const std::span<const EncodedSession> batch(data.train.data(),
                                              std::min(sessions, data.train.size()));
  LossOptions lo;
  lo.span_len = cfg.span_len;

#ifdef _OPENMP
  std::cout << "threads\t" << omp_get_max_threads() << "\n";
#else
  std::cout << "threads\t1 (built without OpenMP)\n";
#endif
  std::cout << "kernel\tserial_s\tparallel_s\tspeedup\tidentical\n";

  for (bool unsupervised : {false, true}) {
    BatchResult s, p;
    const double ts = best_seconds(repeats, [&] {
      s = batch_gradient_serial(batch, params, mc, unsupervised, 0.1, lo);
    });
    const double tp = best_seconds(repeats, [&] {
      p = batch_gradient_parallel(batch, params, mc, unsupervised, 0.1, lo);
    });
    row(unsupervised ? "gradient_unsupervised" : "gradient_semi", ts, tp,
        s.loss.total == p.loss.total && same_gradients(s.grads, p.grads));
  }

  DecodeOptions opt;
  opt.span.span_len = cfg.span_len;
  const std::vector<DialogueSession> decode_set(
      split.train.begin(), split.train.begin() + static_cast<long>(batch.size()));
  std::vector<std::vector<TurnOutput>> ds, dp;
  const double ts = best_seconds(repeats, [&] {
    ds = decode_corpus_serial(params, mc, data.vocab, decode_set, &corpus.kb, opt);
  });
  const double tp = best_seconds(repeats, [&] {
    dp = decode_corpus_parallel(params, mc, data.vocab, decode_set, &corpus.kb, opt);
  });
  bool same = ds.size() == dp.size();
  for (std::size_t i = 0; same && i < ds.size(); ++i)
    for (std::size_t t = 0; same && t < ds[i].size(); ++t)
      same = ds[i][t].span == dp[i][t].span && ds[i][t].response == dp[i][t].response;
  row("decode_corpus", ts, tp, same);
  return 0;
}
