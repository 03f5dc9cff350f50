#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "mote/corpus.hpp"
#include "mote/optim.hpp"
#include "mote/training.hpp"
#include "mote/vocab.hpp"

namespace mote {

struct PretrainConfig {
  double mask_ratio = 0.30;
  int steps = 300;
  int batch_size = 8;
  double learning_rate = 3e-4;
  double warmup_ratio = 0.1;
  double dense_bottleneck_weight = 1.0;
  double sparse_bottleneck_weight = 1.0;
  bool query_mlm = true;
  double grad_clip = 0.0;  // global gradient norm bound, 0 disables

  void validate() const {
    if (mask_ratio < 0.0 || mask_ratio > 1.0)
      throw ConfigError("mask_ratio must be in [0, 1]");
    if (warmup_ratio < 0.0 || warmup_ratio > 1.0)
      throw ConfigError("warmup_ratio must be in [0, 1]");
    if (steps < 1) throw ConfigError("steps must be positive");
    if (batch_size < 1) throw ConfigError("batch_size must be positive");
    if (learning_rate <= 0.0) throw ConfigError("learning_rate must be positive");
    if (dense_bottleneck_weight < 0.0 || sparse_bottleneck_weight < 0.0)
      throw ConfigError("bottleneck weights must be non-negative");
    if (dense_bottleneck_weight == 0.0 && sparse_bottleneck_weight == 0.0)
      throw ConfigError("at least one bottleneck weight must be positive");
    if (grad_clip < 0.0) throw ConfigError("grad_clip must be non-negative");
  }
};

// Replaces non-special positions by MASK, each independently with the given
// probability. CLS and SEP are never masked.
inline MaskedText mask_tokens(const TokenSequence& t, double ratio, Rng& rng) {
  if (ratio < 0.0 || ratio > 1.0) throw InputError("mask ratio out of range");
  MaskedText out;
  out.tokens = t;
  for (int i = 1; i + 1 < t.length(); ++i) {
    if (rng.uniform() < ratio) {
      out.positions.push_back(i);
      out.labels.push_back(t.ids[i]);
      out.tokens.ids[i] = kMaskId;
    }
  }
  return out;
}

// A passage paired with one contextual pseudo-query span.
struct PretrainExample {
  TokenSequence passage;       // kind Passage
  TokenSequence context_span;  // kind Query, length >= 2
};

struct PretrainStepResult {
  PretrainLossBreakdown loss;
  double lr = 0.0;
};

// One optimizer update over a batch: masks both texts, runs the combined
// MLM + bottlenecked CLM objective, applies AdamW.
inline PretrainStepResult pretrain_step(ModelParams& params, AdamW& opt,
                                        const std::vector<PretrainExample>& batch,
                                        const PretrainConfig& cfg, Rng& rng) {
  cfg.validate();
  if (batch.empty()) throw InputError("empty pre-training batch");
  PretrainBatch prepared;
  for (const PretrainExample& ex : batch) {
    PreparedPretrainExample p;
    p.passage = mask_tokens(ex.passage, cfg.mask_ratio, rng);
    p.query = mask_tokens(ex.context_span, cfg.mask_ratio, rng);
    p.span = ex.context_span;
    prepared.examples.push_back(std::move(p));
  }
  PretrainOptions opts;
  opts.dense_weight = cfg.dense_bottleneck_weight;
  opts.sparse_weight = cfg.sparse_bottleneck_weight;
  opts.query_mlm = cfg.query_mlm;
  Grads grads(params);
  PretrainStepResult res;
  res.loss = loss_and_grads(params, prepared, opts, grads);
  opt.step(params, grads);
  res.lr = opt.last_lr();
  return res;
}

struct PretrainPairs {
  std::vector<PretrainExample> examples;
  int skipped = 0;  // passages without an extractable pseudo-query
};

// Pairs each passage with its pseudo-queries. Passages without supplied
// queries get one heuristic pseudo-query: the most informative ~6 words by
// corpus-level inverse document frequency, kept in passage order.
inline PretrainPairs build_pretrain_pairs(const std::vector<CorpusRecord>& corpus,
                                          const Vocab& vocab,
                                          const ModelConfig& cfg,
                                          int queries_per_passage) {
  if (queries_per_passage < 1)
    throw ConfigError("queries_per_passage must be positive");
  if (corpus.empty()) return {};

  // Document frequencies for the heuristic extractor.
  bool need_idf = false;
  for (const CorpusRecord& r : corpus)
    if (r.pseudo_queries.empty()) need_idf = true;
  std::map<std::string, int> df;
  if (need_idf) {
    for (const CorpusRecord& r : corpus) {
      std::vector<std::string> ws = split_words(r.text);
      std::sort(ws.begin(), ws.end());
      ws.erase(std::unique(ws.begin(), ws.end()), ws.end());
      for (const std::string& w : ws) ++df[w];
    }
  }
  double n_docs = double(corpus.size());

  PretrainPairs out;
  for (const CorpusRecord& r : corpus) {
    TokenSequence passage =
        vocab.tokenize(r.text, TextKind::Passage, cfg.max_seq_len);
    std::vector<std::string> query_texts;
    if (!r.pseudo_queries.empty()) {
      for (const std::string& q : r.pseudo_queries) {
        if (int(query_texts.size()) >= queries_per_passage) break;
        query_texts.push_back(q);
      }
    } else {
      std::vector<std::string> words = split_words(r.text);
      struct Cand {
        std::string word;
        double idf;
        int pos;
      };
      std::vector<Cand> cands;
      std::map<std::string, bool> seen;
      for (size_t i = 0; i < words.size(); ++i) {
        if (seen[words[i]]) continue;
        seen[words[i]] = true;
        double idf = std::log((n_docs + 1.0) / (double(df[words[i]]) + 1.0));
        cands.push_back({words[i], idf, int(i)});
      }
      std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
        if (a.idf != b.idf) return a.idf > b.idf;
        return a.pos < b.pos;
      });
      if (int(cands.size()) > 6) cands.resize(6);
      std::sort(cands.begin(), cands.end(),
                [](const Cand& a, const Cand& b) { return a.pos < b.pos; });
      std::string q;
      for (const Cand& c : cands) {
        if (!q.empty()) q.push_back(' ');
        q += c.word;
      }
      if (!q.empty()) query_texts.push_back(q);
    }
    bool used = false;
    for (const std::string& q : query_texts) {
      TokenSequence span = vocab.tokenize(q, TextKind::Query, cfg.max_seq_len);
      if (span.length() < 3) continue;  // no content tokens
      out.examples.push_back({passage, span});
      used = true;
    }
    if (!used) ++out.skipped;
  }
  return out;
}

struct PretrainTrace {
  std::vector<PretrainLossBreakdown> steps;
};

// Full pre-training loop. Batches are sampled with replacement from the
// example list; everything is driven by the single seeded stream.
inline PretrainTrace run_pretrain(ModelParams& params,
                                  const std::vector<PretrainExample>& examples,
                                  const PretrainConfig& cfg, int64_t seed,
                                  const std::function<void(int, const PretrainLossBreakdown&)>& on_step = {}) {
  cfg.validate();
  if (examples.empty()) throw InputError("no pre-training examples");
  LinearSchedule sched{cfg.learning_rate, cfg.steps, cfg.warmup_ratio};
  AdamW opt(params, sched, 0.9, 0.999, 1e-8, 0.01, cfg.grad_clip);
  Rng rng = Rng::substream(uint64_t(seed), 0x70726574u);  // pretrain stream
  PretrainTrace trace;
  for (int step = 0; step < cfg.steps; ++step) {
    std::vector<PretrainExample> batch;
    for (int b = 0; b < cfg.batch_size; ++b)
      batch.push_back(examples[rng.below(examples.size())]);
    PretrainStepResult r = pretrain_step(params, opt, batch, cfg, rng);
    trace.steps.push_back(r.loss);
    if (on_step) on_step(step + 1, r.loss);
  }
  return trace;
}

}  // namespace mote
