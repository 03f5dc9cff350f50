#pragma once

#include <map>
#include <string>
#include <vector>

#include "mote/bm25.hpp"
#include "mote/optim.hpp"
#include "mote/training.hpp"

namespace mote {

struct FinetuneConfig {
  double learning_rate = 2e-4;
  int epochs = 3;
  int batch_size = 64;
  int negatives_per_query = 15;
  int negative_depth = 200;
  double temperature = 1.0;
  double warmup_ratio = 0.1;
  bool in_batch_negatives = true;
  double grad_clip = 1.0;  // global gradient norm bound, 0 disables

  void validate() const {
    if (learning_rate <= 0.0) throw ConfigError("learning_rate must be positive");
    if (epochs < 0) throw ConfigError("epochs must be non-negative");
    if (batch_size < 1) throw ConfigError("batch_size must be positive");
    if (negatives_per_query < 1)
      throw ConfigError("negatives_per_query must be at least 1");
    if (negative_depth < negatives_per_query)
      throw ConfigError("negative_depth must be >= negatives_per_query");
    if (temperature <= 0.0) throw ConfigError("temperature must be positive");
    if (warmup_ratio < 0.0 || warmup_ratio > 1.0)
      throw ConfigError("warmup_ratio must be in [0, 1]");
    if (grad_clip < 0.0) throw ConfigError("grad_clip must be non-negative");
  }
};

struct NegativeMiningResult {
  // qid -> sampled negative passage ids
  std::map<std::string, std::vector<std::string>> negatives;
  int shortfall_queries = 0;  // queries with fewer than count candidates
};

namespace detail {

// Shared tail of both mining paths: drop relevant docs, then sample count
// candidates uniformly without replacement, seeded per query id.
inline void filter_and_sample(const std::string& qid,
                              const std::vector<SearchHit>& ranked,
                              const Qrels& qrels, int count, uint64_t seed,
                              NegativeMiningResult& out) {
  std::vector<std::string> candidates;
  auto qit = qrels.find(qid);
  for (const SearchHit& hit : ranked) {
    bool positive = false;
    if (qit != qrels.end()) {
      auto dit = qit->second.find(hit.doc_id);
      positive = dit != qit->second.end() && dit->second > 0;
    }
    if (!positive) candidates.push_back(hit.doc_id);
  }
  Rng rng = Rng::substream(seed, fnv1a64(qid));
  rng.shuffle(candidates);
  if (int(candidates.size()) < count) ++out.shortfall_queries;
  if (int(candidates.size()) > count) candidates.resize(count);
  std::sort(candidates.begin(), candidates.end());
  out.negatives[qid] = std::move(candidates);
}

}  // namespace detail

// Stage-1 negatives: top-depth BM25 candidates minus qrels positives.
inline NegativeMiningResult bm25_negatives(
    const Bm25Index& index,
    const std::map<std::string, std::vector<int>>& query_terms,
    const Qrels& qrels, int depth, int count, uint64_t seed) {
  if (depth < count) throw ConfigError("negative depth must be >= count");
  NegativeMiningResult out;
  for (const auto& q : query_terms) {
    std::vector<SearchHit> ranked = bm25_search(index, q.second, depth);
    detail::filter_and_sample(q.first, ranked, qrels, count, seed, out);
  }
  return out;
}

// Stage-2 negatives: top-depth hybrid retrieval with the current model.
inline NegativeMiningResult mine_hard_negatives(
    const DenseIndex& dense, const SparseIndex& sparse,
    const std::map<std::string, TextRepr>& query_reprs, const Qrels& qrels,
    int depth, int count, uint64_t seed) {
  if (depth < count) throw ConfigError("negative depth must be >= count");
  NegativeMiningResult out;
  for (const auto& q : query_reprs) {
    std::vector<SearchHit> ranked =
        search_hybrid(dense, sparse, q.second.dense, q.second.sparse, depth);
    detail::filter_and_sample(q.first, ranked, qrels, count, seed, out);
  }
  return out;
}

// Convenience overload that encodes the corpus and queries itself.
inline NegativeMiningResult mine_hard_negatives(
    const ModelParams& params,
    const std::vector<std::pair<std::string, TokenSequence>>& corpus,
    const std::vector<std::pair<std::string, TokenSequence>>& queries,
    const Qrels& qrels, int depth, int count, uint64_t seed) {
  std::vector<std::string> ids;
  std::vector<DenseVec> dense;
  std::vector<SparseVec> sparse;
  for (const auto& doc : corpus) {
    TextRepr r = represent_text(params, doc.second);
    ids.push_back(doc.first);
    dense.push_back(std::move(r.dense));
    sparse.push_back(std::move(r.sparse));
  }
  DenseIndex didx = build_dense_index(ids, dense);
  SparseIndex sidx = build_sparse_index(ids, sparse);
  std::map<std::string, TextRepr> qreprs;
  for (const auto& q : queries)
    qreprs[q.first] = represent_text(params, q.second);
  return mine_hard_negatives(didx, sidx, qreprs, qrels, depth, count, seed);
}

// Builds tokenized contrastive examples from a triples file. Negatives are
// capped at negatives_per_query; queries or passages missing from the maps
// are an input error.
inline std::vector<ContrastiveExample> build_finetune_examples(
    const std::vector<Triple>& triples,
    const std::map<std::string, TokenSequence>& queries,
    const std::map<std::string, TokenSequence>& passages,
    int negatives_per_query) {
  std::vector<ContrastiveExample> out;
  for (const Triple& t : triples) {
    auto qit = queries.find(t.query_id);
    if (qit == queries.end()) throw InputError("unknown query id " + t.query_id);
    auto pit = passages.find(t.positive_id);
    if (pit == passages.end())
      throw InputError("unknown passage id " + t.positive_id);
    ContrastiveExample ex;
    ex.query_id = t.query_id;
    ex.query = qit->second;
    ex.positive_id = t.positive_id;
    ex.positive = pit->second;
    for (const std::string& nid : t.negative_ids) {
      if (int(ex.negatives.size()) >= negatives_per_query) break;
      if (nid == t.positive_id)
        throw InputError("positive listed among negatives for " + t.query_id);
      auto nit = passages.find(nid);
      if (nit == passages.end()) throw InputError("unknown passage id " + nid);
      ex.negative_ids.push_back(nid);
      ex.negatives.push_back(nit->second);
    }
    if (ex.negatives.empty())
      throw InputError("no negatives for query " + t.query_id);
    out.push_back(std::move(ex));
  }
  return out;
}

struct FinetuneTrace {
  std::vector<double> epoch_losses;
};

// Contrastive fine-tuning loop. Queries route through the query expert and
// passages through the passage expert by virtue of their token kinds.
inline FinetuneTrace run_finetune(ModelParams& params,
                                  const std::vector<ContrastiveExample>& examples,
                                  const FinetuneConfig& cfg, int64_t seed) {
  cfg.validate();
  if (examples.empty()) throw InputError("no fine-tuning examples");
  FinetuneTrace trace;
  if (cfg.epochs == 0) return trace;
  int batches_per_epoch = int((examples.size() + cfg.batch_size - 1) / cfg.batch_size);
  LinearSchedule sched{cfg.learning_rate, cfg.epochs * batches_per_epoch,
                       cfg.warmup_ratio};
  AdamW opt(params, sched, 0.9, 0.999, 1e-8, 0.01, cfg.grad_clip);
  ContrastiveOptions opts;
  opts.temperature = cfg.temperature;
  opts.in_batch_negatives = cfg.in_batch_negatives;
  Rng rng = Rng::substream(uint64_t(seed), 0x66696e65u);  // finetune stream
  std::vector<int> order(examples.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = int(i);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    double epoch_loss = 0.0;
    int nbatches = 0;
    for (size_t start = 0; start < order.size(); start += cfg.batch_size) {
      ContrastiveBatch batch;
      for (size_t i = start; i < order.size() && i < start + cfg.batch_size; ++i)
        batch.examples.push_back(examples[order[i]]);
      Grads grads(params);
      epoch_loss += loss_and_grads(params, batch, opts, grads);
      opt.step(params, grads);
      ++nbatches;
    }
    trace.epoch_losses.push_back(epoch_loss / nbatches);
  }
  return trace;
}

}  // namespace mote
