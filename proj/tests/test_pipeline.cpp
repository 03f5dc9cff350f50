#include <cmath>
#include <set>

#include "doctest.h"
#include "mote/checkpoint.hpp"
#include "mote/finetune.hpp"
#include "mote/metrics.hpp"
#include "mote/pretrain.hpp"
#include "mote/synthetic.hpp"

using namespace mote;

namespace {

struct ToyWorld {
  SyntheticData data;
  Vocab vocab;
  ModelConfig cfg;
  std::vector<std::pair<std::string, TokenSequence>> corpus_tokens;
  std::vector<std::pair<std::string, TokenSequence>> query_tokens;
};

ToyWorld make_world(int passages, int vocab_cap, int64_t seed) {
  ToyWorld w;
  SyntheticSpec spec;
  spec.num_passages = passages;
  spec.vocab_size = 150;
  spec.topic_count = 5;
  spec.seed = seed;
  spec.pseudo_queries_per_passage = 2;
  w.data = generate_synthetic(spec);
  std::vector<std::string> texts;
  for (const CorpusRecord& r : w.data.corpus) {
    texts.push_back(r.text);
    for (const std::string& q : r.pseudo_queries) texts.push_back(q);
  }
  for (const QueryRecord& q : w.data.queries) texts.push_back(q.text);
  w.vocab = Vocab::build(texts, vocab_cap);
  w.cfg.num_layers = 1;
  w.cfg.hidden_dim = 16;
  w.cfg.num_heads = 2;
  w.cfg.ffn_dim = 32;
  w.cfg.vocab_size = w.vocab.size();
  w.cfg.max_seq_len = 80;
  for (const CorpusRecord& r : w.data.corpus)
    w.corpus_tokens.push_back(
        {r.id, w.vocab.tokenize(r.text, TextKind::Passage, w.cfg.max_seq_len)});
  for (const QueryRecord& q : w.data.queries)
    w.query_tokens.push_back(
        {q.id, w.vocab.tokenize(q.text, TextKind::Query, w.cfg.max_seq_len)});
  return w;
}

RunFile hybrid_run(const ModelParams& params, const ToyWorld& w, int k) {
  std::vector<std::string> ids;
  std::vector<DenseVec> dense;
  std::vector<SparseVec> sparse;
  for (const auto& doc : w.corpus_tokens) {
    TextRepr r = represent_text(params, doc.second);
    ids.push_back(doc.first);
    dense.push_back(r.dense);
    sparse.push_back(r.sparse);
  }
  DenseIndex didx = build_dense_index(ids, dense);
  SparseIndex sidx = build_sparse_index(ids, sparse);
  RunFile run;
  for (const auto& q : w.query_tokens) {
    TextRepr r = represent_text(params, q.second);
    for (const SearchHit& h : search_hybrid(didx, sidx, r.dense, r.sparse, k))
      run[q.first].push_back({h.doc_id, h.score});
  }
  return run;
}

}  // namespace

TEST_CASE("short pre-training run reduces the total loss") {
  ToyWorld w = make_world(30, 200, 4);
  PretrainPairs pairs = build_pretrain_pairs(w.data.corpus, w.vocab, w.cfg, 2);
  REQUIRE(pairs.examples.size() > 20);
  PretrainConfig pcfg;
  pcfg.steps = 40;
  pcfg.batch_size = 4;
  pcfg.learning_rate = 1e-3;
  ModelParams params = init_params(w.cfg, 42);
  PretrainTrace trace = run_pretrain(params, pairs.examples, pcfg, 42);
  REQUIRE(int(trace.steps.size()) == pcfg.steps);
  double first = trace.steps.front().total;
  double last = trace.steps.back().total;
  CHECK(last < first);
  CHECK(params.all_finite());
}

TEST_CASE("contrastive fine-tuning lifts hybrid MRR on a toy benchmark") {
  ToyWorld w = make_world(40, 250, 8);
  ModelParams params = init_params(w.cfg, 7);
  MetricsReport before = evaluate(hybrid_run(params, w, 10), w.data.qrels);

  // Stage-1 negatives from BM25.
  std::vector<std::vector<int>> bags;
  std::vector<std::string> ids;
  for (const auto& doc : w.corpus_tokens) {
    ids.push_back(doc.first);
    bags.push_back(content_terms(doc.second));
  }
  Bm25Index bm25 = build_bm25_index(ids, bags);
  std::map<std::string, std::vector<int>> qterms;
  for (const auto& q : w.query_tokens) qterms[q.first] = content_terms(q.second);
  NegativeMiningResult negs = bm25_negatives(bm25, qterms, w.data.qrels, 10, 3, 42);

  std::vector<Triple> triples;
  for (const auto& q : w.data.qrels) {
    Triple t;
    t.query_id = q.first;
    t.positive_id = q.second.begin()->first;
    t.negative_ids = negs.negatives.at(q.first);
    triples.push_back(t);
  }
  std::map<std::string, TokenSequence> qmap(w.query_tokens.begin(),
                                            w.query_tokens.end());
  std::map<std::string, TokenSequence> pmap(w.corpus_tokens.begin(),
                                            w.corpus_tokens.end());
  std::vector<ContrastiveExample> examples =
      build_finetune_examples(triples, qmap, pmap, 3);
  FinetuneConfig fcfg;
  fcfg.epochs = 3;
  fcfg.batch_size = 8;
  fcfg.negatives_per_query = 3;
  fcfg.negative_depth = 10;
  fcfg.learning_rate = 5e-4;
  FinetuneTrace trace = run_finetune(params, examples, fcfg, 42);
  REQUIRE(trace.epoch_losses.size() == 3);

  MetricsReport after = evaluate(hybrid_run(params, w, 10), w.data.qrels);
  CHECK(after.mrr > before.mrr);
}

TEST_CASE("two-stage pipeline: mined negatives differ and s2 moves past s1") {
  ToyWorld w = make_world(25, 200, 15);
  ModelParams params = init_params(w.cfg, 3);

  std::vector<std::string> ids;
  std::vector<std::vector<int>> bags;
  for (const auto& doc : w.corpus_tokens) {
    ids.push_back(doc.first);
    bags.push_back(content_terms(doc.second));
  }
  Bm25Index bm25 = build_bm25_index(ids, bags);
  std::map<std::string, std::vector<int>> qterms;
  for (const auto& q : w.query_tokens) qterms[q.first] = content_terms(q.second);
  NegativeMiningResult s1_negs =
      bm25_negatives(bm25, qterms, w.data.qrels, 8, 2, 5);

  auto to_examples = [&](const NegativeMiningResult& negs) {
    std::map<std::string, TokenSequence> qmap(w.query_tokens.begin(),
                                              w.query_tokens.end());
    std::map<std::string, TokenSequence> pmap(w.corpus_tokens.begin(),
                                              w.corpus_tokens.end());
    std::vector<Triple> triples;
    for (const auto& q : w.data.qrels) {
      if (negs.negatives.at(q.first).empty()) continue;
      triples.push_back(
          {q.first, q.second.begin()->first, negs.negatives.at(q.first)});
    }
    return build_finetune_examples(triples, qmap, pmap, 2);
  };

  FinetuneConfig fcfg;
  fcfg.epochs = 1;
  fcfg.batch_size = 8;
  fcfg.negatives_per_query = 2;
  fcfg.negative_depth = 8;
  run_finetune(params, to_examples(s1_negs), fcfg, 11);
  std::string s1_ckpt = serialize_checkpoint(params);

  NegativeMiningResult mined = mine_hard_negatives(
      params, w.corpus_tokens, w.query_tokens, w.data.qrels, 8, 2, 5);
  // The trained retriever ranks differently from BM25 somewhere.
  bool any_diff = false;
  for (const auto& q : mined.negatives)
    if (q.second != s1_negs.negatives.at(q.first)) any_diff = true;
  CHECK(any_diff);
  for (const auto& q : mined.negatives)
    for (const std::string& n : q.second)
      CHECK_FALSE(w.data.qrels.at(q.first).count(n));

  run_finetune(params, to_examples(mined), fcfg, 12);
  CHECK(serialize_checkpoint(params) != s1_ckpt);
}
