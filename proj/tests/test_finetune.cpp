#include "doctest.h"
#include "mote/finetune.hpp"

using namespace mote;

namespace {

ModelConfig tiny_cfg() {
  ModelConfig cfg;
  cfg.num_layers = 1;
  cfg.hidden_dim = 16;
  cfg.num_heads = 2;
  cfg.ffn_dim = 32;
  cfg.vocab_size = 30;
  cfg.max_seq_len = 12;
  return cfg;
}

TokenSequence seq_of(std::initializer_list<int> mid, TextKind kind) {
  TokenSequence t;
  t.kind = kind;
  t.ids.push_back(kClsId);
  for (int id : mid) t.ids.push_back(id);
  t.ids.push_back(kSepId);
  return t;
}

}  // namespace

TEST_CASE("bm25_negatives filters positives and samples deterministically") {
  // Query term 10 appears in p1 (relevant), p2, p3; p4 shares nothing.
  Bm25Index idx = build_bm25_index(
      {"p1", "p2", "p3", "p4"},
      {{10, 11}, {10, 12}, {10, 13}, {20, 21}});
  Qrels qrels;
  qrels["q1"]["p1"] = 1;
  std::map<std::string, std::vector<int>> qterms = {{"q1", {10}}};

  NegativeMiningResult r = bm25_negatives(idx, qterms, qrels, 3, 2, 7);
  REQUIRE(r.negatives.count("q1") == 1);
  std::vector<std::string> negs = r.negatives["q1"];
  CHECK(negs.size() == 2);
  for (const std::string& n : negs) CHECK(n != "p1");
  CHECK(r.shortfall_queries == 0);

  // Same seed -> identical sets.
  NegativeMiningResult r2 = bm25_negatives(idx, qterms, qrels, 3, 2, 7);
  CHECK(r2.negatives == r.negatives);

  // Requesting more than available: take all, report shortfall.
  NegativeMiningResult r3 = bm25_negatives(idx, qterms, qrels, 4, 4, 7);
  CHECK(r3.negatives["q1"].size() == 3);  // p2, p3, p4
  CHECK(r3.shortfall_queries == 1);

  CHECK_THROWS_AS(bm25_negatives(idx, qterms, qrels, 2, 4, 7), ConfigError);
}

TEST_CASE("mine_hard_negatives excludes every positive") {
  ModelParams params = init_params(tiny_cfg(), 11);
  std::vector<std::pair<std::string, TokenSequence>> corpus;
  for (int i = 0; i < 6; ++i)
    corpus.push_back({strfmt("p%d", i),
                      seq_of({5 + i, 6 + i, 7 + i}, TextKind::Passage)});
  std::vector<std::pair<std::string, TokenSequence>> queries;
  Qrels qrels;
  for (int i = 0; i < 3; ++i) {
    queries.push_back({strfmt("q%d", i), seq_of({5 + i, 7 + i}, TextKind::Query)});
    qrels[strfmt("q%d", i)][strfmt("p%d", i)] = 1;
  }
  NegativeMiningResult r =
      mine_hard_negatives(params, corpus, queries, qrels, 6, 3, 13);
  for (int i = 0; i < 3; ++i) {
    const auto& negs = r.negatives.at(strfmt("q%d", i));
    CHECK(negs.size() == 3);
    for (const std::string& n : negs) CHECK(n != strfmt("p%d", i));
  }

  // depth = corpus size, count = corpus size - positives -> all non-positives.
  NegativeMiningResult all =
      mine_hard_negatives(params, corpus, queries, qrels, 6, 5, 13);
  CHECK(all.negatives.at("q0").size() == 5);
  CHECK(all.shortfall_queries == 0);
}

TEST_CASE("build_finetune_examples validates ids and caps negatives") {
  std::map<std::string, TokenSequence> queries = {
      {"q1", seq_of({5}, TextKind::Query)}};
  std::map<std::string, TokenSequence> passages = {
      {"p1", seq_of({6}, TextKind::Passage)},
      {"p2", seq_of({7}, TextKind::Passage)},
      {"p3", seq_of({8}, TextKind::Passage)}};
  std::vector<Triple> triples = {{"q1", "p1", {"p2", "p3"}}};
  std::vector<ContrastiveExample> ex =
      build_finetune_examples(triples, queries, passages, 1);
  REQUIRE(ex.size() == 1);
  CHECK(ex[0].negatives.size() == 1);
  CHECK(ex[0].negative_ids[0] == "p2");

  std::vector<Triple> bad = {{"q1", "p1", {"p1"}}};
  CHECK_THROWS_AS(build_finetune_examples(bad, queries, passages, 4), InputError);
  std::vector<Triple> unknown = {{"qX", "p1", {"p2"}}};
  CHECK_THROWS_AS(build_finetune_examples(unknown, queries, passages, 4), InputError);
}

TEST_CASE("run_finetune with zero epochs returns params unchanged") {
  ModelParams params = init_params(tiny_cfg(), 3);
  std::vector<double> before = params.data;
  FinetuneConfig cfg;
  cfg.epochs = 0;
  std::vector<ContrastiveExample> examples(1);
  examples[0].query_id = "q";
  examples[0].query = seq_of({5}, TextKind::Query);
  examples[0].positive_id = "p";
  examples[0].positive = seq_of({6}, TextKind::Passage);
  examples[0].negative_ids = {"n"};
  examples[0].negatives = {seq_of({7}, TextKind::Passage)};
  FinetuneTrace trace = run_finetune(params, examples, cfg, 42);
  CHECK(params.data == before);
  CHECK(trace.epoch_losses.empty());
}

TEST_CASE("run_finetune is deterministic and emits per-epoch losses") {
  std::vector<ContrastiveExample> examples;
  for (int i = 0; i < 5; ++i) {
    ContrastiveExample ex;
    ex.query_id = strfmt("q%d", i);
    ex.query = seq_of({5 + i, 6}, TextKind::Query);
    ex.positive_id = strfmt("p%d", i);
    ex.positive = seq_of({5 + i, 7, 8}, TextKind::Passage);
    ex.negative_ids = {strfmt("n%d", i)};
    ex.negatives = {seq_of({9 + i, 10}, TextKind::Passage)};
    examples.push_back(ex);
  }
  FinetuneConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 2;
  cfg.negatives_per_query = 1;
  cfg.negative_depth = 1;
  ModelParams a = init_params(tiny_cfg(), 5);
  ModelParams b = init_params(tiny_cfg(), 5);
  FinetuneTrace ta = run_finetune(a, examples, cfg, 9);
  FinetuneTrace tb = run_finetune(b, examples, cfg, 9);
  CHECK(a.data == b.data);
  CHECK(ta.epoch_losses == tb.epoch_losses);
  CHECK(ta.epoch_losses.size() == 2);
  CHECK(a.data != init_params(tiny_cfg(), 5).data);
}

TEST_CASE("contrastive batch rejects a positive listed as its own negative") {
  ModelParams params = init_params(tiny_cfg(), 3);
  ContrastiveBatch batch;
  ContrastiveExample ex;
  ex.query_id = "q";
  ex.query = seq_of({5}, TextKind::Query);
  ex.positive_id = "p";
  ex.positive = seq_of({6}, TextKind::Passage);
  ex.negative_ids = {"p"};
  ex.negatives = {seq_of({6}, TextKind::Passage)};
  batch.examples.push_back(ex);
  Grads g(params);
  CHECK_THROWS_AS(loss_and_grads(params, batch, {}, g), InputError);
}
