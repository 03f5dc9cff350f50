#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "mote/analysis.hpp"
#include "mote/checkpoint.hpp"
#include "mote/finetune.hpp"
#include "mote/metrics.hpp"
#include "mote/pretrain.hpp"
#include "mote/synthetic.hpp"

namespace fs = std::filesystem;
using namespace mote;

namespace {

Vocab load_vocab(const std::string& path) {
  std::istringstream is(read_file(path));
  return Vocab::parse(is);
}

SyntheticSpec read_synth_spec(KvConfig& cfg, const std::string& prefix,
                              int64_t seed) {
  SyntheticSpec spec;
  spec.num_passages = int(cfg.get_int(prefix + "num_passages", spec.num_passages));
  spec.passage_len_mean =
      cfg.get_double(prefix + "passage_len_mean", spec.passage_len_mean);
  spec.query_len_mean =
      cfg.get_double(prefix + "query_len_mean", spec.query_len_mean);
  spec.vocab_size = int(cfg.get_int(prefix + "vocab_size", spec.vocab_size));
  spec.topic_count = int(cfg.get_int(prefix + "topic_count", spec.topic_count));
  spec.topic_word_fraction =
      cfg.get_double(prefix + "topic_word_fraction", spec.topic_word_fraction);
  spec.zipf_exponent = cfg.get_double(prefix + "zipf_exponent", spec.zipf_exponent);
  spec.pseudo_queries_per_passage =
      int(cfg.get_int(prefix + "pseudo_queries_per_passage",
                      spec.pseudo_queries_per_passage));
  spec.seed = seed;
  return spec;
}

// Model keys shared by pretrain and ablate configs. vocab_size comes from the
// vocabulary file, never from the config.
ModelConfig read_model_config(KvConfig& cfg, int vocab_size, int64_t seed) {
  ModelConfig m;
  m.num_layers = int(cfg.get_int("num_layers", 2));
  m.hidden_dim = int(cfg.get_int("hidden_dim", 64));
  m.num_heads = int(cfg.get_int("num_heads", 4));
  m.ffn_dim = int(cfg.get_int("ffn_dim", 4 * m.hidden_dim));
  m.max_seq_len = int(cfg.get_int("max_seq_len", 144));
  m.architecture_mode = parse_mode(cfg.get_string("architecture_mode", "mote"));
  m.swap_experts = cfg.get_bool("swap_experts", false);
  m.vocab_size = vocab_size;
  m.seed = seed;
  return m;
}

PretrainConfig read_pretrain_config(KvConfig& cfg) {
  PretrainConfig p;
  p.mask_ratio = cfg.get_double("mask_ratio", p.mask_ratio);
  p.steps = int(cfg.get_int("steps", p.steps));
  p.batch_size = int(cfg.get_int("batch_size", p.batch_size));
  p.learning_rate = cfg.get_double("learning_rate", p.learning_rate);
  p.warmup_ratio = cfg.get_double("warmup_ratio", p.warmup_ratio);
  p.dense_bottleneck_weight =
      cfg.get_double("dense_bottleneck_weight", p.dense_bottleneck_weight);
  p.sparse_bottleneck_weight =
      cfg.get_double("sparse_bottleneck_weight", p.sparse_bottleneck_weight);
  p.query_mlm = cfg.get_bool("query_mlm", p.query_mlm);
  p.grad_clip = cfg.get_double("grad_clip", p.grad_clip);
  return p;
}

FinetuneConfig read_finetune_config(KvConfig& cfg, const std::string& prefix) {
  FinetuneConfig f;
  f.learning_rate = cfg.get_double(prefix + "learning_rate", f.learning_rate);
  f.epochs = int(cfg.get_int(prefix + "epochs", f.epochs));
  f.batch_size = int(cfg.get_int(prefix + "batch_size", f.batch_size));
  f.negatives_per_query =
      int(cfg.get_int(prefix + "negatives_per_query", f.negatives_per_query));
  f.negative_depth =
      int(cfg.get_int(prefix + "negative_depth", f.negative_depth));
  f.temperature = cfg.get_double(prefix + "temperature", f.temperature);
  f.warmup_ratio = cfg.get_double(prefix + "warmup_ratio", f.warmup_ratio);
  f.in_batch_negatives =
      cfg.get_bool(prefix + "in_batch_negatives", f.in_batch_negatives);
  f.grad_clip = cfg.get_double(prefix + "grad_clip", f.grad_clip);
  return f;
}

int64_t resolve_seed(KvConfig& cfg, int64_t flag_seed, bool flag_given) {
  int64_t config_seed = cfg.get_int("seed", 42);
  return flag_given ? flag_seed : config_seed;
}

std::map<std::string, TokenSequence> tokenize_corpus(
    const std::vector<CorpusRecord>& corpus, const Vocab& vocab, int max_len) {
  std::map<std::string, TokenSequence> out;
  for (const CorpusRecord& r : corpus)
    out[r.id] = vocab.tokenize(r.text, TextKind::Passage, max_len);
  return out;
}

std::map<std::string, TokenSequence> tokenize_queries(
    const std::vector<QueryRecord>& queries, const Vocab& vocab, int max_len) {
  std::map<std::string, TokenSequence> out;
  for (const QueryRecord& q : queries)
    out[q.id] = vocab.tokenize(q.text, TextKind::Query, max_len);
  return out;
}

DumpRecord make_record(const ModelParams& params, const std::string& id,
                       const TokenSequence& toks) {
  TextRepr r = represent_text(params, toks);
  DumpRecord rec;
  rec.id = id;
  rec.kind = toks.kind;
  rec.dense = std::move(r.dense);
  rec.sparse = std::move(r.sparse);
  return rec;
}

// First relevant (rel > 0) passage of a query, lowest doc id.
std::string first_positive(const Qrels& qrels, const std::string& qid) {
  auto it = qrels.find(qid);
  if (it == qrels.end()) return "";
  for (const auto& d : it->second)
    if (d.second > 0) return d.first;
  return "";
}

struct IndexPair {
  DenseIndex dense;
  SparseIndex sparse;
};

IndexPair build_indexes(const ModelParams& params,
                        const std::vector<CorpusRecord>& corpus,
                        const Vocab& vocab) {
  std::vector<std::string> ids;
  std::vector<DenseVec> dense;
  std::vector<SparseVec> sparse;
  for (const CorpusRecord& r : corpus) {
    TextRepr repr = represent_text(
        params, vocab.tokenize(r.text, TextKind::Passage, params.config.max_seq_len));
    ids.push_back(r.id);
    dense.push_back(std::move(repr.dense));
    sparse.push_back(std::move(repr.sparse));
  }
  IndexPair idx;
  idx.dense = build_dense_index(ids, dense);
  idx.sparse = build_sparse_index(ids, sparse);
  return idx;
}

// ---------------------------------------------------------------------------
// gen-data
// ---------------------------------------------------------------------------

void cmd_gen_data(const std::string& config_path, const std::string& out_dir,
                  int64_t seed, bool seed_given, double eval_fraction) {
  KvConfig cfg = config_path.empty() ? KvConfig() : KvConfig::load(config_path);
  int64_t s = resolve_seed(cfg, seed, seed_given);
  SyntheticSpec spec = read_synth_spec(cfg, "", s);
  long vocab_max = cfg.get_int(
      "vocab_max_size", spec.vocab_size + ModelConfig::kNumSpecialTokens + 10);
  cfg.reject_unknown();

  SyntheticData data = generate_synthetic(spec);
  fs::create_directories(out_dir);
  auto path = [&](const char* name) { return (fs::path(out_dir) / name).string(); };
  atomic_write(path("corpus.tsv"), format_corpus(data.corpus));
  atomic_write(path("queries.tsv"), format_queries(data.queries));
  atomic_write(path("qrels.txt"), format_qrels(data.qrels));

  // Deterministic train/eval split: every k-th query is held out.
  int hold_every = eval_fraction > 0 ? std::max(2, int(1.0 / eval_fraction)) : 0;
  std::vector<QueryRecord> train_q, eval_q;
  Qrels train_qrels, eval_qrels;
  for (size_t i = 0; i < data.queries.size(); ++i) {
    bool hold = hold_every > 0 && (i % hold_every) == size_t(hold_every - 1);
    const QueryRecord& q = data.queries[i];
    (hold ? eval_q : train_q).push_back(q);
    (hold ? eval_qrels : train_qrels)[q.id] = data.qrels[q.id];
  }
  atomic_write(path("queries_train.tsv"), format_queries(train_q));
  atomic_write(path("qrels_train.txt"), format_qrels(train_qrels));
  atomic_write(path("queries_eval.tsv"), format_queries(eval_q));
  atomic_write(path("qrels_eval.txt"), format_qrels(eval_qrels));

  std::vector<std::string> texts;
  for (const CorpusRecord& r : data.corpus) {
    texts.push_back(r.text);
    for (const std::string& pq : r.pseudo_queries) texts.push_back(pq);
  }
  for (const QueryRecord& q : data.queries) texts.push_back(q.text);
  Vocab vocab = Vocab::build(texts, int(vocab_max));
  std::ostringstream vs;
  vocab.save(vs);
  atomic_write(path("vocab.txt"), vs.str());
  std::printf("gen-data: %zu passages, %zu queries (%zu train / %zu eval), vocab %d\n",
              data.corpus.size(), data.queries.size(), train_q.size(),
              eval_q.size(), vocab.size());
}

// ---------------------------------------------------------------------------
// pretrain
// ---------------------------------------------------------------------------

void cmd_pretrain(const std::string& config_path, const std::string& corpus_path,
                  const std::string& vocab_path, const std::string& out_path,
                  int64_t seed, bool seed_given, const std::string& loss_log) {
  KvConfig cfg = config_path.empty() ? KvConfig() : KvConfig::load(config_path);
  int64_t s = resolve_seed(cfg, seed, seed_given);
  Vocab vocab = load_vocab(vocab_path);
  ModelConfig mcfg = read_model_config(cfg, vocab.size(), s);
  PretrainConfig pcfg = read_pretrain_config(cfg);
  int qpp = int(cfg.get_int("queries_per_passage", 5));
  cfg.reject_unknown();
  pcfg.validate();

  std::vector<CorpusRecord> corpus = parse_corpus(read_file(corpus_path));
  PretrainPairs pairs = build_pretrain_pairs(corpus, vocab, mcfg, qpp);
  if (pairs.skipped > 0)
    std::fprintf(stderr, "pretrain: skipped %d passages without usable spans\n",
                 pairs.skipped);
  if (pairs.examples.empty()) throw InputError("no usable pre-training pairs");

  ModelParams params = init_params(mcfg, s);
  std::ostringstream log;
  log << "step\ttotal\tmlm\tclm_dense\tclm_sparse\n";
  PretrainTrace trace = run_pretrain(
      params, pairs.examples, pcfg, s,
      [&](int step, const PretrainLossBreakdown& l) {
        log << step << '\t' << dtos(l.total) << '\t' << dtos(l.mlm) << '\t'
            << dtos(l.clm_dense) << '\t' << dtos(l.clm_sparse) << '\n';
        if (step == 1 || step % 50 == 0)
          std::printf("pretrain step %d: total %.4f (mlm %.4f clm_d %.4f clm_s %.4f)\n",
                      step, l.total, l.mlm, l.clm_dense, l.clm_sparse);
      });
  save_checkpoint(params, out_path);
  if (!loss_log.empty()) atomic_write(loss_log, log.str());
  std::printf("pretrain: %d steps over %zu pairs, final loss %.4f -> %s\n",
              pcfg.steps, pairs.examples.size(), trace.steps.back().total,
              out_path.c_str());
}

// ---------------------------------------------------------------------------
// mine-negatives
// ---------------------------------------------------------------------------

void cmd_mine(const std::string& mode, const std::string& corpus_path,
              const std::string& queries_path, const std::string& qrels_path,
              const std::string& vocab_path, const std::string& ckpt_path,
              int depth, int count, const std::string& out_path, int64_t seed) {
  std::vector<CorpusRecord> corpus = parse_corpus(read_file(corpus_path));
  std::vector<QueryRecord> queries = parse_queries(read_file(queries_path));
  Qrels qrels = parse_qrels(read_file(qrels_path));
  Vocab vocab = load_vocab(vocab_path);

  NegativeMiningResult mined;
  if (mode == "bm25") {
    int max_len = 1 << 20;  // BM25 sees untruncated token bags
    std::vector<std::string> ids;
    std::vector<std::vector<int>> bags;
    for (const CorpusRecord& r : corpus) {
      ids.push_back(r.id);
      bags.push_back(content_terms(vocab.tokenize(r.text, TextKind::Passage, max_len)));
    }
    Bm25Index idx = build_bm25_index(ids, bags);
    std::map<std::string, std::vector<int>> qterms;
    for (const QueryRecord& q : queries)
      qterms[q.id] = content_terms(vocab.tokenize(q.text, TextKind::Query, max_len));
    mined = bm25_negatives(idx, qterms, qrels, depth, count, uint64_t(seed));
  } else if (mode == "model") {
    if (ckpt_path.empty())
      throw ConfigError("--checkpoint is required with --mode model");
    ModelParams params = load_checkpoint(ckpt_path);
    std::vector<std::pair<std::string, TokenSequence>> corpus_tokens, query_tokens;
    for (const CorpusRecord& r : corpus)
      corpus_tokens.push_back(
          {r.id, vocab.tokenize(r.text, TextKind::Passage, params.config.max_seq_len)});
    for (const QueryRecord& q : queries)
      query_tokens.push_back(
          {q.id, vocab.tokenize(q.text, TextKind::Query, params.config.max_seq_len)});
    mined = mine_hard_negatives(params, corpus_tokens, query_tokens, qrels,
                                depth, count, uint64_t(seed));
  } else {
    throw ConfigError("mine-negatives: mode must be bm25 or model");
  }

  std::vector<Triple> triples;
  int no_positive = 0;
  for (const QueryRecord& q : queries) {
    std::string pos = first_positive(qrels, q.id);
    if (pos.empty()) {
      ++no_positive;
      continue;
    }
    const std::vector<std::string>& negs = mined.negatives.at(q.id);
    if (negs.empty()) continue;
    triples.push_back({q.id, pos, negs});
  }
  atomic_write(out_path, format_triples(triples));
  if (mined.shortfall_queries > 0)
    std::fprintf(stderr, "mine-negatives: %d queries had fewer than %d candidates\n",
                 mined.shortfall_queries, count);
  if (no_positive > 0)
    std::fprintf(stderr, "mine-negatives: %d queries without positives skipped\n",
                 no_positive);
  std::printf("mine-negatives: wrote %zu triples -> %s\n", triples.size(),
              out_path.c_str());
}

// ---------------------------------------------------------------------------
// finetune
// ---------------------------------------------------------------------------

void cmd_finetune(const std::string& config_path, const std::string& ckpt_path,
                  const std::string& triples_path, const std::string& corpus_path,
                  const std::string& queries_path, const std::string& vocab_path,
                  const std::string& out_path, int64_t seed, bool seed_given,
                  int swap_override) {
  KvConfig cfg = config_path.empty() ? KvConfig() : KvConfig::load(config_path);
  int64_t s = resolve_seed(cfg, seed, seed_given);
  FinetuneConfig fcfg = read_finetune_config(cfg, "");
  cfg.reject_unknown();
  fcfg.validate();

  ModelParams params = load_checkpoint(ckpt_path);
  if (swap_override >= 0) params.config.swap_experts = swap_override != 0;
  Vocab vocab = load_vocab(vocab_path);
  if (vocab.size() != params.config.vocab_size)
    throw ConfigError("vocabulary size does not match the checkpoint");

  std::vector<Triple> triples = parse_triples(read_file(triples_path));
  std::map<std::string, TokenSequence> qmap = tokenize_queries(
      parse_queries(read_file(queries_path)), vocab, params.config.max_seq_len);
  std::map<std::string, TokenSequence> pmap = tokenize_corpus(
      parse_corpus(read_file(corpus_path)), vocab, params.config.max_seq_len);
  std::vector<ContrastiveExample> examples =
      build_finetune_examples(triples, qmap, pmap, fcfg.negatives_per_query);

  FinetuneTrace trace = run_finetune(params, examples, fcfg, s);
  save_checkpoint(params, out_path);
  for (size_t e = 0; e < trace.epoch_losses.size(); ++e)
    std::printf("finetune epoch %zu: loss %.4f\n", e + 1, trace.epoch_losses[e]);
  std::printf("finetune: %zu examples, %d epochs -> %s\n", examples.size(),
              fcfg.epochs, out_path.c_str());
}

// ---------------------------------------------------------------------------
// encode
// ---------------------------------------------------------------------------

void cmd_encode(const std::string& ckpt_path, const std::string& vocab_path,
                const std::string& corpus_path, const std::string& queries_path,
                const std::string& qrels_path, bool pairs,
                const std::string& out_path) {
  ModelParams params = load_checkpoint(ckpt_path);
  Vocab vocab = load_vocab(vocab_path);
  if (vocab.size() != params.config.vocab_size)
    throw ConfigError("vocabulary size does not match the checkpoint");
  int max_len = params.config.max_seq_len;
  std::vector<DumpRecord> records;

  if (pairs) {
    if (queries_path.empty() || corpus_path.empty() || qrels_path.empty())
      throw ConfigError("encode --pairs needs --queries, --corpus and --qrels");
    std::vector<QueryRecord> queries = parse_queries(read_file(queries_path));
    Qrels qrels = parse_qrels(read_file(qrels_path));
    std::map<std::string, CorpusRecord> by_id;
    for (CorpusRecord& r : parse_corpus(read_file(corpus_path)))
      by_id[r.id] = std::move(r);
    int skipped = 0;
    for (const QueryRecord& q : queries) {
      std::string pos = first_positive(qrels, q.id);
      auto it = pos.empty() ? by_id.end() : by_id.find(pos);
      if (it == by_id.end()) {
        ++skipped;
        continue;
      }
      records.push_back(make_record(params, q.id,
                                    vocab.tokenize(q.text, TextKind::Query, max_len)));
      records.push_back(make_record(
          params, it->first,
          vocab.tokenize(it->second.text, TextKind::Passage, max_len)));
    }
    if (skipped > 0)
      std::fprintf(stderr, "encode: skipped %d queries without positives\n", skipped);
  } else {
    if (!queries_path.empty())
      for (const QueryRecord& q : parse_queries(read_file(queries_path)))
        records.push_back(make_record(params, q.id,
                                      vocab.tokenize(q.text, TextKind::Query, max_len)));
    if (!corpus_path.empty())
      for (const CorpusRecord& r : parse_corpus(read_file(corpus_path)))
        records.push_back(make_record(
            params, r.id, vocab.tokenize(r.text, TextKind::Passage, max_len)));
  }
  if (records.empty()) throw InputError("encode: nothing to encode");
  atomic_write(out_path, format_dump(records, params.config.hidden_dim));
  std::printf("encode: wrote %zu records -> %s\n", records.size(), out_path.c_str());
}

// ---------------------------------------------------------------------------
// index / search / eval / analyze
// ---------------------------------------------------------------------------

void cmd_index(const std::string& dump_path, const std::string& out_dense,
               const std::string& out_sparse, int doc_topk) {
  std::vector<DumpRecord> records = parse_dump(read_file(dump_path));
  std::vector<std::string> ids;
  std::vector<DenseVec> dense;
  std::vector<SparseVec> sparse;
  for (DumpRecord& r : records) {
    if (r.kind != TextKind::Passage) continue;
    ids.push_back(r.id);
    dense.push_back(std::move(r.dense));
    sparse.push_back(doc_topk > 0 ? topk_sparsify(r.sparse, doc_topk)
                                  : std::move(r.sparse));
  }
  if (ids.empty()) throw InputError("index: dump holds no passage records");
  atomic_write(out_dense, format_dense_index(build_dense_index(ids, dense)));
  atomic_write(out_sparse, format_sparse_index(build_sparse_index(ids, sparse)));
  std::printf("index: %zu passages -> %s, %s\n", ids.size(), out_dense.c_str(),
              out_sparse.c_str());
}

void cmd_search(const std::string& dense_path, const std::string& sparse_path,
                const std::string& qdump_path, const std::string& mode, int k,
                int query_topk, const std::string& out_path,
                const std::string& tag) {
  if (mode != "dense" && mode != "sparse" && mode != "hybrid")
    throw ConfigError("search: mode must be dense, sparse or hybrid");
  DenseIndex didx;
  SparseIndex sidx;
  if (mode != "sparse") {
    if (dense_path.empty()) throw ConfigError("search: --dense required");
    didx = parse_dense_index(read_file(dense_path));
  }
  if (mode != "dense") {
    if (sparse_path.empty()) throw ConfigError("search: --sparse required");
    sidx = parse_sparse_index(read_file(sparse_path));
  }
  RunFile run;
  int nq = 0;
  for (const DumpRecord& r : parse_dump(read_file(qdump_path))) {
    if (r.kind != TextKind::Query) continue;
    ++nq;
    SparseVec qs = (query_topk > 0 && mode != "dense")
                       ? topk_sparsify(r.sparse, query_topk)
                       : r.sparse;
    std::vector<SearchHit> hits;
    if (mode == "dense")
      hits = search_dense(didx, r.dense, k);
    else if (mode == "sparse")
      hits = search_sparse(sidx, qs, k);
    else
      hits = search_hybrid(didx, sidx, r.dense, qs, k);
    for (const SearchHit& h : hits) run[r.id].push_back({h.doc_id, h.score});
  }
  if (nq == 0) throw InputError("search: dump holds no query records");
  atomic_write(out_path, format_run(run, tag));
  std::printf("search: %d queries, mode %s, k=%d -> %s\n", nq, mode.c_str(), k,
              out_path.c_str());
}

void cmd_eval(const std::string& run_path, const std::string& qrels_path,
              int mrr_cutoff, const std::string& recall_cutoffs, int ndcg_cutoff,
              const std::string& out_path) {
  RunFile run = parse_run(read_file(run_path));
  Qrels qrels = parse_qrels(read_file(qrels_path));
  MetricCutoffs cutoffs;
  cutoffs.mrr = mrr_cutoff;
  cutoffs.ndcg = ndcg_cutoff;
  cutoffs.recall.clear();
  for (const std::string& c : split_on(recall_cutoffs, ','))
    if (!c.empty()) cutoffs.recall.push_back(std::stoi(c));
  MetricsReport rep = evaluate(run, qrels, cutoffs);
  std::string text = format_metrics(rep, cutoffs);
  std::fputs(text.c_str(), stdout);
  if (!out_path.empty()) atomic_write(out_path, text);
}

void cmd_analyze(const std::string& dump_path, int batch_size,
                 const std::string& out_path, const std::string& proj_path) {
  std::vector<DumpRecord> records = parse_dump(read_file(dump_path));
  ArchDivergences div = dump_divergences("dump", records, batch_size);
  std::ostringstream os;
  os << "pairs " << div.pairs << '\n';
  os << "batches " << div.batches << '\n';
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.9g", div.avg_kl);
  os << "KL " << buf << '\n';
  std::snprintf(buf, sizeof(buf), "%.9g", div.avg_js);
  os << "JS " << buf << '\n';
  for (size_t b = 0; b < div.per_batch.size(); ++b) {
    std::snprintf(buf, sizeof(buf), "%.9g %.9g", div.per_batch[b].kl,
                  div.per_batch[b].js);
    os << "batch" << b << ' ' << buf << '\n';
  }
  std::fputs(os.str().c_str(), stdout);
  if (!out_path.empty()) atomic_write(out_path, os.str());

  if (!proj_path.empty()) {
    std::vector<DenseVec> embs;
    for (const DumpRecord& r : records) embs.push_back(r.dense);
    Projection proj = project_2d(embs);
    if (proj.degenerate)
      std::fprintf(stderr, "analyze: projection degenerate (rank-deficient input)\n");
    std::ostringstream ps;
    ps << "id kind x y" << (proj.degenerate ? " # degenerate" : "") << '\n';
    for (size_t i = 0; i < records.size(); ++i)
      ps << records[i].id << ' ' << kind_name(records[i].kind) << ' '
         << dtos(proj.coords[i][0]) << ' ' << dtos(proj.coords[i][1]) << '\n';
    atomic_write(proj_path, ps.str());
  }
}

// ---------------------------------------------------------------------------
// ablate: MoTE vs Siamese vs FullSep vs swapped-experts under one seed.
// ---------------------------------------------------------------------------

struct AblateOutcome {
  std::string mode;
  double mrr[3] = {0, 0, 0};  // dense, sparse, hybrid
  double recall_at_k[3] = {0, 0, 0};
  double kl = 0.0, js = 0.0;
};

void cmd_ablate(const std::string& config_path, const std::string& out_dir,
                int64_t seed, bool seed_given) {
  KvConfig cfg = config_path.empty() ? KvConfig() : KvConfig::load(config_path);
  int64_t s = resolve_seed(cfg, seed, seed_given);
  SyntheticSpec synth = read_synth_spec(cfg, "synth_", s);
  long vocab_max = cfg.get_int(
      "vocab_max_size", synth.vocab_size + ModelConfig::kNumSpecialTokens + 10);
  ModelConfig base_model = read_model_config(cfg, 0, s);
  PretrainConfig pt = read_pretrain_config(cfg);
  FinetuneConfig ft = read_finetune_config(cfg, "ft_");
  int qpp = int(cfg.get_int("queries_per_passage", synth.pseudo_queries_per_passage));
  int eval_k = int(cfg.get_int("eval_k", 10));
  double eval_fraction = cfg.get_double("eval_fraction", 0.2);
  int div_batch = int(cfg.get_int("divergence_batch", 400));
  cfg.reject_unknown();
  pt.validate();
  ft.validate();

  fs::create_directories(out_dir);
  SyntheticData data = generate_synthetic(synth);
  std::vector<std::string> texts;
  for (const CorpusRecord& r : data.corpus) {
    texts.push_back(r.text);
    for (const std::string& pq : r.pseudo_queries) texts.push_back(pq);
  }
  for (const QueryRecord& q : data.queries) texts.push_back(q.text);
  Vocab vocab = Vocab::build(texts, int(vocab_max));
  base_model.vocab_size = vocab.size();

  int hold_every = eval_fraction > 0 ? std::max(2, int(1.0 / eval_fraction)) : 0;
  std::vector<QueryRecord> train_q, eval_q;
  Qrels train_qrels, eval_qrels;
  for (size_t i = 0; i < data.queries.size(); ++i) {
    bool hold = hold_every > 0 && (i % hold_every) == size_t(hold_every - 1);
    (hold ? eval_q : train_q).push_back(data.queries[i]);
    (hold ? eval_qrels : train_qrels)[data.queries[i].id] =
        data.qrels[data.queries[i].id];
  }

  // Stage-1 BM25 negatives, shared by every architecture.
  std::vector<std::string> ids;
  std::vector<std::vector<int>> bags;
  int huge = 1 << 20;
  for (const CorpusRecord& r : data.corpus) {
    ids.push_back(r.id);
    bags.push_back(content_terms(vocab.tokenize(r.text, TextKind::Passage, huge)));
  }
  Bm25Index bm25 = build_bm25_index(ids, bags);
  std::map<std::string, std::vector<int>> qterms;
  for (const QueryRecord& q : train_q)
    qterms[q.id] = content_terms(vocab.tokenize(q.text, TextKind::Query, huge));
  NegativeMiningResult negs =
      bm25_negatives(bm25, qterms, train_qrels, ft.negative_depth,
                     ft.negatives_per_query, uint64_t(s));
  std::vector<Triple> triples;
  for (const QueryRecord& q : train_q) {
    std::string pos = first_positive(train_qrels, q.id);
    if (pos.empty() || negs.negatives.at(q.id).empty()) continue;
    triples.push_back({q.id, pos, negs.negatives.at(q.id)});
  }

  std::map<std::string, TokenSequence> qmap =
      tokenize_queries(data.queries, vocab, base_model.max_seq_len);
  std::map<std::string, TokenSequence> pmap =
      tokenize_corpus(data.corpus, vocab, base_model.max_seq_len);
  std::vector<ContrastiveExample> examples =
      build_finetune_examples(triples, qmap, pmap, ft.negatives_per_query);
  PretrainPairs pairs = build_pretrain_pairs(data.corpus, vocab, base_model, qpp);

  std::vector<AblateOutcome> outcomes;
  MetricCutoffs cutoffs{eval_k, {1, eval_k, 50}, eval_k};
  for (const std::string& mode : {"mote", "siamese", "fullsep", "swap"}) {
    ModelConfig mcfg = base_model;
    if (mode == "siamese") mcfg.architecture_mode = ArchMode::Siamese;
    else if (mode == "fullsep") mcfg.architecture_mode = ArchMode::FullSep;
    else mcfg.architecture_mode = ArchMode::MoTE;
    // The swapped run pre-trains with inverted expert routing (queries through
    // the passage expert and vice versa), then fine-tunes and serves with
    // correct routing.
    mcfg.swap_experts = (mode == "swap");

    ModelParams params = init_params(mcfg, s);
    run_pretrain(params, pairs.examples, pt, s);
    params.config.swap_experts = false;
    save_checkpoint(params, (fs::path(out_dir) / (mode + "_pretrained.ckpt")).string());
    run_finetune(params, examples, ft, s);
    save_checkpoint(params, (fs::path(out_dir) / (mode + "_s1.ckpt")).string());

    IndexPair idx = build_indexes(params, data.corpus, vocab);
    AblateOutcome out;
    out.mode = mode;
    const char* mode_names[3] = {"dense", "sparse", "hybrid"};
    for (int m = 0; m < 3; ++m) {
      RunFile run;
      for (const QueryRecord& q : eval_q) {
        TextRepr r = represent_text(params, qmap.at(q.id));
        std::vector<SearchHit> hits;
        if (m == 0) hits = search_dense(idx.dense, r.dense, eval_k);
        else if (m == 1) hits = search_sparse(idx.sparse, r.sparse, eval_k);
        else hits = search_hybrid(idx.dense, idx.sparse, r.dense, r.sparse, eval_k);
        for (const SearchHit& h : hits) run[q.id].push_back({h.doc_id, h.score});
      }
      atomic_write((fs::path(out_dir) / (mode + "_" + mode_names[m] + ".run")).string(),
                   format_run(run, mode));
      MetricsReport rep = evaluate(run, eval_qrels, cutoffs);
      out.mrr[m] = rep.mrr;
      out.recall_at_k[m] = rep.recall[eval_k];
    }
    // Divergences over eval query-positive pairs.
    std::vector<DumpRecord> pair_records;
    for (const QueryRecord& q : eval_q) {
      std::string pos = first_positive(eval_qrels, q.id);
      if (pos.empty()) continue;
      pair_records.push_back(make_record(params, q.id, qmap.at(q.id)));
      pair_records.push_back(make_record(params, pos, pmap.at(pos)));
    }
    atomic_write((fs::path(out_dir) / (mode + "_pairs.dump")).string(),
                 format_dump(pair_records, mcfg.hidden_dim));
    ArchDivergences div = dump_divergences(mode, pair_records, div_batch);
    out.kl = div.avg_kl;
    out.js = div.avg_js;
    outcomes.push_back(out);
    std::printf("ablate %-8s mrr dense %.4f sparse %.4f hybrid %.4f  KL %.3g JS %.3g\n",
                mode.c_str(), out.mrr[0], out.mrr[1], out.mrr[2], out.kl, out.js);
  }

  std::ostringstream table;
  table << "mode\tmrr_dense\tmrr_sparse\tmrr_hybrid\trecall_dense\trecall_sparse"
           "\trecall_hybrid\tkl\tjs\n";
  for (const AblateOutcome& o : outcomes) {
    table << o.mode;
    for (int m = 0; m < 3; ++m) table << '\t' << dtos(o.mrr[m]);
    for (int m = 0; m < 3; ++m) table << '\t' << dtos(o.recall_at_k[m]);
    table << '\t' << dtos(o.kl) << '\t' << dtos(o.js) << '\n';
  }
  atomic_write((fs::path(out_dir) / "table.tsv").string(), table.str());
  std::printf("ablate: table -> %s\n",
              (fs::path(out_dir) / "table.tsv").string().c_str());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mixture-of-textual-experts passage retrieval lab"};
  app.require_subcommand(1);

  int64_t seed = 42;
  bool seed_given = false;
  auto with_seed = [&](CLI::App* sub) {
    sub->add_option("--seed", seed, "random seed (overrides the config key)")
        ->each([&](const std::string&) { seed_given = true; });
    return sub;
  };

  std::string config, out_dir = "data", corpus, queries, qrels, vocab_path;
  std::string ckpt, out_path, triples, dump, dense_idx, sparse_idx, loss_log;
  std::string mode = "hybrid", tag = "mote", run_path, report, proj;
  double eval_fraction = 0.2;
  int depth = 200, count = 15, k = 10, query_topk = 128, doc_topk = 0;
  int batch_size = 400, mrr_cutoff = 10, ndcg_cutoff = 10;
  int swap_override = -1;
  std::string recall_cutoffs = "1,50,1000";
  bool pairs = false;

  CLI::App* gen = with_seed(app.add_subcommand("gen-data", "generate a synthetic corpus"));
  gen->add_option("--config", config, "key=value config file");
  gen->add_option("--out-dir", out_dir, "output directory")->required();
  gen->add_option("--eval-fraction", eval_fraction, "held-out query fraction");

  CLI::App* pre = with_seed(app.add_subcommand("pretrain", "masked auto-encoding pre-training"));
  pre->add_option("--config", config, "key=value config file");
  pre->add_option("--corpus", corpus, "corpus.tsv")->required();
  pre->add_option("--vocab", vocab_path, "vocab.txt")->required();
  pre->add_option("--out", out_path, "output checkpoint")->required();
  pre->add_option("--loss-log", loss_log, "per-step loss trace file");

  CLI::App* mine = with_seed(app.add_subcommand("mine-negatives", "mine hard negatives"));
  mine->add_option("--mode", mode, "bm25 or model")->required();
  mine->add_option("--corpus", corpus)->required();
  mine->add_option("--queries", queries)->required();
  mine->add_option("--qrels", qrels)->required();
  mine->add_option("--vocab", vocab_path)->required();
  mine->add_option("--checkpoint", ckpt, "model checkpoint (mode=model)");
  mine->add_option("--depth", depth, "candidate depth");
  mine->add_option("--count", count, "negatives per query");
  mine->add_option("--out", out_path, "output triples file")->required();

  CLI::App* ft = with_seed(app.add_subcommand("finetune", "contrastive fine-tuning"));
  ft->add_option("--config", config);
  ft->add_option("--checkpoint", ckpt)->required();
  ft->add_option("--triples", triples)->required();
  ft->add_option("--corpus", corpus)->required();
  ft->add_option("--queries", queries)->required();
  ft->add_option("--vocab", vocab_path)->required();
  ft->add_option("--out", out_path)->required();
  ft->add_option("--swap-experts", swap_override,
                 "override the checkpoint's swap_experts flag (0 or 1)");

  CLI::App* enc = with_seed(app.add_subcommand("encode", "dump embeddings"));
  enc->add_option("--checkpoint", ckpt)->required();
  enc->add_option("--vocab", vocab_path)->required();
  enc->add_option("--corpus", corpus);
  enc->add_option("--queries", queries);
  enc->add_option("--qrels", qrels);
  enc->add_flag("--pairs", pairs, "emit query/positive-passage pairs");
  enc->add_option("--out", out_path)->required();

  CLI::App* idx = with_seed(app.add_subcommand("index", "build retrieval indexes"));
  idx->add_option("--dump", dump)->required();
  idx->add_option("--out-dense", dense_idx)->required();
  idx->add_option("--out-sparse", sparse_idx)->required();
  idx->add_option("--doc-topk", doc_topk, "sparsify passage vectors (0 = keep all)");

  CLI::App* srch = with_seed(app.add_subcommand("search", "run retrieval"));
  srch->add_option("--dense", dense_idx);
  srch->add_option("--sparse", sparse_idx);
  srch->add_option("--queries-dump", dump)->required();
  srch->add_option("--mode", mode, "dense, sparse or hybrid");
  srch->add_option("--k", k, "result depth");
  srch->add_option("--query-topk", query_topk, "top-k sparse query entries (0 = all)");
  srch->add_option("--out", out_path)->required();
  srch->add_option("--tag", tag, "run tag");

  CLI::App* ev = with_seed(app.add_subcommand("eval", "score a run against qrels"));
  ev->add_option("--run", run_path)->required();
  ev->add_option("--qrels", qrels)->required();
  ev->add_option("--mrr-cutoff", mrr_cutoff);
  ev->add_option("--recall-cutoffs", recall_cutoffs);
  ev->add_option("--ndcg-cutoff", ndcg_cutoff);
  ev->add_option("--out", report, "also write the report here");

  CLI::App* an = with_seed(app.add_subcommand("analyze", "divergences and 2-D projection"));
  an->add_option("--dump", dump)->required();
  an->add_option("--batch-size", batch_size, "pairs per divergence batch");
  an->add_option("--out", report);
  an->add_option("--proj-out", proj, "2-D projection output");

  CLI::App* ab = with_seed(app.add_subcommand("ablate", "compare architectures under one seed"));
  ab->add_option("--config", config);
  ab->add_option("--out-dir", out_dir)->required();

  try {
    app.parse(argc, argv);
    if (gen->parsed())
      cmd_gen_data(config, out_dir, seed, seed_given, eval_fraction);
    else if (pre->parsed())
      cmd_pretrain(config, corpus, vocab_path, out_path, seed, seed_given, loss_log);
    else if (mine->parsed())
      cmd_mine(mode, corpus, queries, qrels, vocab_path, ckpt, depth, count,
               out_path, seed);
    else if (ft->parsed())
      cmd_finetune(config, ckpt, triples, corpus, queries, vocab_path, out_path,
                   seed, seed_given, swap_override);
    else if (enc->parsed())
      cmd_encode(ckpt, vocab_path, corpus, queries, qrels, pairs, out_path);
    else if (idx->parsed())
      cmd_index(dump, dense_idx, sparse_idx, doc_topk);
    else if (srch->parsed())
      cmd_search(dense_idx, sparse_idx, dump, mode, k, query_topk, out_path, tag);
    else if (ev->parsed())
      cmd_eval(run_path, qrels, mrr_cutoff, recall_cutoffs, ndcg_cutoff, report);
    else if (an->parsed())
      cmd_analyze(dump, batch_size, report, proj);
    else if (ab->parsed())
      cmd_ablate(config, out_dir, seed, seed_given);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
