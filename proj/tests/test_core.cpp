#include <cmath>
#include <limits>

#include "doctest.h"
#include "mote/model.hpp"

using namespace mote;

namespace {

ModelConfig small_config(ArchMode mode = ArchMode::MoTE) {
  ModelConfig cfg;
  cfg.num_layers = 2;
  cfg.hidden_dim = 16;
  cfg.num_heads = 4;
  cfg.ffn_dim = 32;
  cfg.vocab_size = 20;
  cfg.max_seq_len = 16;
  cfg.architecture_mode = mode;
  return cfg;
}

TokenSequence seq(std::initializer_list<int> mid, TextKind kind) {
  TokenSequence t;
  t.kind = kind;
  t.ids.push_back(kClsId);
  for (int id : mid) t.ids.push_back(id);
  t.ids.push_back(kSepId);
  return t;
}

bool bit_equal(const Mat& a, const Mat& b) {
  return a.rows == b.rows && a.cols == b.cols && a.v == b.v;
}

}  // namespace

TEST_CASE("init_params is deterministic and differs across seeds") {
  ModelConfig cfg = small_config();
  ModelParams a = init_params(cfg, 7);
  ModelParams b = init_params(cfg, 7);
  CHECK(a.data == b.data);
  ModelParams c = init_params(cfg, 8);
  CHECK(a.data != c.data);
}

TEST_CASE("query experts start as bit-exact copies of passage experts") {
  ModelParams p = init_params(small_config(), 42);
  for (const BlockHandles& blk : p.layout->tower[0].blocks) {
    const FfnHandles& qf = blk.ffn[int(TextKind::Query)];
    const FfnHandles& pf = blk.ffn[int(TextKind::Passage)];
    int qs[] = {qf.w1, qf.b1, qf.w2, qf.b2, qf.ln_g, qf.ln_b};
    int ps[] = {pf.w1, pf.b1, pf.w2, pf.b2, pf.ln_g, pf.ln_b};
    for (int i = 0; i < 6; ++i) {
      TensorView q = p.view(qs[i]);
      TensorView pp = p.view(ps[i]);
      REQUIRE(q.size() == pp.size());
      for (size_t j = 0; j < q.size(); ++j) CHECK(q.p[j] == pp.p[j]);
    }
  }
}

TEST_CASE("init rejects invalid configs") {
  ModelConfig cfg = small_config();
  cfg.num_heads = 3;  // does not divide 16
  CHECK_THROWS_AS(init_params(cfg, 1), ConfigError);
  cfg = small_config();
  cfg.max_seq_len = 2;
  CHECK_THROWS_AS(init_params(cfg, 1), ConfigError);
  cfg = small_config();
  cfg.vocab_size = 4;
  CHECK_THROWS_AS(init_params(cfg, 1), ConfigError);
}

TEST_CASE("fresh MoTE params encode queries and passages identically") {
  ModelParams p = init_params(small_config(), 42);
  Mat hq = encode(p, seq({7, 9, 5}, TextKind::Query));
  Mat hp = encode(p, seq({7, 9, 5}, TextKind::Passage));
  CHECK(bit_equal(hq, hp));
}

TEST_CASE("perturbing a query expert affects only query encodings") {
  ModelParams p = init_params(small_config(), 42);
  TokenSequence tq = seq({7, 9, 5}, TextKind::Query);
  TokenSequence tp = seq({7, 9, 5}, TextKind::Passage);
  Mat hp_before = encode(p, tp);
  Mat hq_before = encode(p, tq);

  const FfnHandles& qf = p.layout->tower[0].blocks[0].ffn[int(TextKind::Query)];
  p.view(qf.w1).at(0, 0) += 0.25;
  Mat hq_after = encode(p, tq);
  Mat hp_after = encode(p, tp);
  CHECK_FALSE(bit_equal(hq_after, hq_before));
  CHECK(bit_equal(hp_after, hp_before));

  SUBCASE("swap_experts reroutes queries through the passage expert") {
    ModelParams swapped = p;
    swapped.config.swap_experts = true;
    TokenSequence tq2 = tq;
    Mat hq_swapped = encode(swapped, tq2);
    CHECK(bit_equal(hq_swapped, hp_before));
  }
}

TEST_CASE("shared attention is identical across kinds in MoTE mode") {
  ModelParams p = init_params(small_config(), 3);
  const FfnHandles& qf = p.layout->tower[0].blocks[0].ffn[int(TextKind::Query)];
  p.view(qf.w2).at(1, 2) -= 0.5;
  EncodeCache cq = encode_with_cache(p, seq({3, 11}, TextKind::Query));
  EncodeCache cp = encode_with_cache(p, seq({3, 11}, TextKind::Passage));
  // First block sees the same input; its post-attention LN output must match
  // bit-for-bit even though the expert weights now differ.
  CHECK(bit_equal(cq.blocks[0].y1, cp.blocks[0].y1));
  CHECK_FALSE(bit_equal(cq.blocks[0].out, cp.blocks[0].out));
}

TEST_CASE("unused expert is never read (poison check)") {
  ModelParams p = init_params(small_config(), 42);
  const FfnHandles& pf = p.layout->tower[0].blocks[0].ffn[int(TextKind::Passage)];
  TensorView w = p.view(pf.w1);
  for (size_t i = 0; i < w.size(); ++i)
    w.p[i] = std::numeric_limits<double>::quiet_NaN();
  Mat hq = encode(p, seq({7, 9, 5}, TextKind::Query));
  CHECK(hq.all_finite());
  CHECK_THROWS_AS(encode(p, seq({7, 9, 5}, TextKind::Passage)), NumericError);
}

TEST_CASE("siamese mode shares one expert across kinds") {
  ModelParams p = init_params(small_config(ArchMode::Siamese), 42);
  const FfnHandles& f = p.layout->tower[0].blocks[1].ffn[0];
  p.view(f.w1).at(2, 3) += 0.4;
  Mat hq = encode(p, seq({6, 2 + 5}, TextKind::Query));
  Mat hp = encode(p, seq({6, 2 + 5}, TextKind::Passage));
  CHECK(bit_equal(hq, hp));
}

TEST_CASE("fullsep towers are fully independent after perturbation") {
  ModelParams p = init_params(small_config(ArchMode::FullSep), 42);
  TokenSequence tq = seq({7, 9}, TextKind::Query);
  TokenSequence tp = seq({7, 9}, TextKind::Passage);
  // Copy-initialized towers agree at init.
  CHECK(bit_equal(encode(p, tq), encode(p, tp)));
  const TowerHandles& qt = p.layout->tower[int(TextKind::Query)];
  p.view(qt.blocks[0].attn.wq).at(0, 1) += 0.3;
  Mat hp_before = encode(p, tp);
  CHECK_FALSE(bit_equal(encode(p, tq), encode(p, tp)));
  CHECK(bit_equal(encode(p, tp), hp_before));
}

TEST_CASE("encode validates token sequences") {
  ModelParams p = init_params(small_config(), 42);
  TokenSequence bad = seq({7}, TextKind::Query);
  bad.ids[1] = 25;  // out of vocab
  CHECK_THROWS_AS(encode(p, bad), InputError);
  TokenSequence no_cls;
  no_cls.ids = {5, kSepId};
  CHECK_THROWS_AS(encode(p, no_cls), InputError);
  TokenSequence long_seq;
  long_seq.ids.push_back(kClsId);
  for (int i = 0; i < 20; ++i) long_seq.ids.push_back(5);
  long_seq.ids.push_back(kSepId);
  CHECK_THROWS_AS(encode(p, long_seq), InputError);
}

TEST_CASE("decoder causal mask: earlier logits ignore later span tokens") {
  ModelParams p = init_params(small_config(), 9);
  std::vector<double> b(p.config.hidden_dim, 0.1);
  TokenSequence span = seq({7, 9, 5, 11}, TextKind::Query);
  Mat base = decode_clm(p, b, span);
  CHECK(base.rows == span.length());
  CHECK(base.cols == p.config.vocab_size);
  int j = 3;
  TokenSequence changed = span;
  changed.ids[j] = 12;
  Mat after = decode_clm(p, b, changed);
  for (int i = 0; i <= j; ++i)
    for (int v = 0; v < base.cols; ++v)
      CHECK(base.at(i, v) == after.at(i, v));
  bool any_diff = false;
  for (int i = j + 1; i < base.rows; ++i)
    for (int v = 0; v < base.cols; ++v)
      if (base.at(i, v) != after.at(i, v)) any_diff = true;
  CHECK(any_diff);
}

TEST_CASE("changing the bottleneck changes logits at every position") {
  ModelParams p = init_params(small_config(), 9);
  TokenSequence span = seq({7, 9, 5}, TextKind::Query);
  std::vector<double> b1(p.config.hidden_dim, 0.1);
  std::vector<double> b2(p.config.hidden_dim, -0.2);
  Mat l1 = decode_clm(p, b1, span);
  Mat l2 = decode_clm(p, b2, span);
  for (int i = 0; i < l1.rows; ++i) {
    bool row_diff = false;
    for (int v = 0; v < l1.cols; ++v)
      if (l1.at(i, v) != l2.at(i, v)) row_diff = true;
    CHECK(row_diff);
  }
}

TEST_CASE("zero params propagate to uniform (all-zero) decoder logits") {
  ModelParams p = init_params(small_config(), 1);
  std::fill(p.data.begin(), p.data.end(), 0.0);
  std::vector<double> b(p.config.hidden_dim, 0.0);
  Mat logits = decode_clm(p, b, seq({7, 9}, TextKind::Query));
  for (double x : logits.v) CHECK(x == 0.0);
}

TEST_CASE("decoder rejects overlong spans") {
  ModelParams p = init_params(small_config(), 1);
  std::vector<double> b(p.config.hidden_dim, 0.0);
  TokenSequence span;
  span.kind = TextKind::Query;
  span.ids.push_back(kClsId);
  for (int i = 0; i < 15; ++i) span.ids.push_back(6);
  span.ids.push_back(kSepId);  // length 17 > max_seq_len - 1 = 15
  CHECK_THROWS_AS(decode_clm(p, b, span), InputError);
}
