#include <cmath>
#include <functional>

#include "doctest.h"
#include "mote/pretrain.hpp"
#include "mote/training.hpp"

using namespace mote;

namespace {

ModelConfig tiny_config(ArchMode mode = ArchMode::MoTE) {
  ModelConfig cfg;
  cfg.num_layers = 2;
  cfg.hidden_dim = 16;
  cfg.num_heads = 4;
  cfg.ffn_dim = 32;
  cfg.vocab_size = 50;
  cfg.max_seq_len = 12;
  cfg.architecture_mode = mode;
  return cfg;
}

TokenSequence make_seq(Rng& rng, int content_len, TextKind kind) {
  TokenSequence t;
  t.kind = kind;
  t.ids.push_back(kClsId);
  for (int i = 0; i < content_len; ++i)
    t.ids.push_back(ModelConfig::kNumSpecialTokens +
                    int(rng.below(50 - ModelConfig::kNumSpecialTokens)));
  t.ids.push_back(kSepId);
  return t;
}

PretrainBatch make_pretrain_batch(const ModelConfig& cfg, double mask_ratio,
                                  uint64_t seed) {
  Rng rng(seed);
  PretrainBatch batch;
  for (int e = 0; e < 2; ++e) {
    PreparedPretrainExample ex;
    TokenSequence passage = make_seq(rng, 7, TextKind::Passage);
    TokenSequence query = make_seq(rng, 4, TextKind::Query);
    Rng mask_rng(seed + 100 + e);
    ex.passage = mask_tokens(passage, mask_ratio, mask_rng);
    ex.query = mask_tokens(query, mask_ratio, mask_rng);
    ex.span = query;
    batch.examples.push_back(std::move(ex));
  }
  (void)cfg;
  return batch;
}

ContrastiveBatch make_contrastive_batch(uint64_t seed) {
  Rng rng(seed);
  ContrastiveBatch batch;
  TokenSequence shared_neg = make_seq(rng, 6, TextKind::Passage);
  for (int e = 0; e < 2; ++e) {
    ContrastiveExample ex;
    ex.query_id = "q" + std::to_string(e);
    ex.query = make_seq(rng, 3, TextKind::Query);
    ex.positive_id = "pos" + std::to_string(e);
    ex.positive = make_seq(rng, 6, TextKind::Passage);
    ex.negative_ids = {"negA" + std::to_string(e), "shared"};
    ex.negatives = {make_seq(rng, 5, TextKind::Passage), shared_neg};
    batch.examples.push_back(std::move(ex));
  }
  return batch;
}

struct GradCheckResult {
  double max_rel_err = 0.0;
  int worst_index = -1;
  std::string worst_tensor;
};

// Central finite differences at eps=1e-4 in double precision against the
// analytic gradient, every parameter checked unless stride > 1.
GradCheckResult grad_check(ModelParams params,
                           const std::function<double(const ModelParams&)>& loss_fn,
                           const Grads& analytic, int stride = 1) {
  const double eps = 1e-4;
  GradCheckResult res;
  for (size_t i = 0; i < params.data.size(); i += stride) {
    double saved = params.data[i];
    params.data[i] = saved + eps;
    double up = loss_fn(params);
    params.data[i] = saved - eps;
    double down = loss_fn(params);
    params.data[i] = saved;
    double fd = (up - down) / (2.0 * eps);
    double a = analytic.data[i];
    double err = std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), 1e-6});
    if (err > res.max_rel_err) {
      res.max_rel_err = err;
      res.worst_index = int(i);
    }
  }
  if (res.worst_index >= 0) {
    for (const TensorInfo& t : params.layout->tensors) {
      if (size_t(res.worst_index) >= t.offset &&
          size_t(res.worst_index) < t.offset + size_t(t.rows) * t.cols)
        res.worst_tensor = t.name;
    }
  }
  return res;
}

}  // namespace

TEST_CASE("MLM gradients match finite differences (every parameter)") {
  ModelConfig cfg = tiny_config();
  ModelParams params = init_params(cfg, 42);
  PretrainBatch batch = make_pretrain_batch(cfg, 0.4, 11);
  PretrainOptions opts;
  opts.dense_weight = 0.0;
  opts.sparse_weight = 0.0;
  opts.query_mlm = true;

  Grads grads(params);
  loss_and_grads(params, batch, opts, grads);
  auto loss_fn = [&](const ModelParams& p) {
    Grads g(p);
    return loss_and_grads(p, batch, opts, g).total;
  };
  GradCheckResult r = grad_check(params, loss_fn, grads);
  INFO("worst tensor: " << r.worst_tensor << " idx " << r.worst_index);
  CHECK(r.max_rel_err < 1e-4);
}

// Seeds here and below are pinned so that no parameter's +-eps interval
// crosses a relu/argmax boundary of the sparse pooling; central differences
// measure one-sided mixtures at such kinks and the comparison is meaningless
// there.
TEST_CASE("CLM gradients through both bottlenecks match finite differences") {
  ModelConfig cfg = tiny_config();
  ModelParams params = init_params(cfg, 43);
  PretrainBatch batch = make_pretrain_batch(cfg, 0.0, 11);  // no MLM labels
  PretrainOptions opts;
  opts.dense_weight = 1.0;
  opts.sparse_weight = 0.7;
  opts.query_mlm = false;

  Grads grads(params);
  loss_and_grads(params, batch, opts, grads);
  auto loss_fn = [&](const ModelParams& p) {
    Grads g(p);
    return loss_and_grads(p, batch, opts, g).total;
  };
  GradCheckResult r = grad_check(params, loss_fn, grads);
  INFO("worst tensor: " << r.worst_tensor << " idx " << r.worst_index);
  CHECK(r.max_rel_err < 1e-4);
}

TEST_CASE("combined pre-training gradients match finite differences") {
  ModelConfig cfg = tiny_config();
  ModelParams params = init_params(cfg, 43);
  PretrainBatch batch = make_pretrain_batch(cfg, 0.35, 11);
  PretrainOptions opts;  // defaults: both bottlenecks, query MLM on

  Grads grads(params);
  loss_and_grads(params, batch, opts, grads);
  auto loss_fn = [&](const ModelParams& p) {
    Grads g(p);
    return loss_and_grads(p, batch, opts, g).total;
  };
  GradCheckResult r = grad_check(params, loss_fn, grads);
  INFO("worst tensor: " << r.worst_tensor << " idx " << r.worst_index);
  CHECK(r.max_rel_err < 1e-4);
}

TEST_CASE("contrastive gradients match finite differences (every parameter)") {
  ModelConfig cfg = tiny_config();
  ModelParams params = init_params(cfg, 46);
  ContrastiveBatch batch = make_contrastive_batch(157);
  ContrastiveOptions opts;
  opts.temperature = 0.8;
  opts.in_batch_negatives = true;

  Grads grads(params);
  loss_and_grads(params, batch, opts, grads);
  auto loss_fn = [&](const ModelParams& p) {
    Grads g(p);
    return loss_and_grads(p, batch, opts, g);
  };
  GradCheckResult r = grad_check(params, loss_fn, grads);
  INFO("worst tensor: " << r.worst_tensor << " idx " << r.worst_index);
  CHECK(r.max_rel_err < 1e-4);
}

TEST_CASE("gradients check out in Siamese and FullSep modes") {
  struct Case {
    ArchMode mode;
    int64_t init_seed;
  };
  for (Case c : {Case{ArchMode::Siamese, 44}, Case{ArchMode::FullSep, 43}}) {
    CAPTURE(int(c.mode));
    ModelConfig cfg = tiny_config(c.mode);
    ModelParams params = init_params(cfg, c.init_seed);
    PretrainBatch batch = make_pretrain_batch(cfg, 0.3, 11);
    PretrainOptions opts;
    Grads grads(params);
    loss_and_grads(params, batch, opts, grads);
    auto loss_fn = [&](const ModelParams& p) {
      Grads g(p);
      return loss_and_grads(p, batch, opts, g).total;
    };
    GradCheckResult r = grad_check(params, loss_fn, grads);
    INFO("worst tensor: " << r.worst_tensor << " idx " << r.worst_index);
    CHECK(r.max_rel_err < 1e-4);
  }
}

TEST_CASE("passage-only batches leave query experts untouched") {
  ModelConfig cfg = tiny_config();
  ModelParams params = init_params(cfg, 47);
  PretrainBatch batch = make_pretrain_batch(cfg, 0.4, 15);
  PretrainOptions opts;
  opts.query_mlm = false;  // only Passage-kind texts reach the encoder
  Grads grads(params);
  loss_and_grads(params, batch, opts, grads);
  for (const BlockHandles& blk : params.layout->tower[0].blocks) {
    const FfnHandles& qf = blk.ffn[int(TextKind::Query)];
    for (int id : {qf.w1, qf.b1, qf.w2, qf.b2, qf.ln_g, qf.ln_b}) {
      TensorView g = grads.view(id);
      for (size_t i = 0; i < g.size(); ++i) CHECK(g.p[i] == 0.0);
    }
  }
}

TEST_CASE("duplicating every example leaves mean-reduced loss and grads unchanged") {
  ModelConfig cfg = tiny_config();
  ModelParams params = init_params(cfg, 48);
  PretrainBatch batch = make_pretrain_batch(cfg, 0.3, 16);
  PretrainBatch doubled = batch;
  for (const PreparedPretrainExample& ex : batch.examples)
    doubled.examples.push_back(ex);
  PretrainOptions opts;
  Grads g1(params), g2(params);
  PretrainLossBreakdown l1 = loss_and_grads(params, batch, opts, g1);
  PretrainLossBreakdown l2 = loss_and_grads(params, doubled, opts, g2);
  CHECK(l1.total == doctest::Approx(l2.total).epsilon(1e-12));
  for (size_t i = 0; i < g1.data.size(); ++i)
    CHECK(g1.data[i] == doctest::Approx(g2.data[i]).epsilon(1e-9));
}

TEST_CASE("loss_and_grads is deterministic") {
  ModelConfig cfg = tiny_config();
  ModelParams params = init_params(cfg, 49);
  PretrainBatch batch = make_pretrain_batch(cfg, 0.3, 17);
  PretrainOptions opts;
  Grads g1(params), g2(params);
  double l1 = loss_and_grads(params, batch, opts, g1).total;
  double l2 = loss_and_grads(params, batch, opts, g2).total;
  CHECK(l1 == l2);
  CHECK(g1.data == g2.data);
}
