#pragma once

#include <map>
#include <string>
#include <vector>

#include "mote/losses.hpp"
#include "mote/represent.hpp"

namespace mote {

// ---------------------------------------------------------------------------
// Encoder head: token logits for MLM rows plus sparse pooling, computed in one
// streaming pass over the projection h . E^T so the row buffer never needs to
// be materialized for the whole vocabulary at every position.
// ---------------------------------------------------------------------------

struct EncoderHeadCache {
  std::vector<int> mlm_rows;    // sequence positions carrying MLM labels
  std::vector<int> mlm_labels;  // original token ids at those positions
  Mat mlm_logits;               // one row per masked position
  SparsePoolCache spr;
  SparseVec spr_vec;
};

inline EncoderHeadCache encoder_head_forward(const ModelParams& params,
                                             const EncodeCache& enc,
                                             const std::vector<int>& positions,
                                             const std::vector<int>& labels,
                                             bool want_sparse) {
  const ModelConfig& cfg = params.config;
  const TowerHandles& tw = params.layout->tower[int(enc.routed_kind)];
  TensorView emb = params.view(tw.tok_emb);
  const Mat& h = enc.hidden();
  int n = h.rows, d = h.cols, vocab = cfg.vocab_size;

  EncoderHeadCache out;
  out.mlm_rows = positions;
  out.mlm_labels = labels;
  out.mlm_logits = Mat(int(positions.size()), vocab);
  std::map<int, int> row_to_slot;
  for (size_t s = 0; s < positions.size(); ++s)
    row_to_slot[positions[s]] = int(s);

  std::vector<double> best(want_sparse ? vocab : 0, -1e300);
  std::vector<int> best_row(want_sparse ? vocab : 0, -1);
  std::vector<double> zrow(vocab);
  for (int i = 1; i < n; ++i) {
    const double* hi = h.row(i);
    for (int v = 0; v < vocab; ++v)
      zrow[v] = dot(hi, emb.row(v), d);
    if (want_sparse) {
      for (int v = 0; v < vocab; ++v) {
        if (zrow[v] > best[v]) {
          best[v] = zrow[v];
          best_row[v] = i;
        }
      }
    }
    auto it = row_to_slot.find(i);
    if (it != row_to_slot.end())
      std::copy(zrow.begin(), zrow.end(), out.mlm_logits.row(it->second));
  }
  if (want_sparse) {
    for (int v = 0; v < vocab; ++v) {
      if (best[v] > 0.0) {
        out.spr_vec.entries.push_back({v, std::log1p(best[v])});
        out.spr.entries.push_back({v, best_row[v], best[v]});
      }
    }
  }
  return out;
}

// Routes head gradients back through the projection and the encoder.
// dmlm_logits may be empty; dspr aligns with head.spr.entries; dden is the
// gradient of the CLS dense representation.
inline void encoder_head_backward(const ModelParams& params,
                                  const EncodeCache& enc,
                                  const EncoderHeadCache& head,
                                  const Mat& dmlm_logits,
                                  const std::vector<double>& dspr,
                                  const std::vector<double>& dden,
                                  Grads& grads) {
  const TowerHandles& tw = params.layout->tower[int(enc.routed_kind)];
  TensorView emb = params.view(tw.tok_emb);
  TensorView demb = grads.view(tw.tok_emb);
  const Mat& h = enc.hidden();
  int n = h.rows, d = h.cols, vocab = params.config.vocab_size;

  Mat dh(n, d);
  if (dmlm_logits.rows > 0) {
    for (size_t s = 0; s < head.mlm_rows.size(); ++s) {
      int row = head.mlm_rows[s];
      const double* dl = dmlm_logits.row(int(s));
      double* dhi = dh.row(row);
      const double* hi = h.row(row);
      for (int v = 0; v < vocab; ++v) {
        double g = dl[v];
        if (g == 0.0) continue;
        axpy(g, emb.row(v), dhi, d);
        axpy(g, hi, demb.row(v), d);
      }
    }
  }
  for (size_t e = 0; e < dspr.size(); ++e) {
    double g = dspr[e];
    if (g == 0.0) continue;
    const SparsePoolCache::Entry& en = head.spr.entries[e];
    double dz = g / (1.0 + en.z);
    axpy(dz, emb.row(en.token), dh.row(en.row), d);
    axpy(dz, h.row(en.row), demb.row(en.token), d);
  }
  if (!dden.empty()) axpy(1.0, dden.data(), dh.row(0), d);
  encode_backward(dh, enc, params, grads);
}

// ---------------------------------------------------------------------------
// Pre-training objective: encoder MLM + bottlenecked decoder CLM.
// ---------------------------------------------------------------------------

struct MaskedText {
  TokenSequence tokens;        // with MASK substitutions applied
  std::vector<int> positions;  // masked positions, ascending
  std::vector<int> labels;     // original ids at those positions
};

struct PreparedPretrainExample {
  MaskedText passage;   // kind Passage
  MaskedText query;     // kind Query; used when query_mlm is on
  TokenSequence span;   // unmasked pseudo-query span for the decoder
};

struct PretrainBatch {
  std::vector<PreparedPretrainExample> examples;
};

struct PretrainOptions {
  double dense_weight = 1.0;
  double sparse_weight = 1.0;
  bool query_mlm = true;
};

struct PretrainLossBreakdown {
  double total = 0.0;
  double mlm = 0.0;         // mean over all masked positions in the batch
  double clm_dense = 0.0;   // mean over all next-token targets
  double clm_sparse = 0.0;
  int masked_positions = 0;
  int clm_positions = 0;
};

// Maps a sparse representation into the decoder bottleneck space:
// (SPR . E) / max(1, |SPR|_1).
inline std::vector<double> sparse_bottleneck(const SparseVec& spr,
                                             const TensorView& emb) {
  std::vector<double> b(emb.cols, 0.0);
  for (const auto& e : spr.entries) axpy(e.second, emb.row(e.first), b.data(), emb.cols);
  double denom = std::max(1.0, spr.l1_norm());
  for (double& x : b) x /= denom;
  return b;
}

inline double checked(double x, const char* what) {
  if (!std::isfinite(x)) throw NumericError(std::string("non-finite ") + what);
  return x;
}

inline PretrainLossBreakdown loss_and_grads(const ModelParams& params,
                                            const PretrainBatch& batch,
                                            const PretrainOptions& opt,
                                            Grads& grads) {
  if (batch.examples.empty()) throw InputError("empty pre-training batch");
  const ModelConfig& cfg = params.config;
  int d = cfg.hidden_dim;

  struct PerExample {
    EncodeCache enc_p;
    EncoderHeadCache head_p;
    EncodeCache enc_q;
    EncoderHeadCache head_q;
    std::vector<double> b_spr;
    DecodeCache dec_dense;
    DecodeCache dec_sparse;
  };
  std::vector<PerExample> work(batch.examples.size());

  int m_total = 0, c_total = 0;
  bool run_dense = opt.dense_weight != 0.0;
  bool run_sparse = opt.sparse_weight != 0.0;
  for (size_t i = 0; i < batch.examples.size(); ++i) {
    const PreparedPretrainExample& ex = batch.examples[i];
    PerExample& w = work[i];
    w.enc_p = encode_with_cache(params, ex.passage.tokens);
    w.head_p = encoder_head_forward(params, w.enc_p, ex.passage.positions,
                                    ex.passage.labels, run_sparse);
    m_total += int(ex.passage.labels.size());
    if (opt.query_mlm) {
      w.enc_q = encode_with_cache(params, ex.query.tokens);
      w.head_q = encoder_head_forward(params, w.enc_q, ex.query.positions,
                                      ex.query.labels, false);
      m_total += int(ex.query.labels.size());
    }
    if (ex.span.length() < 2)
      throw InputError("pre-training span must have length >= 2");
    c_total += ex.span.length() - 1;
    if (run_dense) {
      DenseVec den = pool_dense(w.enc_p.hidden());
      w.dec_dense = decode_clm_with_cache(params, den, ex.span);
    }
    if (run_sparse) {
      const TowerHandles& tw = params.layout->tower[int(w.enc_p.routed_kind)];
      w.b_spr = sparse_bottleneck(w.head_p.spr_vec, params.view(tw.tok_emb));
      w.dec_sparse = decode_clm_with_cache(params, w.b_spr, ex.span);
    }
  }

  PretrainLossBreakdown out;
  out.masked_positions = m_total;
  out.clm_positions = c_total;
  double mlm_scale = m_total > 0 ? 1.0 / double(m_total) : 0.0;
  double clm_norm = c_total > 0 ? 1.0 / double(c_total) : 0.0;

  for (size_t i = 0; i < batch.examples.size(); ++i) {
    const PreparedPretrainExample& ex = batch.examples[i];
    PerExample& w = work[i];

    // Encoder MLM: loss and dlogits for passage (and query) masked rows.
    Mat dml_p(w.head_p.mlm_logits.rows, w.head_p.mlm_logits.cols);
    for (int s = 0; s < w.head_p.mlm_logits.rows; ++s)
      out.mlm += softmax_xent(w.head_p.mlm_logits.row(s), cfg.vocab_size,
                              w.head_p.mlm_labels[s], dml_p.row(s), mlm_scale);
    Mat dml_q;
    if (opt.query_mlm) {
      dml_q = Mat(w.head_q.mlm_logits.rows, w.head_q.mlm_logits.cols);
      for (int s = 0; s < w.head_q.mlm_logits.rows; ++s)
        out.mlm += softmax_xent(w.head_q.mlm_logits.row(s), cfg.vocab_size,
                                w.head_q.mlm_labels[s], dml_q.row(s), mlm_scale);
    }

    // Decoder CLM through each bottleneck.
    std::vector<double> dden(d, 0.0);
    std::vector<double> dspr(w.head_p.spr.entries.size(), 0.0);
    if (run_dense) {
      Mat dlog(w.dec_dense.logits.rows, w.dec_dense.logits.cols);
      for (int t = 1; t < ex.span.length(); ++t)
        out.clm_dense += softmax_xent(w.dec_dense.logits.row(t), cfg.vocab_size,
                                      ex.span.ids[t], dlog.row(t),
                                      opt.dense_weight * clm_norm);
      decode_backward(dlog, w.dec_dense, params, grads, dden);
    }
    if (run_sparse) {
      Mat dlog(w.dec_sparse.logits.rows, w.dec_sparse.logits.cols);
      std::vector<double> db(d, 0.0);
      for (int t = 1; t < ex.span.length(); ++t)
        out.clm_sparse += softmax_xent(w.dec_sparse.logits.row(t),
                                       cfg.vocab_size, ex.span.ids[t],
                                       dlog.row(t), opt.sparse_weight * clm_norm);
      decode_backward(dlog, w.dec_sparse, params, grads, db);
      // Through b = (SPR . E) / max(1, |SPR|_1).
      const TowerHandles& tw = params.layout->tower[int(w.enc_p.routed_kind)];
      TensorView emb = params.view(tw.tok_emb);
      TensorView demb = grads.view(tw.tok_emb);
      const SparseVec& spr = w.head_p.spr_vec;
      double l1 = spr.l1_norm();
      double denom = std::max(1.0, l1);
      double ddenom = 0.0;
      if (l1 > 1.0) {
        // d loss / d denom = -(db . b) / denom
        ddenom = -dot(db.data(), w.b_spr.data(), d) / denom;
      }
      for (size_t e = 0; e < spr.entries.size(); ++e) {
        const auto& kv = spr.entries[e];
        dspr[e] += dot(db.data(), emb.row(kv.first), d) / denom + ddenom;
        axpy(kv.second / denom, db.data(), demb.row(kv.first), d);
      }
    }

    encoder_head_backward(params, w.enc_p, w.head_p, dml_p, dspr, dden, grads);
    if (opt.query_mlm)
      encoder_head_backward(params, w.enc_q, w.head_q, dml_q, {}, {}, grads);
  }

  out.mlm = m_total > 0 ? out.mlm : 0.0;
  out.clm_dense *= clm_norm;
  out.clm_sparse *= clm_norm;
  // out.mlm already accumulated CE * 1; normalize now.
  // (softmax_xent returns raw CE; the scale only applies to gradients)
  out.mlm *= mlm_scale;
  out.total = checked(out.mlm, "MLM loss") +
              opt.dense_weight * checked(out.clm_dense, "dense CLM loss") +
              opt.sparse_weight * checked(out.clm_sparse, "sparse CLM loss");
  return out;
}

// ---------------------------------------------------------------------------
// Fine-tuning objective: contrastive loss over hybrid scores with explicit
// hard negatives and optional in-batch negatives.
// ---------------------------------------------------------------------------

struct ContrastiveExample {
  std::string query_id;
  TokenSequence query;       // kind Query
  std::string positive_id;
  TokenSequence positive;    // kind Passage
  std::vector<std::string> negative_ids;
  std::vector<TokenSequence> negatives;  // kind Passage
};

struct ContrastiveBatch {
  std::vector<ContrastiveExample> examples;
};

struct ContrastiveOptions {
  double temperature = 1.0;
  bool in_batch_negatives = true;
};

inline double loss_and_grads(const ModelParams& params,
                             const ContrastiveBatch& batch,
                             const ContrastiveOptions& opt, Grads& grads) {
  if (batch.examples.empty()) throw InputError("empty fine-tuning batch");
  for (const ContrastiveExample& ex : batch.examples) {
    if (ex.negatives.empty())
      throw InputError("fine-tuning example without negatives: " + ex.query_id);
    for (const std::string& nid : ex.negative_ids)
      if (nid == ex.positive_id)
        throw InputError("positive listed among negatives: " + nid);
  }
  int d = params.config.hidden_dim;

  struct Text {
    EncodeCache enc;
    EncoderHeadCache head;
    DenseVec den;
    std::vector<double> dden;
    std::vector<double> dspr;
  };
  // Unique passages by id, plus one query per example.
  std::vector<Text> passages;
  std::vector<std::string> passage_ids;
  std::map<std::string, int> passage_slot;
  auto intern_passage = [&](const std::string& id, const TokenSequence& toks) {
    auto it = passage_slot.find(id);
    if (it != passage_slot.end()) return it->second;
    Text t;
    t.enc = encode_with_cache(params, toks);
    t.head = encoder_head_forward(params, t.enc, {}, {}, true);
    t.den = pool_dense(t.enc.hidden());
    t.dden.assign(d, 0.0);
    t.dspr.assign(t.head.spr.entries.size(), 0.0);
    passages.push_back(std::move(t));
    passage_ids.push_back(id);
    passage_slot[id] = int(passages.size()) - 1;
    return int(passages.size()) - 1;
  };

  std::vector<Text> queries(batch.examples.size());
  std::vector<int> pos_slot(batch.examples.size());
  std::vector<std::vector<int>> neg_slots(batch.examples.size());
  for (size_t i = 0; i < batch.examples.size(); ++i) {
    const ContrastiveExample& ex = batch.examples[i];
    Text& q = queries[i];
    q.enc = encode_with_cache(params, ex.query);
    q.head = encoder_head_forward(params, q.enc, {}, {}, true);
    q.den = pool_dense(q.enc.hidden());
    q.dden.assign(d, 0.0);
    q.dspr.assign(q.head.spr.entries.size(), 0.0);
    pos_slot[i] = intern_passage(ex.positive_id, ex.positive);
    for (size_t k = 0; k < ex.negatives.size(); ++k)
      neg_slots[i].push_back(
          intern_passage(ex.negative_ids[k], ex.negatives[k]));
  }

  auto pair_score = [&](const Text& q, const Text& p) {
    return dot(q.den.data(), p.den.data(), d) +
           score_sparse(q.head.spr_vec, p.head.spr_vec);
  };
  // d(score)/d(reprs) for one query-passage pair, scaled by g.
  auto pair_backward = [&](Text& q, Text& p, double g) {
    axpy(g, p.den.data(), q.dden.data(), d);
    axpy(g, q.den.data(), p.dden.data(), d);
    size_t a = 0, b = 0;
    const auto& qe = q.head.spr_vec.entries;
    const auto& pe = p.head.spr_vec.entries;
    while (a < qe.size() && b < pe.size()) {
      if (qe[a].first == pe[b].first) {
        q.dspr[a] += g * pe[b].second;
        p.dspr[b] += g * qe[a].second;
        ++a;
        ++b;
      } else if (qe[a].first < pe[b].first) {
        ++a;
      } else {
        ++b;
      }
    }
  };

  double total = 0.0;
  double inv_b = 1.0 / double(batch.examples.size());
  for (size_t i = 0; i < batch.examples.size(); ++i) {
    const ContrastiveExample& ex = batch.examples[i];
    Text& q = queries[i];
    // Candidate list: own positive first, own negatives, then the rest of the
    // batch's unique passages.
    std::vector<int> cands;
    std::vector<bool> used(passages.size(), false);
    cands.push_back(pos_slot[i]);
    used[pos_slot[i]] = true;
    for (int s : neg_slots[i]) {
      if (!used[s]) {
        cands.push_back(s);
        used[s] = true;
      }
    }
    if (opt.in_batch_negatives) {
      for (size_t s = 0; s < passages.size(); ++s)
        if (!used[s]) cands.push_back(int(s));
    }
    double s_pos = pair_score(q, passages[cands[0]]);
    std::vector<double> s_negs;
    for (size_t c = 1; c < cands.size(); ++c)
      s_negs.push_back(pair_score(q, passages[cands[c]]));
    double dpos = 0.0;
    std::vector<double> dnegs;
    total += contrastive_loss(s_pos, s_negs, opt.temperature, &dpos, &dnegs);
    pair_backward(q, passages[cands[0]], dpos * inv_b);
    for (size_t c = 1; c < cands.size(); ++c)
      pair_backward(q, passages[cands[c]], dnegs[c - 1] * inv_b);
  }
  total *= inv_b;
  checked(total, "contrastive loss");

  for (Text& q : queries)
    encoder_head_backward(params, q.enc, q.head, Mat(), q.dspr, q.dden, grads);
  for (Text& p : passages)
    encoder_head_backward(params, p.enc, p.head, Mat(), p.dspr, p.dden, grads);
  return total;
}

}  // namespace mote
