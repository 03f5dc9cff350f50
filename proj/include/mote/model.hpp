#pragma once

#include <cmath>
#include <vector>

#include "mote/params.hpp"

namespace mote {

constexpr double kLnEps = 1e-5;

inline double gelu(double x) {
  return 0.5 * x * (1.0 + std::erf(x * 0.7071067811865476));
}
inline double gelu_grad(double x) {
  return 0.5 * (1.0 + std::erf(x * 0.7071067811865476)) +
         x * 0.3989422804014327 * std::exp(-0.5 * x * x);
}

struct LnCache {
  std::vector<double> mean, rstd;
  Mat x;  // pre-normalization input
};

inline void layer_norm_forward(const Mat& x, const TensorView& g,
                               const TensorView& b, Mat& y, LnCache& cache) {
  int n = x.rows, d = x.cols;
  y = Mat(n, d);
  cache.mean.assign(n, 0.0);
  cache.rstd.assign(n, 0.0);
  cache.x = x;
  for (int i = 0; i < n; ++i) {
    const double* xi = x.row(i);
    double mu = 0.0;
    for (int j = 0; j < d; ++j) mu += xi[j];
    mu /= d;
    double var = 0.0;
    for (int j = 0; j < d; ++j) var += (xi[j] - mu) * (xi[j] - mu);
    var /= d;
    double rstd = 1.0 / std::sqrt(var + kLnEps);
    cache.mean[i] = mu;
    cache.rstd[i] = rstd;
    double* yi = y.row(i);
    for (int j = 0; j < d; ++j)
      yi[j] = g.p[j] * ((xi[j] - mu) * rstd) + b.p[j];
  }
}

inline void layer_norm_backward(const Mat& dy, const LnCache& cache,
                                const TensorView& g, TensorView dg,
                                TensorView db, Mat& dx) {
  int n = dy.rows, d = dy.cols;
  for (int i = 0; i < n; ++i) {
    const double* dyi = dy.row(i);
    const double* xi = cache.x.row(i);
    double mu = cache.mean[i], rstd = cache.rstd[i];
    double dxh_mean = 0.0, dxh_xhat_mean = 0.0;
    for (int j = 0; j < d; ++j) {
      double xhat = (xi[j] - mu) * rstd;
      double dxh = dyi[j] * g.p[j];
      dxh_mean += dxh;
      dxh_xhat_mean += dxh * xhat;
      dg.p[j] += dyi[j] * xhat;
      db.p[j] += dyi[j];
    }
    dxh_mean /= d;
    dxh_xhat_mean /= d;
    double* dxi = dx.row(i);
    for (int j = 0; j < d; ++j) {
      double xhat = (xi[j] - mu) * rstd;
      double dxh = dyi[j] * g.p[j];
      dxi[j] += rstd * (dxh - dxh_mean - xhat * dxh_xhat_mean);
    }
  }
}

struct AttnCache {
  Mat x;                   // block input
  Mat q, k, v;             // projected, n x d
  std::vector<Mat> probs;  // per head, n x n softmax rows
  Mat ctx;                 // concatenated head outputs, n x d
};

inline void attention_forward(const Mat& x, const AttnHandles& h,
                              const ModelParams& params, bool causal, Mat& out,
                              AttnCache& cache) {
  int n = x.rows, d = x.cols;
  int heads = params.config.num_heads, dh = d / heads;
  double scale = 1.0 / std::sqrt(double(dh));
  cache.x = x;
  linear_forward(x, params.view(h.wq), params.view(h.bq), cache.q);
  linear_forward(x, params.view(h.wk), params.view(h.bk), cache.k);
  linear_forward(x, params.view(h.wv), params.view(h.bv), cache.v);
  cache.probs.assign(heads, Mat());
  cache.ctx = Mat(n, d);
  for (int t = 0; t < heads; ++t) {
    Mat& p = cache.probs[t];
    p = Mat(n, n);
    int off = t * dh;
    for (int i = 0; i < n; ++i) {
      int jmax = causal ? i : n - 1;
      double mx = -1e300;
      for (int j = 0; j <= jmax; ++j) {
        double s = scale * dot(cache.q.row(i) + off, cache.k.row(j) + off, dh);
        p.at(i, j) = s;
        if (s > mx) mx = s;
      }
      double z = 0.0;
      for (int j = 0; j <= jmax; ++j) {
        double e = std::exp(p.at(i, j) - mx);
        p.at(i, j) = e;
        z += e;
      }
      for (int j = 0; j <= jmax; ++j) p.at(i, j) /= z;
      double* ci = cache.ctx.row(i) + off;
      for (int j = 0; j <= jmax; ++j)
        axpy(p.at(i, j), cache.v.row(j) + off, ci, dh);
    }
  }
  linear_forward(cache.ctx, params.view(h.wo), params.view(h.bo), out);
}

inline void attention_backward(const Mat& dout, const AttnCache& cache,
                               const AttnHandles& h, const ModelParams& params,
                               Grads& grads, bool causal, Mat& dx) {
  int n = cache.x.rows, d = cache.x.cols;
  int heads = params.config.num_heads, dh = d / heads;
  double scale = 1.0 / std::sqrt(double(dh));
  Mat dctx(n, d);
  linear_backward(cache.ctx, params.view(h.wo), dout, grads.view(h.wo),
                  grads.view(h.bo), dctx);
  Mat dq(n, d), dk(n, d), dv(n, d);
  for (int t = 0; t < heads; ++t) {
    const Mat& p = cache.probs[t];
    int off = t * dh;
    for (int i = 0; i < n; ++i) {
      int jmax = causal ? i : n - 1;
      const double* dci = dctx.row(i) + off;
      // dP[i,j] = dot(dctx_i, v_j); dV_j += P[i,j] * dctx_i
      double dp_dot_p = 0.0;
      std::vector<double> dp(jmax + 1);
      for (int j = 0; j <= jmax; ++j) {
        dp[j] = dot(dci, cache.v.row(j) + off, dh);
        axpy(p.at(i, j), dci, dv.row(j) + off, dh);
        dp_dot_p += dp[j] * p.at(i, j);
      }
      for (int j = 0; j <= jmax; ++j) {
        double ds = p.at(i, j) * (dp[j] - dp_dot_p) * scale;
        if (ds == 0.0) continue;
        axpy(ds, cache.k.row(j) + off, dq.row(i) + off, dh);
        axpy(ds, cache.q.row(i) + off, dk.row(j) + off, dh);
      }
    }
  }
  linear_backward(cache.x, params.view(h.wq), dq, grads.view(h.wq),
                  grads.view(h.bq), dx);
  linear_backward(cache.x, params.view(h.wk), dk, grads.view(h.wk),
                  grads.view(h.bk), dx);
  linear_backward(cache.x, params.view(h.wv), dv, grads.view(h.wv),
                  grads.view(h.bv), dx);
}

struct BlockCache {
  AttnCache attn;
  Mat attn_out;   // projection output, before residual
  LnCache ln1;    // over attn_out + x
  Mat y1;         // LN1 output, FFN input
  Mat h1;         // FFN pre-activation
  Mat act;        // gelu(h1)
  Mat ffn_out;    // second linear output
  LnCache ln2;    // over ffn_out + y1
  Mat out;
};

inline void block_forward(const Mat& x, const BlockHandles& blk,
                          const FfnHandles& ffn, const ModelParams& params,
                          bool causal, BlockCache& c) {
  attention_forward(x, blk.attn, params, causal, c.attn_out, c.attn);
  Mat r1 = c.attn_out;
  for (size_t i = 0; i < r1.v.size(); ++i) r1.v[i] += x.v[i];
  layer_norm_forward(r1, params.view(blk.attn.ln_g), params.view(blk.attn.ln_b),
                     c.y1, c.ln1);
  linear_forward(c.y1, params.view(ffn.w1), params.view(ffn.b1), c.h1);
  c.act = Mat(c.h1.rows, c.h1.cols);
  for (size_t i = 0; i < c.h1.v.size(); ++i) c.act.v[i] = gelu(c.h1.v[i]);
  linear_forward(c.act, params.view(ffn.w2), params.view(ffn.b2), c.ffn_out);
  Mat r2 = c.ffn_out;
  for (size_t i = 0; i < r2.v.size(); ++i) r2.v[i] += c.y1.v[i];
  layer_norm_forward(r2, params.view(ffn.ln_g), params.view(ffn.ln_b), c.out,
                     c.ln2);
}

inline void block_backward(const Mat& dout, const BlockCache& c,
                           const BlockHandles& blk, const FfnHandles& ffn,
                           const ModelParams& params, Grads& grads, bool causal,
                           Mat& dx) {
  int n = dout.rows, d = dout.cols;
  Mat dr2(n, d);
  layer_norm_backward(dout, c.ln2, params.view(ffn.ln_g), grads.view(ffn.ln_g),
                      grads.view(ffn.ln_b), dr2);
  // r2 = ffn_out + y1
  Mat dy1 = dr2;
  Mat dact(c.act.rows, c.act.cols);
  linear_backward(c.act, params.view(ffn.w2), dr2, grads.view(ffn.w2),
                  grads.view(ffn.b2), dact);
  Mat dh1(c.h1.rows, c.h1.cols);
  for (size_t i = 0; i < dh1.v.size(); ++i)
    dh1.v[i] = dact.v[i] * gelu_grad(c.h1.v[i]);
  linear_backward(c.y1, params.view(ffn.w1), dh1, grads.view(ffn.w1),
                  grads.view(ffn.b1), dy1);
  Mat dr1(n, d);
  layer_norm_backward(dy1, c.ln1, params.view(blk.attn.ln_g),
                      grads.view(blk.attn.ln_g), grads.view(blk.attn.ln_b),
                      dr1);
  // r1 = attn_out + x
  for (size_t i = 0; i < dr1.v.size(); ++i) dx.v[i] += dr1.v[i];
  attention_backward(dr1, c.attn, blk.attn, params, grads, causal, dx);
}

struct EncodeCache {
  TextKind routed_kind = TextKind::Passage;
  std::vector<int> ids;
  Mat emb;        // token + position embeddings
  LnCache emb_ln;
  Mat x0;         // embedding LN output
  std::vector<BlockCache> blocks;
  const Mat& hidden() const { return blocks.back().out; }
};

// Forward pass of the encoder with text-kind routing. Returns the cache
// holding every intermediate needed for the exact backward pass.
inline EncodeCache encode_with_cache(const ModelParams& params,
                                     const TokenSequence& tokens) {
  tokens.validate(params.config);
  TextKind rk = params.routed(tokens.kind);
  const TowerHandles& tw = params.layout->tower[int(rk)];
  int n = tokens.length(), d = params.config.hidden_dim;
  EncodeCache c;
  c.routed_kind = rk;
  c.ids = tokens.ids;
  c.emb = Mat(n, d);
  TensorView te = params.view(tw.tok_emb);
  TensorView pe = params.view(tw.pos_emb);
  for (int i = 0; i < n; ++i) {
    const double* t = te.row(tokens.ids[i]);
    const double* p = pe.row(i);
    double* e = c.emb.row(i);
    for (int j = 0; j < d; ++j) e[j] = t[j] + p[j];
  }
  layer_norm_forward(c.emb, params.view(tw.ln_g), params.view(tw.ln_b), c.x0,
                     c.emb_ln);
  c.blocks.resize(params.config.num_layers);
  const Mat* x = &c.x0;
  for (int l = 0; l < params.config.num_layers; ++l) {
    const BlockHandles& blk = tw.blocks[l];
    block_forward(*x, blk, blk.ffn[int(rk)], params, /*causal=*/false,
                  c.blocks[l]);
    x = &c.blocks[l].out;
  }
  if (!x->all_finite()) throw NumericError("non-finite encoder output");
  return c;
}

inline Mat encode(const ModelParams& params, const TokenSequence& tokens) {
  return encode_with_cache(params, tokens).hidden();
}

// Accumulates parameter gradients for an encoded sequence given the gradient
// of its final hidden states.
inline void encode_backward(const Mat& dhidden, const EncodeCache& c,
                            const ModelParams& params, Grads& grads) {
  const TowerHandles& tw = params.layout->tower[int(c.routed_kind)];
  int n = c.emb.rows, d = c.emb.cols;
  Mat dx = dhidden;
  for (int l = params.config.num_layers - 1; l >= 0; --l) {
    const BlockHandles& blk = tw.blocks[l];
    Mat dprev(n, d);
    block_backward(dx, c.blocks[l], blk, blk.ffn[int(c.routed_kind)], params,
                   grads, /*causal=*/false, dprev);
    dx = dprev;
  }
  Mat demb(n, d);
  layer_norm_backward(dx, c.emb_ln, params.view(tw.ln_g), grads.view(tw.ln_g),
                      grads.view(tw.ln_b), demb);
  TensorView dte = grads.view(tw.tok_emb);
  TensorView dpe = grads.view(tw.pos_emb);
  for (int i = 0; i < n; ++i) {
    axpy(1.0, demb.row(i), dte.row(c.ids[i]), d);
    axpy(1.0, demb.row(i), dpe.row(i), d);
  }
}

struct DecodeCache {
  TextKind routed_span_kind = TextKind::Query;
  std::vector<int> input_ids;  // span ids fed as decoder input (rows 1..)
  Mat emb;
  BlockCache block;
  Mat logits;  // span length x vocab
};

// Single-layer causal decoder. The bottleneck vector occupies input position
// 0; row i of the returned logits predicts span token i, so every prediction
// conditions only on the bottleneck and the tokens before it.
inline DecodeCache decode_clm_with_cache(const ModelParams& params,
                                         const std::vector<double>& bottleneck,
                                         const TokenSequence& span) {
  const ModelConfig& cfg = params.config;
  int d = cfg.hidden_dim;
  if (int(bottleneck.size()) != d)
    throw InputError("bottleneck dimension mismatch");
  for (double x : bottleneck)
    if (!std::isfinite(x)) throw NumericError("non-finite bottleneck");
  int len = span.length();
  if (len < 1) throw InputError("empty span");
  if (len > cfg.max_seq_len - 1)
    throw InputError(strfmt("span length %d exceeds max_seq_len - 1 = %d", len,
                            cfg.max_seq_len - 1));
  for (int id : span.ids)
    if (id < 0 || id >= cfg.vocab_size)
      throw InputError("span token id out of range");

  DecodeCache c;
  c.routed_span_kind = params.routed(span.kind);
  const TowerHandles& tw = params.layout->tower[int(c.routed_span_kind)];
  TensorView te = params.view(tw.tok_emb);
  TensorView pe = params.view(tw.pos_emb);
  c.input_ids.assign(span.ids.begin(), span.ids.end() - 1);
  c.emb = Mat(len, d);
  for (int j = 0; j < d; ++j) c.emb.at(0, j) = bottleneck[j] + pe.at(0, j);
  for (int i = 1; i < len; ++i) {
    const double* t = te.row(c.input_ids[i - 1]);
    const double* p = pe.row(i);
    double* e = c.emb.row(i);
    for (int j = 0; j < d; ++j) e[j] = t[j] + p[j];
  }
  const BlockHandles& blk = params.layout->decoder;
  block_forward(c.emb, blk, blk.ffn[0], params, /*causal=*/true, c.block);
  // Tied output head: logits = hidden * E^T.
  const Mat& h = c.block.out;
  c.logits = Mat(len, cfg.vocab_size);
  for (int i = 0; i < len; ++i)
    for (int v = 0; v < cfg.vocab_size; ++v)
      c.logits.at(i, v) = dot(h.row(i), te.row(v), d);
  if (!c.logits.all_finite()) throw NumericError("non-finite decoder logits");
  return c;
}

inline Mat decode_clm(const ModelParams& params,
                      const std::vector<double>& bottleneck,
                      const TokenSequence& span) {
  return decode_clm_with_cache(params, bottleneck, span).logits;
}

// Backward through the decoder given dlogits. Adds the bottleneck gradient
// into dbottleneck; parameter gradients accumulate into grads.
inline void decode_backward(const Mat& dlogits, const DecodeCache& c,
                            const ModelParams& params, Grads& grads,
                            std::vector<double>& dbottleneck) {
  const ModelConfig& cfg = params.config;
  int d = cfg.hidden_dim;
  int len = c.emb.rows;
  const TowerHandles& tw = params.layout->tower[int(c.routed_span_kind)];
  TensorView te = params.view(tw.tok_emb);
  TensorView dte = grads.view(tw.tok_emb);
  const Mat& h = c.block.out;
  Mat dh(len, d);
  for (int i = 0; i < len; ++i) {
    const double* dli = dlogits.row(i);
    for (int v = 0; v < cfg.vocab_size; ++v) {
      double g = dli[v];
      if (g == 0.0) continue;
      axpy(g, te.row(v), dh.row(i), d);
      axpy(g, h.row(i), dte.row(v), d);
    }
  }
  Mat demb(len, d);
  const BlockHandles& blk = params.layout->decoder;
  block_backward(dh, c.block, blk, blk.ffn[0], params, grads, /*causal=*/true,
                 demb);
  TensorView dpe = grads.view(tw.pos_emb);
  for (int j = 0; j < d; ++j) dbottleneck[j] += demb.at(0, j);
  axpy(1.0, demb.row(0), dpe.row(0), d);
  for (int i = 1; i < len; ++i) {
    axpy(1.0, demb.row(i), dte.row(c.input_ids[i - 1]), d);
    axpy(1.0, demb.row(i), dpe.row(i), d);
  }
}

}  // namespace mote
