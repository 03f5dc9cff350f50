#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "mote/model.hpp"

namespace mote {

using DenseVec = std::vector<double>;

// Vocab-space sparse representation. Entries are kept sorted by token id and
// exact zeros are omitted, so equality is well-defined.
struct SparseVec {
  std::vector<std::pair<int, double>> entries;

  double get(int token) const {
    auto it = std::lower_bound(
        entries.begin(), entries.end(), token,
        [](const std::pair<int, double>& e, int t) { return e.first < t; });
    return (it != entries.end() && it->first == token) ? it->second : 0.0;
  }
  size_t size() const { return entries.size(); }
  double l1_norm() const {
    double s = 0.0;
    for (const auto& e : entries) s += e.second;
    return s;
  }
  bool operator==(const SparseVec& o) const { return entries == o.entries; }
};

// DEN = final-layer hidden state at the CLS position.
inline DenseVec pool_dense(const Mat& h) {
  if (h.rows < 1) throw InputError("empty hidden states");
  return DenseVec(h.row(0), h.row(0) + h.cols);
}

// Bookkeeping for the backward pass through the sparse pooling: which
// sequence position attained the max for each surviving token, and the raw
// projection value there.
struct SparsePoolCache {
  struct Entry {
    int token;
    int row;     // argmax sequence position
    double z;    // h_row . E_token (positive)
  };
  std::vector<Entry> entries;
};

// SPR[v] = max over non-CLS positions i of log(1 + relu(h_i . E_v)).
// log1p(relu(.)) is monotone, so the max over projections is taken first.
inline SparseVec pool_sparse_impl(const Mat& h, const double* emb, int vocab,
                                  int dim, SparsePoolCache* cache) {
  if (h.cols != dim) throw InputError("pool_sparse: dimension mismatch");
  SparseVec out;
  if (h.rows < 2) return out;  // no non-CLS positions
  std::vector<double> best(vocab, -1e300);
  std::vector<int> best_row(vocab, -1);
  for (int i = 1; i < h.rows; ++i) {
    const double* hi = h.row(i);
    for (int v = 0; v < vocab; ++v) {
      double z = dot(hi, emb + size_t(v) * dim, dim);
      if (z > best[v]) {
        best[v] = z;
        best_row[v] = i;
      }
    }
  }
  for (int v = 0; v < vocab; ++v) {
    if (best[v] > 0.0) {
      out.entries.push_back({v, std::log1p(best[v])});
      if (cache) cache->entries.push_back({v, best_row[v], best[v]});
    }
  }
  return out;
}

inline SparseVec pool_sparse(const Mat& h, const Mat& emb) {
  return pool_sparse_impl(h, emb.v.data(), emb.rows, emb.cols, nullptr);
}
inline SparseVec pool_sparse(const Mat& h, const TensorView& emb) {
  return pool_sparse_impl(h, emb.p, emb.rows, emb.cols, nullptr);
}

// Keeps the k largest weights; ties broken toward the smaller token id.
inline SparseVec topk_sparsify(const SparseVec& v, int k) {
  if (k < 1) throw InputError("topk_sparsify: k must be positive");
  if (int(v.entries.size()) <= k) return v;
  std::vector<std::pair<int, double>> es = v.entries;
  std::sort(es.begin(), es.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  es.resize(k);
  std::sort(es.begin(), es.end());
  SparseVec out;
  out.entries = std::move(es);
  return out;
}

inline double score_dense(const DenseVec& q, const DenseVec& p) {
  if (q.size() != p.size()) throw InputError("score_dense: dimension mismatch");
  return dot(q.data(), p.data(), int(q.size()));
}

inline double score_sparse(const SparseVec& q, const SparseVec& p) {
  double s = 0.0;
  size_t i = 0, j = 0;
  while (i < q.entries.size() && j < p.entries.size()) {
    int a = q.entries[i].first, b = p.entries[j].first;
    if (a == b) {
      s += q.entries[i].second * p.entries[j].second;
      ++i;
      ++j;
    } else if (a < b) {
      ++i;
    } else {
      ++j;
    }
  }
  return s;
}

struct TextRepr {
  DenseVec dense;
  SparseVec sparse;
};

inline double score_hybrid(const TextRepr& q, const TextRepr& p) {
  return score_dense(q.dense, p.dense) + score_sparse(q.sparse, p.sparse);
}

// Encodes a text and pools both representations. The sparse projection uses
// the same embedding table that is tied to the output head.
inline TextRepr represent_text(const ModelParams& params,
                               const TokenSequence& tokens) {
  EncodeCache c = encode_with_cache(params, tokens);
  const TowerHandles& tw = params.layout->tower[int(c.routed_kind)];
  TextRepr r;
  r.dense = pool_dense(c.hidden());
  r.sparse = pool_sparse(c.hidden(), params.view(tw.tok_emb));
  return r;
}

}  // namespace mote
