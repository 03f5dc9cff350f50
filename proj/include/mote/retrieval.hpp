#pragma once

#include <algorithm>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "mote/corpus.hpp"
#include "mote/represent.hpp"

namespace mote {

struct SearchHit {
  std::string doc_id;
  double score = 0.0;
};

// Ranks every document: score descending, ties toward the smaller id.
// Scores of zero keep their documents in the ranking so that index searches
// agree with a brute-force full scan even on degenerate queries.
inline std::vector<SearchHit> rank_all(const std::vector<std::string>& ids,
                                       const std::vector<double>& scores,
                                       int k) {
  std::vector<int> order(ids.size());
  for (size_t i = 0; i < ids.size(); ++i) order[i] = int(i);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return ids[a] < ids[b];
  });
  if (k < int(order.size())) order.resize(k);
  std::vector<SearchHit> hits;
  hits.reserve(order.size());
  for (int i : order) hits.push_back({ids[i], scores[i]});
  return hits;
}

// ---------------------------------------------------------------------------
// Dense index: flat matrix, exact top-k by dot product.
// ---------------------------------------------------------------------------

struct DenseIndex {
  int dim = 0;
  std::vector<std::string> ids;
  std::vector<DenseVec> vecs;
};

inline DenseIndex build_dense_index(const std::vector<std::string>& ids,
                                    const std::vector<DenseVec>& vecs) {
  if (ids.size() != vecs.size())
    throw InputError("dense index: id/vector count mismatch");
  DenseIndex idx;
  idx.ids = ids;
  idx.vecs = vecs;
  idx.dim = vecs.empty() ? 0 : int(vecs[0].size());
  for (const DenseVec& v : vecs)
    if (int(v.size()) != idx.dim)
      throw InputError("dense index: inconsistent dimensions");
  return idx;
}

inline std::vector<SearchHit> search_dense(const DenseIndex& idx,
                                           const DenseVec& q, int k) {
  if (k < 1) throw InputError("search: k must be positive");
  if (idx.ids.empty()) return {};
  if (int(q.size()) != idx.dim) throw InputError("search_dense: dimension mismatch");
  std::vector<double> scores(idx.ids.size());
  for (size_t i = 0; i < idx.vecs.size(); ++i)
    scores[i] = dot(q.data(), idx.vecs[i].data(), idx.dim);
  return rank_all(idx.ids, scores, k);
}

// ---------------------------------------------------------------------------
// Sparse index: inverted lists token -> (doc, weight), weights descending.
// ---------------------------------------------------------------------------

struct SparseIndex {
  std::vector<std::string> ids;
  // token -> postings (doc index, weight), sorted by weight desc, doc asc
  std::map<int, std::vector<std::pair<int, double>>> postings;
};

inline SparseIndex build_sparse_index(const std::vector<std::string>& ids,
                                      const std::vector<SparseVec>& vecs) {
  if (ids.size() != vecs.size())
    throw InputError("sparse index: id/vector count mismatch");
  SparseIndex idx;
  idx.ids = ids;
  for (size_t i = 0; i < vecs.size(); ++i)
    for (const auto& e : vecs[i].entries)
      if (e.second > 0.0) idx.postings[e.first].push_back({int(i), e.second});
  for (auto& kv : idx.postings)
    std::sort(kv.second.begin(), kv.second.end(),
              [](const auto& a, const auto& b) {
                if (a.second != b.second) return a.second > b.second;
                return a.first < b.first;
              });
  return idx;
}

// Accumulates per-document partial sums in ascending query-token order, the
// same order score_sparse uses, so index scores are bit-identical to a
// brute-force scan.
inline std::vector<double> sparse_scores(const SparseIndex& idx,
                                         const SparseVec& q) {
  std::vector<double> scores(idx.ids.size(), 0.0);
  for (const auto& e : q.entries) {
    auto it = idx.postings.find(e.first);
    if (it == idx.postings.end()) continue;
    for (const auto& post : it->second)
      scores[post.first] += e.second * post.second;
  }
  return scores;
}

inline std::vector<SearchHit> search_sparse(const SparseIndex& idx,
                                            const SparseVec& q, int k) {
  if (k < 1) throw InputError("search: k must be positive");
  if (idx.ids.empty()) return {};
  return rank_all(idx.ids, sparse_scores(idx, q), k);
}

// ---------------------------------------------------------------------------
// Hybrid: exact top-k by dense + sparse score over the shared corpus.
// ---------------------------------------------------------------------------

inline std::vector<SearchHit> search_hybrid(const DenseIndex& dense,
                                            const SparseIndex& sparse,
                                            const DenseVec& q_den,
                                            const SparseVec& q_spr, int k) {
  if (k < 1) throw InputError("search: k must be positive");
  if (dense.ids != sparse.ids)
    throw ConfigError("hybrid search: dense and sparse indexes cover different corpora");
  if (dense.ids.empty()) return {};
  std::vector<double> scores = sparse_scores(sparse, q_spr);
  for (size_t i = 0; i < dense.ids.size(); ++i)
    scores[i] = dot(q_den.data(), dense.vecs[i].data(), dense.dim) + scores[i];
  return rank_all(dense.ids, scores, k);
}

// ---------------------------------------------------------------------------
// Index files (plain text, deterministic).
// ---------------------------------------------------------------------------

inline std::string format_dense_index(const DenseIndex& idx) {
  std::ostringstream os;
  os << "dense " << idx.ids.size() << ' ' << idx.dim << '\n';
  for (size_t i = 0; i < idx.ids.size(); ++i) {
    os << idx.ids[i];
    for (double v : idx.vecs[i]) os << ' ' << dtos(v);
    os << '\n';
  }
  return os.str();
}

inline DenseIndex parse_dense_index(const std::string& content) {
  std::vector<std::string> lines = split_lines(content);
  if (lines.empty()) throw ParseError("dense index: empty file");
  std::istringstream hdr(lines[0]);
  std::string tag;
  size_t count;
  int dim;
  if (!(hdr >> tag >> count >> dim) || tag != "dense")
    throw ParseError("dense index line 1: bad header");
  std::vector<std::string> ids;
  std::vector<DenseVec> vecs;
  for (size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    std::istringstream is(lines[i]);
    std::string id;
    is >> id;
    DenseVec v;
    double x;
    while (is >> x) v.push_back(x);
    if (int(v.size()) != dim)
      throw ParseError(strfmt("dense index line %zu: expected %d values", i + 1, dim));
    ids.push_back(id);
    vecs.push_back(std::move(v));
  }
  if (ids.size() != count) throw ParseError("dense index: record count mismatch");
  return build_dense_index(ids, vecs);
}

inline std::string format_sparse_index(const SparseIndex& idx) {
  std::ostringstream os;
  os << "sparse " << idx.ids.size() << ' ' << idx.postings.size() << '\n';
  for (const std::string& id : idx.ids) os << id << '\n';
  for (const auto& kv : idx.postings) {
    os << kv.first;
    for (const auto& p : kv.second)
      os << ' ' << p.first << ':' << dtos(p.second);
    os << '\n';
  }
  return os.str();
}

inline SparseIndex parse_sparse_index(const std::string& content) {
  std::vector<std::string> lines = split_lines(content);
  if (lines.empty()) throw ParseError("sparse index: empty file");
  std::istringstream hdr(lines[0]);
  std::string tag;
  size_t ndocs, ntokens;
  if (!(hdr >> tag >> ndocs >> ntokens) || tag != "sparse")
    throw ParseError("sparse index line 1: bad header");
  if (lines.size() < 1 + ndocs) throw ParseError("sparse index: truncated");
  SparseIndex idx;
  for (size_t i = 0; i < ndocs; ++i) idx.ids.push_back(lines[1 + i]);
  for (size_t i = 1 + ndocs; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    std::istringstream is(lines[i]);
    int token;
    if (!(is >> token))
      throw ParseError(strfmt("sparse index line %zu: bad posting list", i + 1));
    std::string ent;
    auto& list = idx.postings[token];
    while (is >> ent) {
      size_t colon = ent.find(':');
      if (colon == std::string::npos)
        throw ParseError(strfmt("sparse index line %zu: bad entry %s", i + 1, ent.c_str()));
      list.push_back({std::stoi(ent.substr(0, colon)), std::stod(ent.substr(colon + 1))});
    }
  }
  if (idx.postings.size() != ntokens)
    throw ParseError("sparse index: token count mismatch");
  return idx;
}

}  // namespace mote
