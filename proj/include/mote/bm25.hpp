#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "mote/retrieval.hpp"

namespace mote {

// Okapi BM25 over token-id term bags. idf uses the non-negative variant
// ln(1 + (N - df + 0.5) / (df + 0.5)).
struct Bm25Index {
  double k1 = 1.2;
  double b = 0.75;
  std::vector<std::string> ids;
  std::vector<int> doc_len;
  double avgdl = 0.0;
  std::map<int, int> df;
  // term -> postings (doc index, term frequency), doc ascending
  std::map<int, std::vector<std::pair<int, int>>> postings;

  double idf(int term) const {
    auto it = df.find(term);
    if (it == df.end()) return 0.0;
    double n = double(ids.size());
    double d = double(it->second);
    return std::log(1.0 + (n - d + 0.5) / (d + 0.5));
  }

  double tf_term(int tf, int len) const {
    double t = double(tf);
    return t * (k1 + 1.0) / (t + k1 * (1.0 - b + b * double(len) / avgdl));
  }
};

inline Bm25Index build_bm25_index(const std::vector<std::string>& ids,
                                  const std::vector<std::vector<int>>& term_bags,
                                  double k1 = 1.2, double b = 0.75) {
  if (ids.size() != term_bags.size())
    throw InputError("bm25 index: id/bag count mismatch");
  if (ids.empty()) throw InputError("bm25 index: empty corpus");
  Bm25Index idx;
  idx.k1 = k1;
  idx.b = b;
  idx.ids = ids;
  long total_len = 0;
  for (size_t i = 0; i < term_bags.size(); ++i) {
    idx.doc_len.push_back(int(term_bags[i].size()));
    total_len += long(term_bags[i].size());
    std::map<int, int> tf;
    for (int t : term_bags[i]) ++tf[t];
    for (const auto& kv : tf) {
      ++idx.df[kv.first];
      idx.postings[kv.first].push_back({int(i), kv.second});
    }
  }
  idx.avgdl = std::max(1e-9, double(total_len) / double(ids.size()));
  return idx;
}

inline std::vector<int> unique_sorted_terms(const std::vector<int>& terms) {
  std::vector<int> u = terms;
  std::sort(u.begin(), u.end());
  u.erase(std::unique(u.begin(), u.end()), u.end());
  return u;
}

inline double bm25_score_by_index(const Bm25Index& idx,
                                  const std::vector<int>& query_terms,
                                  int doc) {
  double s = 0.0;
  for (int t : unique_sorted_terms(query_terms)) {
    auto it = idx.postings.find(t);
    if (it == idx.postings.end()) continue;
    const auto& list = it->second;
    auto pit = std::lower_bound(list.begin(), list.end(), doc,
                                [](const std::pair<int, int>& p, int d) {
                                  return p.first < d;
                                });
    if (pit == list.end() || pit->first != doc) continue;
    s += idx.idf(t) * idx.tf_term(pit->second, idx.doc_len[doc]);
  }
  return s;
}

inline double bm25_score(const Bm25Index& idx,
                         const std::vector<int>& query_terms,
                         const std::string& doc_id) {
  for (size_t i = 0; i < idx.ids.size(); ++i)
    if (idx.ids[i] == doc_id) return bm25_score_by_index(idx, query_terms, int(i));
  throw InputError("bm25_score: unknown passage id " + doc_id);
}

// Term-at-a-time accumulation in ascending term order; matches the per-doc
// summation order of bm25_score_by_index exactly.
inline std::vector<SearchHit> bm25_search(const Bm25Index& idx,
                                          const std::vector<int>& query_terms,
                                          int k) {
  if (k < 1) throw InputError("search: k must be positive");
  std::vector<double> scores(idx.ids.size(), 0.0);
  for (int t : unique_sorted_terms(query_terms)) {
    auto it = idx.postings.find(t);
    if (it == idx.postings.end()) continue;
    double idf = idx.idf(t);
    for (const auto& p : it->second)
      scores[p.first] += idf * idx.tf_term(p.second, idx.doc_len[p.first]);
  }
  return rank_all(idx.ids, scores, k);
}

// Strips special ids so BM25 operates on content terms only.
inline std::vector<int> content_terms(const TokenSequence& seq) {
  std::vector<int> terms;
  for (int id : seq.ids)
    if (id >= ModelConfig::kNumSpecialTokens) terms.push_back(id);
  return terms;
}

}  // namespace mote
