#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "mote/corpus.hpp"

namespace mote {

struct MetricCutoffs {
  int mrr = 10;
  std::vector<int> recall = {1, 50, 1000};
  int ndcg = 10;
};

struct MetricsReport {
  double mrr = 0.0;
  std::map<int, double> recall;
  double ndcg = 0.0;
  int queries_evaluated = 0;
  int queries_skipped = 0;  // queries with no relevant documents
};

inline void validate_run(const RunFile& run) {
  for (const auto& q : run) {
    std::set<std::string> seen;
    double prev = 1e300;
    for (const RunEntry& e : q.second) {
      if (!seen.insert(e.doc_id).second)
        throw InputError("run file: duplicate document " + e.doc_id +
                         " for query " + q.first);
      if (e.score > prev)
        throw InputError("run file: scores not non-increasing for query " + q.first);
      prev = e.score;
    }
  }
}

// MRR@cut, Recall@k and nDCG@cut with gains 2^rel - 1 and log2(rank+1)
// discounts. Queries without any relevant document are excluded from the
// means and counted in queries_skipped.
inline MetricsReport evaluate(const RunFile& run, const Qrels& qrels,
                              const MetricCutoffs& cutoffs = {}) {
  validate_run(run);
  MetricsReport rep;
  for (int k : cutoffs.recall) rep.recall[k] = 0.0;
  double mrr_sum = 0.0, ndcg_sum = 0.0;
  std::map<int, double> recall_sum;
  for (int k : cutoffs.recall) recall_sum[k] = 0.0;

  for (const auto& q : run) {
    auto qit = qrels.find(q.first);
    std::map<std::string, int> rel;
    if (qit != qrels.end())
      for (const auto& d : qit->second)
        if (d.second > 0) rel[d.first] = d.second;
    if (rel.empty()) {
      ++rep.queries_skipped;
      continue;
    }
    ++rep.queries_evaluated;
    const std::vector<RunEntry>& hits = q.second;

    for (int i = 0; i < int(hits.size()) && i < cutoffs.mrr; ++i) {
      if (rel.count(hits[i].doc_id)) {
        mrr_sum += 1.0 / double(i + 1);
        break;
      }
    }
    for (int k : cutoffs.recall) {
      int found = 0;
      for (int i = 0; i < int(hits.size()) && i < k; ++i)
        if (rel.count(hits[i].doc_id)) ++found;
      recall_sum[k] += double(found) / double(rel.size());
    }
    double dcg = 0.0;
    for (int i = 0; i < int(hits.size()) && i < cutoffs.ndcg; ++i) {
      auto rit = rel.find(hits[i].doc_id);
      if (rit != rel.end())
        dcg += (std::pow(2.0, rit->second) - 1.0) / std::log2(double(i + 2));
    }
    std::vector<int> grades;
    for (const auto& d : rel) grades.push_back(d.second);
    std::sort(grades.rbegin(), grades.rend());
    double idcg = 0.0;
    for (int i = 0; i < int(grades.size()) && i < cutoffs.ndcg; ++i)
      idcg += (std::pow(2.0, grades[i]) - 1.0) / std::log2(double(i + 2));
    ndcg_sum += dcg / idcg;
  }

  if (rep.queries_evaluated > 0) {
    rep.mrr = mrr_sum / rep.queries_evaluated;
    rep.ndcg = ndcg_sum / rep.queries_evaluated;
    for (int k : cutoffs.recall)
      rep.recall[k] = recall_sum[k] / rep.queries_evaluated;
  }
  return rep;
}

inline std::string format_metrics(const MetricsReport& rep,
                                  const MetricCutoffs& cutoffs = {}) {
  std::ostringstream os;
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", rep.mrr);
  os << "MRR@" << cutoffs.mrr << ' ' << buf << '\n';
  for (const auto& kv : rep.recall) {
    std::snprintf(buf, sizeof(buf), "%.6f", kv.second);
    os << "Recall@" << kv.first << ' ' << buf << '\n';
  }
  std::snprintf(buf, sizeof(buf), "%.6f", rep.ndcg);
  os << "nDCG@" << cutoffs.ndcg << ' ' << buf << '\n';
  os << "queries_evaluated " << rep.queries_evaluated << '\n';
  os << "queries_skipped " << rep.queries_skipped << '\n';
  return os.str();
}

}  // namespace mote
