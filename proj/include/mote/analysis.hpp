#pragma once

#include <array>
#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "mote/corpus.hpp"
#include "mote/mat.hpp"

namespace mote {

// d[i][j] = 1 - cosine(q_i, p_j), entries in [0, 2].
struct DistanceMatrix {
  Mat d;
};

inline DistanceMatrix distance_matrix(const std::vector<DenseVec>& queries,
                                      const std::vector<DenseVec>& passages,
                                      const std::vector<std::string>& query_ids = {},
                                      const std::vector<std::string>& passage_ids = {}) {
  if (queries.size() != passages.size())
    throw InputError("distance_matrix: query and passage counts differ");
  if (queries.empty()) throw InputError("distance_matrix: empty input");
  auto name = [](const std::vector<std::string>& ids, size_t i,
                 const char* kind) {
    return ids.size() > i ? ids[i] : strfmt("%s %zu", kind, i);
  };
  int n = int(queries.size());
  int dim = int(queries[0].size());
  std::vector<double> qnorm(n), pnorm(n);
  for (int i = 0; i < n; ++i) {
    if (int(queries[i].size()) != dim || int(passages[i].size()) != dim)
      throw InputError("distance_matrix: inconsistent dimensions");
    qnorm[i] = std::sqrt(dot(queries[i].data(), queries[i].data(), dim));
    pnorm[i] = std::sqrt(dot(passages[i].data(), passages[i].data(), dim));
    if (qnorm[i] == 0.0)
      throw InputError("distance_matrix: zero-norm vector: " +
                       name(query_ids, i, "query"));
    if (pnorm[i] == 0.0)
      throw InputError("distance_matrix: zero-norm vector: " +
                       name(passage_ids, i, "passage"));
  }
  DistanceMatrix out;
  out.d = Mat(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      out.d.at(i, j) = 1.0 - dot(queries[i].data(), passages[j].data(), dim) /
                                 (qnorm[i] * pnorm[j]);
  return out;
}

struct DivergenceReport {
  double kl = 0.0;
  double js = 0.0;
  int n = 0;  // pair count
};

// Global softmax of -d (query -> passage) against the softmax of -d^T
// (passage -> query). Both distributions share one normalizer computed in a
// fixed order, so a symmetric matrix yields exactly zero divergences. Natural
// logarithm throughout.
inline DivergenceReport divergences(const DistanceMatrix& dm) {
  const Mat& d = dm.d;
  if (d.rows != d.cols || d.rows == 0)
    throw InputError("divergences: square non-empty matrix required");
  int n = d.rows;
  double mn = d.v[0];
  for (double x : d.v) {
    if (!std::isfinite(x)) throw InputError("divergences: non-finite distance");
    mn = std::min(mn, x);
  }
  double z = 0.0;
  for (double x : d.v) z += std::exp(mn - x);  // shared normalizer
  Mat p1(n, n), p2(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      p1.at(i, j) = std::exp(mn - d.at(i, j)) / z;
      p2.at(i, j) = std::exp(mn - d.at(j, i)) / z;
    }
  }
  DivergenceReport rep;
  rep.n = n;
  double kl = 0.0, js = 0.0;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      double a = p1.at(i, j), b = p2.at(i, j);
      kl += a * std::log(a / b);
      double avg = 0.5 * (a + b);
      js += 0.5 * (a * std::log(a / avg) + b * std::log(b / avg));
    }
  }
  rep.kl = kl;
  rep.js = js;
  return rep;
}

// ---------------------------------------------------------------------------
// Deterministic 2-D projection: exact PCA onto the top-2 variance directions.
// ---------------------------------------------------------------------------

struct Projection {
  std::vector<std::array<double, 2>> coords;
  bool degenerate = false;  // rank-deficient input, all coordinates zero
};

// Cyclic Jacobi eigendecomposition of a symmetric matrix. Returns
// eigenvalues; V's columns hold the corresponding eigenvectors.
inline std::vector<double> jacobi_eigen(Mat a, Mat& v_out) {
  int n = a.rows;
  Mat v(n, n);
  for (int i = 0; i < n; ++i) v.at(i, i) = 1.0;
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j) off += a.at(i, j) * a.at(i, j);
    if (off < 1e-30) break;
    for (int p = 0; p < n - 1; ++p) {
      for (int q = p + 1; q < n; ++q) {
        double apq = a.at(p, q);
        if (std::abs(apq) < 1e-300) continue;
        double theta = (a.at(q, q) - a.at(p, p)) / (2.0 * apq);
        double t = (theta >= 0 ? 1.0 : -1.0) /
                   (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        double c = 1.0 / std::sqrt(t * t + 1.0);
        double s = t * c;
        for (int k = 0; k < n; ++k) {
          double akp = a.at(k, p), akq = a.at(k, q);
          a.at(k, p) = c * akp - s * akq;
          a.at(k, q) = s * akp + c * akq;
        }
        for (int k = 0; k < n; ++k) {
          double apk = a.at(p, k), aqk = a.at(q, k);
          a.at(p, k) = c * apk - s * aqk;
          a.at(q, k) = s * apk + c * aqk;
        }
        for (int k = 0; k < n; ++k) {
          double vkp = v.at(k, p), vkq = v.at(k, q);
          v.at(k, p) = c * vkp - s * vkq;
          v.at(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }
  std::vector<double> eig(n);
  for (int i = 0; i < n; ++i) eig[i] = a.at(i, i);
  v_out = std::move(v);
  return eig;
}

inline Projection project_2d(const std::vector<DenseVec>& embeddings) {
  if (embeddings.size() < 2)
    throw InputError("project_2d: at least two embeddings required");
  int n = int(embeddings.size());
  int dim = int(embeddings[0].size());
  for (const DenseVec& e : embeddings)
    if (int(e.size()) != dim)
      throw InputError("project_2d: inconsistent dimensions");
  std::vector<double> mean(dim, 0.0);
  for (const DenseVec& e : embeddings) axpy(1.0, e.data(), mean.data(), dim);
  for (double& m : mean) m /= n;
  Mat centered(n, dim);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < dim; ++j)
      centered.at(i, j) = embeddings[i][j] - mean[j];
  Mat cov(dim, dim);
  for (int i = 0; i < n; ++i)
    for (int a = 0; a < dim; ++a) {
      double xa = centered.at(i, a);
      if (xa == 0.0) continue;
      for (int b = 0; b < dim; ++b) cov.at(a, b) += xa * centered.at(i, b);
    }
  for (double& x : cov.v) x /= double(n);

  Mat vecs;
  std::vector<double> eig = jacobi_eigen(cov, vecs);
  int best = 0, second = -1;
  for (int i = 1; i < dim; ++i)
    if (eig[i] > eig[best]) best = i;
  for (int i = 0; i < dim; ++i) {
    if (i == best) continue;
    if (second < 0 || eig[i] > eig[second]) second = i;
  }
  Projection out;
  double scale = 0.0;
  for (double x : cov.v) scale = std::max(scale, std::abs(x));
  if (scale < 1e-24 || dim < 2) {
    out.degenerate = true;
    out.coords.assign(n, {0.0, 0.0});
    return out;
  }
  auto axis = [&](int col) {
    std::vector<double> v(dim);
    for (int j = 0; j < dim; ++j) v[j] = vecs.at(j, col);
    for (int j = 0; j < dim; ++j) {
      if (std::abs(v[j]) > 1e-12) {
        if (v[j] < 0)
          for (double& x : v) x = -x;
        break;
      }
    }
    return v;
  };
  std::vector<double> v1 = axis(best), v2 = axis(second);
  out.coords.resize(n);
  for (int i = 0; i < n; ++i) {
    out.coords[i][0] = dot(centered.row(i), v1.data(), dim);
    out.coords[i][1] = dot(centered.row(i), v2.data(), dim);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Dump-level comparison: divergences per architecture, averaged over
// fixed-size batches of query-passage pairs.
// ---------------------------------------------------------------------------

struct PairedDump {
  std::vector<std::string> query_ids;
  std::vector<DenseVec> queries;
  std::vector<std::string> passage_ids;
  std::vector<DenseVec> passages;
};

// Pairs the i-th query record with the i-th passage record, in file order.
inline PairedDump pair_dump(const std::vector<DumpRecord>& recs) {
  PairedDump out;
  for (const DumpRecord& r : recs) {
    if (r.kind == TextKind::Query) {
      out.query_ids.push_back(r.id);
      out.queries.push_back(r.dense);
    } else {
      out.passage_ids.push_back(r.id);
      out.passages.push_back(r.dense);
    }
  }
  if (out.queries.size() != out.passages.size())
    throw InputError(strfmt("dump is not paired: %zu queries vs %zu passages",
                            out.queries.size(), out.passages.size()));
  if (out.queries.empty()) throw InputError("dump holds no query-passage pairs");
  return out;
}

struct ArchDivergences {
  std::string name;
  int pairs = 0;
  int batches = 0;
  double avg_kl = 0.0;
  double avg_js = 0.0;
  std::vector<DivergenceReport> per_batch;
};

inline ArchDivergences dump_divergences(const std::string& name,
                                        const std::vector<DumpRecord>& recs,
                                        int batch_size = 400) {
  if (batch_size < 1) throw ConfigError("batch size must be positive");
  PairedDump pd = pair_dump(recs);
  ArchDivergences out;
  out.name = name;
  out.pairs = int(pd.queries.size());
  for (size_t start = 0; start < pd.queries.size(); start += batch_size) {
    size_t end = std::min(pd.queries.size(), start + batch_size);
    std::vector<DenseVec> qs(pd.queries.begin() + start, pd.queries.begin() + end);
    std::vector<DenseVec> ps(pd.passages.begin() + start, pd.passages.begin() + end);
    std::vector<std::string> qids(pd.query_ids.begin() + start, pd.query_ids.begin() + end);
    std::vector<std::string> pids(pd.passage_ids.begin() + start, pd.passage_ids.begin() + end);
    DivergenceReport rep = divergences(distance_matrix(qs, ps, qids, pids));
    out.per_batch.push_back(rep);
    out.avg_kl += rep.kl;
    out.avg_js += rep.js;
  }
  out.batches = int(out.per_batch.size());
  out.avg_kl /= out.batches;
  out.avg_js /= out.batches;
  return out;
}

inline std::vector<ArchDivergences> compare_architectures(
    const std::vector<std::pair<std::string, std::vector<DumpRecord>>>& dumps,
    int batch_size = 400) {
  std::vector<ArchDivergences> out;
  for (const auto& d : dumps)
    out.push_back(dump_divergences(d.first, d.second, batch_size));
  return out;
}

inline std::string format_divergence_table(const std::vector<ArchDivergences>& rows) {
  std::ostringstream os;
  os << "name\tpairs\tbatches\tavg_kl\tavg_js\n";
  for (const ArchDivergences& r : rows)
    os << r.name << '\t' << r.pairs << '\t' << r.batches << '\t'
       << dtos(r.avg_kl) << '\t' << dtos(r.avg_js) << '\n';
  return os.str();
}

}  // namespace mote
