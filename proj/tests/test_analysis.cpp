#include <cmath>

#include "doctest.h"
#include "mote/analysis.hpp"
#include "mote/rng.hpp"

using namespace mote;

TEST_CASE("distance matrix hand cases") {
  DistanceMatrix d1 = distance_matrix({{1, 0}}, {{1, 0}});
  CHECK(d1.d.at(0, 0) == doctest::Approx(0.0).epsilon(1e-15));
  DistanceMatrix d2 = distance_matrix({{1, 0}}, {{0, 1}});
  CHECK(d2.d.at(0, 0) == doctest::Approx(1.0));
  DistanceMatrix d3 = distance_matrix({{1, 0}}, {{-1, 0}});
  CHECK(d3.d.at(0, 0) == doctest::Approx(2.0));

  CHECK_THROWS_WITH_AS(distance_matrix({{0, 0}}, {{1, 0}}, {"qz"}, {"pz"}),
                       doctest::Contains("qz"), InputError);
  CHECK_THROWS_AS(distance_matrix({{1, 0}}, {{1, 0}, {0, 1}}), InputError);
}

TEST_CASE("distance entries live in [0, 2] with zero self-diagonal") {
  Rng rng(3);
  std::vector<DenseVec> vs;
  for (int i = 0; i < 12; ++i) {
    DenseVec v(5);
    for (double& x : v) x = rng.normal();
    vs.push_back(v);
  }
  DistanceMatrix d = distance_matrix(vs, vs);
  for (int i = 0; i < d.d.rows; ++i) {
    CHECK(d.d.at(i, i) == doctest::Approx(0.0).epsilon(1e-12));
    for (int j = 0; j < d.d.cols; ++j) {
      CHECK(d.d.at(i, j) >= -1e-12);
      CHECK(d.d.at(i, j) <= 2.0 + 1e-12);
    }
  }
}

TEST_CASE("divergences: symmetric matrices give exactly zero") {
  DistanceMatrix dm;
  dm.d = Mat(3, 3);
  Rng rng(5);
  for (int i = 0; i < 3; ++i)
    for (int j = i; j < 3; ++j) {
      double v = rng.uniform();
      dm.d.at(i, j) = v;
      dm.d.at(j, i) = v;
    }
  DivergenceReport rep = divergences(dm);
  CHECK(rep.kl == 0.0);
  CHECK(rep.js == 0.0);
}

TEST_CASE("divergences hand case d = [[0,1],[0,0]]") {
  DistanceMatrix dm;
  dm.d = Mat(2, 2);
  dm.d.at(0, 1) = 1.0;
  DivergenceReport rep = divergences(dm);
  // p1 ~ exp(-d)/Z with Z = 3 + e^-1; KL = (1 - e^-1)/Z.
  double z = 3.0 + std::exp(-1.0);
  double expected = (1.0 - std::exp(-1.0)) / z;
  CHECK(rep.kl == doctest::Approx(expected).epsilon(1e-12));
  CHECK(rep.kl == doctest::Approx(0.1877).epsilon(1e-3));
  CHECK(std::abs(rep.kl - 0.1877) < 1e-4);
}

TEST_CASE("JS bounds, symmetry and KL non-negativity on random matrices") {
  Rng rng(11);
  for (int trial = 0; trial < 300; ++trial) {
    int n = 2 + int(rng.below(6));
    DistanceMatrix dm;
    dm.d = Mat(n, n);
    for (double& x : dm.d.v) x = rng.uniform() * 2.0;
    DivergenceReport rep = divergences(dm);
    CHECK(rep.kl >= 0.0);
    CHECK(rep.js >= 0.0);
    CHECK(rep.js <= std::log(2.0) + 1e-12);
    DistanceMatrix dt;
    dt.d = Mat(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) dt.d.at(i, j) = dm.d.at(j, i);
    DivergenceReport rept = divergences(dt);
    CHECK(rept.js == doctest::Approx(rep.js).epsilon(1e-12));
  }
}

TEST_CASE("divergences are invariant under constant shifts of d") {
  Rng rng(13);
  DistanceMatrix dm;
  dm.d = Mat(5, 5);
  for (double& x : dm.d.v) x = rng.uniform();
  DivergenceReport base = divergences(dm);
  for (double c : {-3.0, 0.5, 10.0}) {
    DistanceMatrix shifted;
    shifted.d = dm.d;
    for (double& x : shifted.d.v) x += c;
    DivergenceReport rep = divergences(shifted);
    CHECK(std::abs(rep.kl - base.kl) < 1e-10);
    CHECK(std::abs(rep.js - base.js) < 1e-10);
  }
}

TEST_CASE("project_2d recovers a planar configuration") {
  // Points on a 2-D plane embedded in 6 dimensions.
  Rng rng(17);
  std::vector<double> a(6), b(6);
  for (int j = 0; j < 6; ++j) {
    a[j] = rng.normal();
    b[j] = rng.normal();
  }
  // Orthonormalize.
  double na = std::sqrt(dot(a.data(), a.data(), 6));
  for (double& x : a) x /= na;
  double proj = dot(a.data(), b.data(), 6);
  for (int j = 0; j < 6; ++j) b[j] -= proj * a[j];
  double nb = std::sqrt(dot(b.data(), b.data(), 6));
  for (double& x : b) x /= nb;

  std::vector<DenseVec> pts;
  std::vector<std::pair<double, double>> plane;
  for (int i = 0; i < 25; ++i) {
    double x = rng.normal() * 3, y = rng.normal();
    plane.push_back({x, y});
    DenseVec p(6);
    for (int j = 0; j < 6; ++j) p[j] = 5.0 + x * a[j] + y * b[j];
    pts.push_back(p);
  }
  Projection proj2 = project_2d(pts);
  REQUIRE_FALSE(proj2.degenerate);
  for (size_t i = 0; i < pts.size(); ++i) {
    for (size_t j = i + 1; j < pts.size(); ++j) {
      double dx = plane[i].first - plane[j].first;
      double dy = plane[i].second - plane[j].second;
      double orig = std::sqrt(dx * dx + dy * dy);
      double px = proj2.coords[i][0] - proj2.coords[j][0];
      double py = proj2.coords[i][1] - proj2.coords[j][1];
      double got = std::sqrt(px * px + py * py);
      CHECK(got == doctest::Approx(orig).epsilon(1e-9));
    }
  }
  // PCA ordering: first output axis carries at least as much variance.
  double v1 = 0, v2 = 0;
  for (const auto& c : proj2.coords) {
    v1 += c[0] * c[0];
    v2 += c[1] * c[1];
  }
  CHECK(v1 >= v2 - 1e-9);
}

TEST_CASE("project_2d flags rank-deficient input") {
  std::vector<DenseVec> same(5, DenseVec{1.0, 2.0, 3.0});
  Projection p = project_2d(same);
  CHECK(p.degenerate);
  for (const auto& c : p.coords) {
    CHECK(c[0] == 0.0);
    CHECK(c[1] == 0.0);
  }
  CHECK_THROWS_AS(project_2d({DenseVec{1.0}}), InputError);
}

TEST_CASE("dump divergences: self-comparison and single-batch equivalence") {
  Rng rng(23);
  std::vector<DumpRecord> recs;
  for (int i = 0; i < 10; ++i) {
    DumpRecord q;
    q.id = strfmt("q%d", i);
    q.kind = TextKind::Query;
    q.dense = {rng.normal(), rng.normal(), rng.normal()};
    DumpRecord p;
    p.id = strfmt("p%d", i);
    p.kind = TextKind::Passage;
    p.dense = {rng.normal(), rng.normal(), rng.normal()};
    recs.push_back(q);
    recs.push_back(p);
  }
  std::vector<ArchDivergences> rows =
      compare_architectures({{"one", recs}, {"two", recs}}, 400);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].avg_kl == rows[1].avg_kl);
  CHECK(rows[0].avg_js == rows[1].avg_js);
  CHECK(rows[0].pairs == 10);
  CHECK(rows[0].batches == 1);

  // One batch covering everything equals the single-shot divergence.
  ArchDivergences whole = dump_divergences("w", recs, 10);
  ArchDivergences single = dump_divergences("s", recs, 400);
  CHECK(whole.avg_kl == doctest::Approx(single.avg_kl).epsilon(1e-15));

  // Unpaired dumps are rejected.
  std::vector<DumpRecord> broken = recs;
  broken.pop_back();
  CHECK_THROWS_AS(dump_divergences("b", broken, 400), InputError);
}
