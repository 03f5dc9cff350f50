#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

namespace mote {

// Dense row-major matrix of doubles. All model math is double precision;
// checkpoints quantize to float32 on disk.
struct Mat {
  int rows = 0;
  int cols = 0;
  std::vector<double> v;

  Mat() = default;
  Mat(int r, int c) : rows(r), cols(c), v(size_t(r) * size_t(c), 0.0) {}

  double* row(int r) { return v.data() + size_t(r) * cols; }
  const double* row(int r) const { return v.data() + size_t(r) * cols; }
  double& at(int r, int c) { return v[size_t(r) * cols + c]; }
  double at(int r, int c) const { return v[size_t(r) * cols + c]; }
  void zero() { std::fill(v.begin(), v.end(), 0.0); }

  bool all_finite() const {
    for (double x : v)
      if (!std::isfinite(x)) return false;
    return true;
  }
};

// Mutable view over externally owned storage (the parameter arena).
struct TensorView {
  double* p = nullptr;
  int rows = 0;
  int cols = 0;

  double* row(int r) const { return p + size_t(r) * cols; }
  double& at(int r, int c) const { return p[size_t(r) * cols + c]; }
  size_t size() const { return size_t(rows) * size_t(cols); }
};

inline double dot(const double* a, const double* b, int n) {
  double s = 0.0;
  for (int i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

inline void axpy(double a, const double* x, double* y, int n) {
  for (int i = 0; i < n; ++i) y[i] += a * x[i];
}

// y = x * W + b, with x: n x d, W: d x m (row-major), b: m or null.
inline void linear_forward(const Mat& x, const TensorView& w,
                           const TensorView& b, Mat& y) {
  y = Mat(x.rows, w.cols);
  for (int i = 0; i < x.rows; ++i) {
    const double* xi = x.row(i);
    double* yi = y.row(i);
    if (b.p)
      for (int j = 0; j < w.cols; ++j) yi[j] = b.p[j];
    for (int k = 0; k < w.rows; ++k) {
      double xv = xi[k];
      if (xv == 0.0) continue;
      axpy(xv, w.row(k), yi, w.cols);
    }
  }
}

// Backward of linear_forward. Accumulates into dw/db, adds x-gradient into dx.
inline void linear_backward(const Mat& x, const TensorView& w, const Mat& dy,
                            TensorView dw, TensorView db, Mat& dx) {
  for (int i = 0; i < x.rows; ++i) {
    const double* dyi = dy.row(i);
    const double* xi = x.row(i);
    double* dxi = dx.row(i);
    for (int k = 0; k < w.rows; ++k) {
      // dW[k,:] += x[i,k] * dy[i,:];  dx[i,k] += dot(dy[i,:], W[k,:])
      axpy(xi[k], dyi, dw.row(k), w.cols);
      dxi[k] += dot(dyi, w.row(k), w.cols);
    }
    if (db.p) axpy(1.0, dyi, db.p, db.cols);
  }
}

}  // namespace mote
