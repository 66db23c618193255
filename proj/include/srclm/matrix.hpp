#pragma once

#include <cassert>
#include <cmath>
#include <cstddef>
#include <vector>

namespace srclm {

// Dense row-major matrix of doubles. Double precision keeps the analytic
// gradients comparable against central finite differences at 1e-4 tolerance.
struct Matrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> a;

  Matrix() = default;
  Matrix(int r, int c) : rows(r), cols(c), a(static_cast<std::size_t>(r) * c) {}

  double* row(int r) { return a.data() + static_cast<std::size_t>(r) * cols; }
  const double* row(int r) const {
    return a.data() + static_cast<std::size_t>(r) * cols;
  }
  double& at(int r, int c) { return a[static_cast<std::size_t>(r) * cols + c]; }
  double at(int r, int c) const {
    return a[static_cast<std::size_t>(r) * cols + c];
  }

  std::size_t size() const { return a.size(); }
  void zero() { std::fill(a.begin(), a.end(), 0.0); }

  bool finite() const {
    for (double v : a) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }
};

// C += A * B
inline void mm_acc(const Matrix& A, const Matrix& B, Matrix& C) {
  assert(A.cols == B.rows && A.rows == C.rows && B.cols == C.cols);
  const int n = A.rows, k = A.cols, m = B.cols;
  for (int i = 0; i < n; ++i) {
    const double* arow = A.row(i);
    double* crow = C.row(i);
    for (int p = 0; p < k; ++p) {
      const double aip = arow[p];
      if (aip == 0.0) continue;
      const double* brow = B.row(p);
      for (int j = 0; j < m; ++j) crow[j] += aip * brow[j];
    }
  }
}

// C += A * B^T
inline void mm_nt_acc(const Matrix& A, const Matrix& B, Matrix& C) {
  assert(A.cols == B.cols && A.rows == C.rows && B.rows == C.cols);
  const int n = A.rows, k = A.cols, m = B.rows;
  for (int i = 0; i < n; ++i) {
    const double* arow = A.row(i);
    double* crow = C.row(i);
    for (int j = 0; j < m; ++j) {
      const double* brow = B.row(j);
      double s = 0.0;
      for (int p = 0; p < k; ++p) s += arow[p] * brow[p];
      crow[j] += s;
    }
  }
}

// C += A^T * B
inline void mm_tn_acc(const Matrix& A, const Matrix& B, Matrix& C) {
  assert(A.rows == B.rows && A.cols == C.rows && B.cols == C.cols);
  const int n = A.rows, k = A.cols, m = B.cols;
  for (int p = 0; p < n; ++p) {
    const double* arow = A.row(p);
    const double* brow = B.row(p);
    for (int i = 0; i < k; ++i) {
      const double aip = arow[i];
      if (aip == 0.0) continue;
      double* crow = C.row(i);
      for (int j = 0; j < m; ++j) crow[j] += aip * brow[j];
    }
  }
}

inline Matrix mm(const Matrix& A, const Matrix& B) {
  Matrix C(A.rows, B.cols);
  mm_acc(A, B, C);
  return C;
}

}  // namespace srclm
