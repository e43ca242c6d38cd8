#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "interlab/errors.hpp"

namespace interlab {

// Dense row-major matrix of doubles. Deliberately minimal: the network is
// tiny, and plain loops keep the arithmetic auditable and bit-reproducible.
struct Matrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> a;

  Matrix() = default;
  Matrix(int r, int c, double fill = 0.0)
      : rows(r), cols(c), a(static_cast<std::size_t>(r) * c, fill) {
    if (r < 0 || c < 0) fail(errc::shape, "negative matrix dimension");
  }

  double* row(int r) { return a.data() + static_cast<std::size_t>(r) * cols; }
  const double* row(int r) const {
    return a.data() + static_cast<std::size_t>(r) * cols;
  }
  double& at(int r, int c) { return a[static_cast<std::size_t>(r) * cols + c]; }
  double at(int r, int c) const {
    return a[static_cast<std::size_t>(r) * cols + c];
  }

  bool same_shape(const Matrix& o) const {
    return rows == o.rows && cols == o.cols;
  }
  bool all_finite() const {
    for (double v : a)
      if (!std::isfinite(v)) return false;
    return true;
  }
};

inline bool all_finite(const std::vector<double>& v) {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

// y = M x (M: rows x cols, x: cols) appended into out (resized to rows).
inline void matvec(const Matrix& m, const double* x, double* out) {
  for (int r = 0; r < m.rows; ++r) {
    const double* w = m.row(r);
    double acc = 0.0;
    for (int c = 0; c < m.cols; ++c) acc += w[c] * x[c];
    out[r] = acc;
  }
}

}  // namespace interlab
