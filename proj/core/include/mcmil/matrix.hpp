#pragma once

#include <vector>

#include "mcmil/common.hpp"

namespace mcmil {

using Vector = std::vector<double>;

/// Dense row-major matrix of doubles.
struct Matrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(int r, int c, double fill = 0.0)
      : rows(r), cols(c), data(static_cast<size_t>(r) * c, fill) {
    if (r < 0 || c < 0) throw ShapeError("matrix dims must be non-negative");
  }

  double& operator()(int r, int c) { return data[static_cast<size_t>(r) * cols + c]; }
  double operator()(int r, int c) const { return data[static_cast<size_t>(r) * cols + c]; }

  double* row(int r) { return data.data() + static_cast<size_t>(r) * cols; }
  const double* row(int r) const { return data.data() + static_cast<size_t>(r) * cols; }

  size_t size() const { return data.size(); }

  bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }

  bool operator==(const Matrix& o) const {
    return rows == o.rows && cols == o.cols && data == o.data;
  }
};

}  // namespace mcmil
