#pragma once

#include <string>
#include <vector>

#include "wukong/rng.hpp"

namespace wukong {

// Dense row-major matrix of doubles. Rows are tokens throughout; a
// projection W of shape (d_out x d_in) applies to a token matrix X as
// X * W^T (see matmul_nt).
struct Mat {
  int rows = 0;
  int cols = 0;
  std::vector<double> a;

  Mat() = default;
  Mat(int r, int c, double fill = 0.0)
      : rows(r), cols(c), a(static_cast<size_t>(r) * static_cast<size_t>(c), fill) {}

  double& operator()(int r, int c) { return a[static_cast<size_t>(r) * cols + c]; }
  double operator()(int r, int c) const { return a[static_cast<size_t>(r) * cols + c]; }

  double* row_ptr(int r) { return a.data() + static_cast<size_t>(r) * cols; }
  const double* row_ptr(int r) const { return a.data() + static_cast<size_t>(r) * cols; }

  size_t size() const { return a.size(); }
  bool same_shape(const Mat& o) const { return rows == o.rows && cols == o.cols; }
};

// i.i.d. N(0, scale^2) entries, filled row-major.
Mat randn(int rows, int cols, NormalSampler& g, double scale = 1.0);

Mat matmul_nt(const Mat& A, const Mat& B);  // A * B^T   (A: m x k, B: n x k) -> m x n
Mat matmul_nn(const Mat& A, const Mat& B);  // A * B     (A: m x k, B: k x n) -> m x n
Mat transpose(const Mat& A);

Mat add(const Mat& A, const Mat& B);
Mat sub(const Mat& A, const Mat& B);
Mat scale(const Mat& A, double s);
void add_inplace(Mat& A, const Mat& B);

// Row-wise softmax with per-row max subtraction.
void softmax_rows_inplace(Mat& A);

bool all_finite(const Mat& A);
double max_abs(const Mat& A);
std::vector<double> col_mean(const Mat& A);

// Exact byte digest of the double payload plus shape; the frozen-weight
// invariance checks compare these.
uint64_t digest_doubles(const Mat& A);

void require_shape(const Mat& A, int rows, int cols, const std::string& what);

}  // namespace wukong
