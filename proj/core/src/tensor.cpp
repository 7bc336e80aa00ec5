#include "wukong/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace wukong {

Mat randn(int rows, int cols, NormalSampler& g, double s) {
  Mat m(rows, cols);
  for (auto& v : m.a) v = g.next() * s;
  return m;
}

Mat matmul_nt(const Mat& A, const Mat& B) {
  if (A.cols != B.cols)
    throw std::invalid_argument("matmul_nt: inner dims differ (" + std::to_string(A.cols) +
                                " vs " + std::to_string(B.cols) + ")");
  Mat C(A.rows, B.rows);
  for (int i = 0; i < A.rows; ++i) {
    const double* ai = A.row_ptr(i);
    for (int j = 0; j < B.rows; ++j) {
      const double* bj = B.row_ptr(j);
      double acc = 0.0;
      for (int k = 0; k < A.cols; ++k) acc += ai[k] * bj[k];
      C(i, j) = acc;
    }
  }
  return C;
}

Mat matmul_nn(const Mat& A, const Mat& B) {
  if (A.cols != B.rows)
    throw std::invalid_argument("matmul_nn: inner dims differ (" + std::to_string(A.cols) +
                                " vs " + std::to_string(B.rows) + ")");
  Mat C(A.rows, B.cols);
  for (int i = 0; i < A.rows; ++i) {
    const double* ai = A.row_ptr(i);
    double* ci = C.row_ptr(i);
    for (int k = 0; k < A.cols; ++k) {
      const double aik = ai[k];
      const double* bk = B.row_ptr(k);
      for (int j = 0; j < B.cols; ++j) ci[j] += aik * bk[j];
    }
  }
  return C;
}

Mat transpose(const Mat& A) {
  Mat T(A.cols, A.rows);
  for (int i = 0; i < A.rows; ++i)
    for (int j = 0; j < A.cols; ++j) T(j, i) = A(i, j);
  return T;
}

Mat add(const Mat& A, const Mat& B) {
  if (!A.same_shape(B)) throw std::invalid_argument("add: shape mismatch");
  Mat C = A;
  for (size_t i = 0; i < C.a.size(); ++i) C.a[i] += B.a[i];
  return C;
}

Mat sub(const Mat& A, const Mat& B) {
  if (!A.same_shape(B)) throw std::invalid_argument("sub: shape mismatch");
  Mat C = A;
  for (size_t i = 0; i < C.a.size(); ++i) C.a[i] -= B.a[i];
  return C;
}

Mat scale(const Mat& A, double s) {
  Mat C = A;
  for (auto& v : C.a) v *= s;
  return C;
}

void add_inplace(Mat& A, const Mat& B) {
  if (!A.same_shape(B)) throw std::invalid_argument("add_inplace: shape mismatch");
  for (size_t i = 0; i < A.a.size(); ++i) A.a[i] += B.a[i];
}

void softmax_rows_inplace(Mat& A) {
  for (int i = 0; i < A.rows; ++i) {
    double* r = A.row_ptr(i);
    double m = r[0];
    for (int j = 1; j < A.cols; ++j) m = std::max(m, r[j]);
    double sum = 0.0;
    for (int j = 0; j < A.cols; ++j) {
      r[j] = std::exp(r[j] - m);
      sum += r[j];
    }
    for (int j = 0; j < A.cols; ++j) r[j] /= sum;
  }
}

bool all_finite(const Mat& A) {
  for (double v : A.a)
    if (!std::isfinite(v)) return false;
  return true;
}

double max_abs(const Mat& A) {
  double m = 0.0;
  for (double v : A.a) m = std::max(m, std::fabs(v));
  return m;
}

std::vector<double> col_mean(const Mat& A) {
  std::vector<double> m(A.cols, 0.0);
  for (int i = 0; i < A.rows; ++i) {
    const double* r = A.row_ptr(i);
    for (int j = 0; j < A.cols; ++j) m[j] += r[j];
  }
  for (auto& v : m) v /= A.rows;
  return m;
}

uint64_t digest_doubles(const Mat& A) {
  uint64_t h = fnv1a64(&A.rows, sizeof(A.rows));
  h = fnv1a64(&A.cols, sizeof(A.cols), h);
  if (!A.a.empty()) h = fnv1a64(A.a.data(), A.a.size() * sizeof(double), h);
  return h;
}

void require_shape(const Mat& A, int rows, int cols, const std::string& what) {
  if (A.rows != rows || A.cols != cols)
    throw std::invalid_argument(what + ": expected " + std::to_string(rows) + "x" +
                                std::to_string(cols) + ", got " + std::to_string(A.rows) + "x" +
                                std::to_string(A.cols));
}

}  // namespace wukong
