#pragma once

// Independent straight-line oracles used to pin implementation behavior.
// Everything here is deliberately written with plain nested vectors and
// loops, sharing no code with the library paths it checks.

#include <array>
#include <cmath>
#include <vector>

#include "wukong/classifier.hpp"
#include "wukong/tensor.hpp"

namespace oracle {

using Grid = std::vector<std::vector<double>>;

inline Grid to_grid(const wukong::Mat& m) {
  Grid g(m.rows, std::vector<double>(m.cols));
  for (int i = 0; i < m.rows; ++i)
    for (int j = 0; j < m.cols; ++j) g[i][j] = m(i, j);
  return g;
}

// C = A * B^T, innermost loop last, scalar accumulation.
inline Grid matmul_nt(const Grid& A, const Grid& B) {
  Grid C(A.size(), std::vector<double>(B.size(), 0.0));
  for (size_t i = 0; i < A.size(); ++i)
    for (size_t j = 0; j < B.size(); ++j)
      for (size_t k = 0; k < A[i].size(); ++k) C[i][j] += A[i][k] * B[j][k];
  return C;
}

inline double sigmoid(double x) {
  double p = 1.0 / (1.0 + std::exp(-x));
  if (p < 1e-12) p = 1e-12;
  if (p > 1.0 - 1e-12) p = 1.0 - 1e-12;
  return p;
}

inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

inline std::vector<double> layernorm(const std::vector<double>& x, const std::vector<double>& gain,
                                     const std::vector<double>& bias) {
  const size_t d = x.size();
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(d);
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  var /= static_cast<double>(d);
  std::vector<double> out(d);
  for (size_t j = 0; j < d; ++j)
    out[j] = gain[j] * (x[j] - mean) / std::sqrt(var + 1e-5) + bias[j];
  return out;
}

// Full decoder forward from phi, scalar style. Mirrors the specified math:
// K = phi W_K^T, V = phi W_V^T, per-head softmax((Q K^T)/sqrt(d/h)) V,
// LN -> FFN(gelu) -> LN, then the per-row head (or the flattened binary
// head / mean pooling, per variant).
inline std::array<double, 7> classify(const Grid& phi, const Grid& Q,
                                      const wukong::DecoderParams& p) {
  const int n = static_cast<int>(phi.size());
  const int de = p.d_eps;
  const int d = p.d;

  Grid K(n, std::vector<double>(d, 0.0)), V(n, std::vector<double>(de, 0.0));
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < d; ++j)
      for (int k = 0; k < de; ++k) K[i][j] += p.frozen_W_K(j, k) * phi[i][k];
    for (int j = 0; j < de; ++j)
      for (int k = 0; k < de; ++k) V[i][j] += p.W_V(j, k) * phi[i][k];
  }

  Grid F(7, std::vector<double>(de, 0.0));
  if (p.variant == wukong::Variant::no_att) {
    for (int j = 0; j < de; ++j) {
      double m = 0.0;
      for (int i = 0; i < n; ++i) m += V[i][j];
      m /= n;
      for (int r = 0; r < 7; ++r) F[r][j] = m;
    }
  } else {
    const int hq = d / p.heads, hv = de / p.heads;
    for (int h = 0; h < p.heads; ++h) {
      for (int r = 0; r < 7; ++r) {
        std::vector<double> s(n, 0.0);
        for (int i = 0; i < n; ++i) {
          for (int k = 0; k < hq; ++k) s[i] += Q[r][h * hq + k] * K[i][h * hq + k];
          s[i] /= std::sqrt(static_cast<double>(hq));
        }
        double mx = s[0];
        for (double v : s) mx = std::max(mx, v);
        double z = 0.0;
        for (int i = 0; i < n; ++i) {
          s[i] = std::exp(s[i] - mx);
          z += s[i];
        }
        for (int i = 0; i < n; ++i) s[i] /= z;
        for (int j = 0; j < hv; ++j) {
          double acc = 0.0;
          for (int i = 0; i < n; ++i) acc += s[i] * V[i][h * hv + j];
          F[r][h * hv + j] = acc;
        }
      }
    }
  }

  Grid Fp = F;
  if (p.variant != wukong::Variant::no_ffn) {
    std::vector<double> g1(de), b1(de), g2(de), b2(de);
    for (int j = 0; j < de; ++j) {
      g1[j] = p.ln1_gain(0, j);
      b1[j] = p.ln1_bias(0, j);
      g2[j] = p.ln2_gain(0, j);
      b2[j] = p.ln2_bias(0, j);
    }
    for (int r = 0; r < 7; ++r) {
      const auto x1 = layernorm(F[r], g1, b1);
      std::vector<double> h(p.d_ff, 0.0);
      for (int k = 0; k < p.d_ff; ++k) {
        for (int j = 0; j < de; ++j) h[k] += p.ffn_W1(k, j) * x1[j];
        h[k] = gelu(h[k] + p.ffn_b1(0, k));
      }
      std::vector<double> y(de, 0.0);
      for (int j = 0; j < de; ++j) {
        for (int k = 0; k < p.d_ff; ++k) y[j] += p.ffn_W2(j, k) * h[k];
        y[j] += p.ffn_b2(0, j);
      }
      Fp[r] = layernorm(y, g2, b2);
    }
  }

  std::array<double, 7> probs{};
  if (p.variant == wukong::Variant::no_cat) {
    double logit = p.cat_b(0, 0);
    int idx = 0;
    for (int r = 0; r < 7; ++r)
      for (int j = 0; j < de; ++j, ++idx) logit += p.cat_w(0, idx) * Fp[r][j];
    const double prob = sigmoid(logit);
    probs.fill(prob);
  } else {
    for (int r = 0; r < 7; ++r) {
      double logit = p.head_b2(0, 0);
      for (int k = 0; k < p.d_h; ++k) {
        double h = p.head_b1(0, k);
        for (int j = 0; j < de; ++j) h += p.head_W1(k, j) * Fp[r][j];
        logit += p.head_w2(0, k) * gelu(h);
      }
      probs[r] = sigmoid(logit);
    }
  }
  return probs;
}

// All-pairs ROC AUC with ties counted one half.
inline double roc_auc_pairs(const std::vector<double>& scores, const std::vector<int>& labels) {
  double wins = 0.0;
  long pairs = 0;
  for (size_t i = 0; i < scores.size(); ++i) {
    if (!labels[i]) continue;
    for (size_t j = 0; j < scores.size(); ++j) {
      if (labels[j]) continue;
      ++pairs;
      if (scores[i] > scores[j])
        wins += 1.0;
      else if (scores[i] == scores[j])
        wins += 0.5;
    }
  }
  return wins / static_cast<double>(pairs);
}

// Per-term BCE with the documented clamp.
inline double bce(const std::array<double, 7>& p, const std::array<uint8_t, 7>& y) {
  double loss = 0.0;
  for (int i = 0; i < 7; ++i) {
    double pi = p[i];
    if (pi < 1e-7) pi = 1e-7;
    if (pi > 1.0 - 1e-7) pi = 1.0 - 1e-7;
    loss -= y[i] ? std::log(pi) : std::log(1.0 - pi);
  }
  return loss;
}

}  // namespace oracle
