#include <cmath>

#include "doctest.h"
#include "support/oracles.hpp"
#include "wukong/classifier.hpp"

using namespace wukong;

namespace {

DiffusionConfig tiny_cfg(int d_eps, int d, int N, int d_tau = 4, int M = 3) {
  return DiffusionConfig(4, linear_beta_schedule(4, 1e-3, 0.02), 7.5, d_eps, d_tau, d, N, M);
}

DecoderParams make_params(const DiffusionConfig& cfg, Variant v, int heads, uint64_t seed) {
  NormalSampler g(derive_seed(seed, 0xf));
  FrozenProjections frozen;
  frozen.W_QC = randn(cfg.d(), cfg.d_eps(), g, 1.0 / std::sqrt(cfg.d_eps()));
  frozen.W_KC = randn(cfg.d(), cfg.d_tau(), g);
  frozen.W_VC = randn(cfg.d(), cfg.d_tau(), g);
  return init_decoder(cfg, frozen, v, heads, seed);
}

QueryMatrix random_queries(int d, uint64_t seed) {
  NormalSampler g(seed);
  QueryMatrix q;
  q.tensor = randn(kNumCategories, d, g);
  return q;
}

}  // namespace

TEST_CASE("project_kv with identity W_V returns phi; shapes are N x d and N x d_eps") {
  const auto cfg = tiny_cfg(4, 3, 4);
  DecoderParams p = make_params(cfg, Variant::full, 1, 5);
  p.W_V = Mat(4, 4);
  for (int i = 0; i < 4; ++i) p.W_V(i, i) = 1.0;
  NormalSampler g(2);
  const Mat phi = randn(4, 4, g);
  const auto [K, V] = project_kv(phi, p);
  CHECK(K.rows == 4);
  CHECK(K.cols == 3);
  CHECK(V.rows == 4);
  CHECK(V.cols == 4);
  CHECK(digest_doubles(V) == digest_doubles(phi));
}

TEST_CASE("project_kv matches the naive triple-loop product") {
  const auto cfg = tiny_cfg(4, 3, 25);
  DecoderParams p = make_params(cfg, Variant::full, 1, 6);
  NormalSampler g(3);
  const Mat phi = randn(5, 4, g);
  const auto [K, V] = project_kv(phi, p);
  const auto KO = oracle::matmul_nt(oracle::to_grid(phi), oracle::to_grid(p.frozen_W_K));
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 3; ++j) CHECK(K(i, j) == doctest::Approx(KO[i][j]).epsilon(1e-12));
  CHECK_THROWS(project_kv(Mat(5, 7), p));
}

TEST_CASE("attend with zero keys collapses to the column mean of V") {
  NormalSampler g(4);
  const Mat Q = randn(kNumCategories, 4, g);
  const Mat K(6, 4, 0.0);
  const Mat V = randn(6, 4, g);
  const Mat F = attend(Q, K, V, 1);
  const auto mean = col_mean(V);
  for (int i = 0; i < kNumCategories; ++i)
    for (int j = 0; j < 4; ++j) CHECK(F(i, j) == doctest::Approx(mean[j]).epsilon(1e-12));
}

TEST_CASE("attend: 2-query 3-key scalar oracle, h = 1") {
  // hand-rolled evaluation of softmax(Q K^T / sqrt(d)) V on a tiny instance
  Mat Q(2, 2), K(3, 2), V(3, 2);
  Q(0, 0) = 0.3; Q(0, 1) = -1.2; Q(1, 0) = 2.0; Q(1, 1) = 0.5;
  K(0, 0) = 1.0; K(0, 1) = 0.0; K(1, 0) = -0.5; K(1, 1) = 0.7; K(2, 0) = 0.2; K(2, 1) = 0.2;
  V(0, 0) = 1.0; V(0, 1) = 2.0; V(1, 0) = -1.0; V(1, 1) = 0.5; V(2, 0) = 0.0; V(2, 1) = 3.0;

  const Mat F = attend(Q, K, V, 1);
  const double scale = 1.0 / std::sqrt(2.0);
  for (int r = 0; r < 2; ++r) {
    double s[3], mx = -1e300, z = 0.0;
    for (int i = 0; i < 3; ++i) {
      s[i] = (Q(r, 0) * K(i, 0) + Q(r, 1) * K(i, 1)) * scale;
      mx = std::max(mx, s[i]);
    }
    for (int i = 0; i < 3; ++i) {
      s[i] = std::exp(s[i] - mx);
      z += s[i];
    }
    for (int j = 0; j < 2; ++j) {
      double want = 0.0;
      for (int i = 0; i < 3; ++i) want += s[i] / z * V(i, j);
      CHECK(F(r, j) == doctest::Approx(want).epsilon(1e-12));
    }
  }
}

TEST_CASE("attend validates head divisibility") {
  NormalSampler g(4);
  const Mat Q = randn(7, 4, g), K = randn(5, 4, g), V = randn(5, 4, g);
  CHECK_NOTHROW(attend(Q, K, V, 2));
  CHECK_THROWS(attend(Q, K, V, 3));
}

TEST_CASE("head_forward: zero head maps everything to one half") {
  const auto cfg = tiny_cfg(4, 4, 4);
  DecoderParams p = make_params(cfg, Variant::full, 1, 7);
  p.head_W1 = Mat(p.d_h, p.d_eps, 0.0);
  p.head_b1 = Mat(1, p.d_h, 0.0);
  p.head_w2 = Mat(1, p.d_h, 0.0);
  p.head_b2 = Mat(1, 1, 0.0);
  NormalSampler g(8);
  const Prediction pred = head_forward(randn(7, 4, g), p);
  for (double v : pred.y) CHECK(v == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("head_forward: 1-row-style scalar composition oracle") {
  // d_eps = 2, hand-set weights, checked against a scalar recomputation
  const auto cfg = tiny_cfg(2, 2, 4);
  DecoderParams p = make_params(cfg, Variant::full, 1, 9);
  p.d_h = 2;
  p.ln1_gain(0, 0) = 1.3; p.ln1_gain(0, 1) = 0.7;
  p.ln1_bias(0, 0) = 0.1; p.ln1_bias(0, 1) = -0.2;
  p.ln2_gain(0, 0) = 0.9; p.ln2_gain(0, 1) = 1.1;
  p.ln2_bias(0, 0) = 0.0; p.ln2_bias(0, 1) = 0.3;
  NormalSampler g(10);
  p.ffn_W1 = randn(p.d_ff, 2, g);
  p.ffn_b1 = randn(1, p.d_ff, g);
  p.ffn_W2 = randn(2, p.d_ff, g);
  p.ffn_b2 = randn(1, 2, g);
  p.head_W1 = randn(2, 2, g);
  p.head_b1 = randn(1, 2, g);
  p.head_w2 = randn(1, 2, g);
  p.head_b2 = randn(1, 1, g);

  Mat F(7, 2);
  for (int i = 0; i < 7; ++i) {
    F(i, 0) = 0.25 * i - 0.8;
    F(i, 1) = 1.1 - 0.3 * i;
  }
  const Prediction got = head_forward(F, p);
  for (int i = 0; i < 7; ++i) {
    std::vector<double> x = {F(i, 0), F(i, 1)};
    std::vector<double> g1 = {p.ln1_gain(0, 0), p.ln1_gain(0, 1)};
    std::vector<double> b1 = {p.ln1_bias(0, 0), p.ln1_bias(0, 1)};
    auto x1 = oracle::layernorm(x, g1, b1);
    std::vector<double> h(p.d_ff, 0.0);
    for (int k = 0; k < p.d_ff; ++k) {
      for (int j = 0; j < 2; ++j) h[k] += p.ffn_W1(k, j) * x1[j];
      h[k] = oracle::gelu(h[k] + p.ffn_b1(0, k));
    }
    std::vector<double> y(2, 0.0);
    for (int j = 0; j < 2; ++j) {
      for (int k = 0; k < p.d_ff; ++k) y[j] += p.ffn_W2(j, k) * h[k];
      y[j] += p.ffn_b2(0, j);
    }
    std::vector<double> g2 = {p.ln2_gain(0, 0), p.ln2_gain(0, 1)};
    std::vector<double> b2 = {p.ln2_bias(0, 0), p.ln2_bias(0, 1)};
    auto fp = oracle::layernorm(y, g2, b2);
    double logit = p.head_b2(0, 0);
    for (int k = 0; k < 2; ++k) {
      double hh = p.head_b1(0, k);
      for (int j = 0; j < 2; ++j) hh += p.head_W1(k, j) * fp[j];
      logit += p.head_w2(0, k) * oracle::gelu(hh);
    }
    CHECK(got.y[i] == doctest::Approx(oracle::sigmoid(logit)).epsilon(1e-10));
  }
}

TEST_CASE("classify is pure, emits 7 probabilities strictly inside (0,1)") {
  const auto cfg = tiny_cfg(4, 4, 16);
  const DecoderParams p = make_params(cfg, Variant::full, 1, 12);
  const QueryMatrix Q = random_queries(4, 13);
  NormalSampler g(14);
  const Mat phi = randn(16, 4, g);
  const Prediction a = classify(phi, Q, p);
  const Prediction b = classify(phi, Q, p);
  for (int i = 0; i < 7; ++i) {
    CHECK(a.y[i] == b.y[i]);
    CHECK(a.y[i] > 0.0);
    CHECK(a.y[i] < 1.0);
  }
}

TEST_CASE("classify survives magnitude-1e3 inputs without NaN") {
  const auto cfg = tiny_cfg(4, 4, 16);
  const QueryMatrix Q = random_queries(4, 13);
  NormalSampler g(15);
  const Mat phi = randn(16, 4, g, 1000.0);
  for (Variant v : {Variant::full, Variant::no_att, Variant::no_ffn, Variant::no_cat}) {
    const DecoderParams p = make_params(cfg, v, 1, 16);
    const Prediction pred = classify(phi, Q, p);
    for (double val : pred.y) {
      CHECK(std::isfinite(val));
      CHECK(val > 0.0);
      CHECK(val < 1.0);
    }
  }
}

TEST_CASE("no_att equals full when K = 0 (both reduce to the V mean)") {
  const auto cfg = tiny_cfg(4, 4, 9);
  DecoderParams full = make_params(cfg, Variant::full, 1, 17);
  full.frozen_W_K = Mat(4, 4, 0.0);  // K = phi * 0 = 0 -> uniform attention
  DecoderParams mean = full;
  mean.variant = Variant::no_att;
  const QueryMatrix Q = random_queries(4, 18);
  NormalSampler g(19);
  // tiny instance with distinct token rows
  const Mat phi = randn(9, 4, g);
  const Prediction a = classify(phi, Q, full);
  const Prediction b = classify(phi, Q, mean);
  for (int i = 0; i < 7; ++i) CHECK(a.y[i] == doctest::Approx(b.y[i]).epsilon(1e-12));
}

TEST_CASE("variants produce shape-correct outputs that differ from full") {
  const auto cfg = tiny_cfg(8, 4, 16);
  const QueryMatrix Q = random_queries(4, 21);
  NormalSampler g(22);
  const Mat phi = randn(16, 8, g);
  const DecoderParams full = make_params(cfg, Variant::full, 1, 23);
  const Prediction base = classify(phi, Q, full);
  for (Variant v : {Variant::no_att, Variant::no_ffn, Variant::no_cat}) {
    DecoderParams p = full;
    p.variant = v;
    const Prediction alt = classify(phi, Q, p);
    bool differs = false;
    for (int i = 0; i < 7; ++i) differs |= alt.y[i] != base.y[i];
    CHECK(differs);
  }
}

TEST_CASE("full pipeline matches the independent scalar oracle on tiny instances") {
  SplitMix64 seeds(404);
  for (int trial = 0; trial < 50; ++trial) {
    const int d_eps = 2 * (1 + static_cast<int>(seeds.next() % 2));  // 2 or 4
    const int d = 2 * (1 + static_cast<int>(seeds.next() % 2));
    const int grid = 1 + static_cast<int>(seeds.next() % 2);
    const int N = grid * grid * 4;  // 4 or 16 <= 16, perfect square
    const int heads = (seeds.next() % 2) ? 1 : 2;
    const auto cfg = tiny_cfg(d_eps, d, N);
    const Variant v = static_cast<Variant>(seeds.next() % 4);
    const DecoderParams p = make_params(cfg, v, heads, seeds.next());
    const QueryMatrix Q = random_queries(d, seeds.next());
    NormalSampler g(seeds.next());
    const Mat phi = randn(N, d_eps, g);

    const Prediction got = classify(phi, Q, p);
    const auto want = oracle::classify(oracle::to_grid(phi), oracle::to_grid(Q.tensor), p);
    for (int i = 0; i < 7; ++i)
      CHECK(got.y[i] == doctest::Approx(want[i]).epsilon(1e-10));
  }
}

TEST_CASE("attention_map: shape, row-stochasticity, square precondition") {
  const QueryMatrix Q = random_queries(4, 31);
  NormalSampler g(32);
  const Mat K16 = randn(16, 4, g);
  const Mat map = attention_map(Q, K16, 2);
  CHECK(map.rows == 4);
  CHECK(map.cols == 4);
  double sum = 0.0;
  for (double v : map.a) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
    sum += v;
  }
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));

  const Mat K63 = randn(63, 4, g);
  CHECK_THROWS(attention_map(Q, K63, 0));
  CHECK_THROWS(attention_map(Q, K16, 7));
  CHECK_THROWS(attention_map(Q, K16, -1));
}

TEST_CASE("decoder archive round-trip preserves parameters and variant") {
  const auto cfg = tiny_cfg(4, 4, 16);
  DecoderParams p = make_params(cfg, Variant::no_cat, 2, 33);
  const TensorArchive ar = save_decoder(p);
  CHECK(ar.get_meta("decoder.variant") == "no_cat");
  const DecoderParams q = load_decoder(ar);
  CHECK(q.variant == Variant::no_cat);
  CHECK(q.heads == 2);
  CHECK(q.d_eps == 4);
  CHECK(q.d_ff == p.d_ff);
  // archive stores f32; re-saving must be byte-stable
  CHECK(save_decoder(q).serialize() == ar.serialize());
}
