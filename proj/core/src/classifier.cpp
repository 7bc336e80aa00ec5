#include "wukong/classifier.hpp"

#include <cmath>
#include <stdexcept>

namespace wukong {

namespace {

constexpr double kProbFloor = 1e-12;
constexpr double kLnEps = 1e-5;

double sigmoid_clamped(double x) {
  double p;
  if (x >= 0) {
    p = 1.0 / (1.0 + std::exp(-x));
  } else {
    const double e = std::exp(x);
    p = e / (1.0 + e);
  }
  if (p < kProbFloor) p = kProbFloor;
  if (p > 1.0 - kProbFloor) p = 1.0 - kProbFloor;
  return p;
}

void require_finite(const Mat& m, const std::string& what) {
  if (!all_finite(m)) throw std::invalid_argument(what + ": non-finite entries");
}

}  // namespace

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

double gelu_grad(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x / std::sqrt(2.0)));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * 3.14159265358979323846);
  return cdf + x * pdf;
}

std::string variant_name(Variant v) {
  switch (v) {
    case Variant::full: return "full";
    case Variant::no_att: return "no_att";
    case Variant::no_ffn: return "no_ffn";
    case Variant::no_cat: return "no_cat";
  }
  return "full";
}

Variant variant_from_name(const std::string& name) {
  if (name == "full") return Variant::full;
  if (name == "no_att") return Variant::no_att;
  if (name == "no_ffn") return Variant::no_ffn;
  if (name == "no_cat") return Variant::no_cat;
  throw std::invalid_argument("unknown variant '" + name + "'");
}

DecoderParams init_decoder(const DiffusionConfig& cfg, const FrozenProjections& frozen,
                           Variant variant, int heads, uint64_t seed, int d_ff, int d_h) {
  const int de = cfg.d_eps(), d = cfg.d();
  if (d_ff <= 0) d_ff = 4 * de;
  if (d_h <= 0) d_h = de;
  if (heads < 1 || d % heads != 0 || de % heads != 0)
    throw std::invalid_argument("init_decoder: heads must divide d and d_eps");
  require_shape(frozen.W_QC, d, de, "init_decoder: W_QC");

  DecoderParams p;
  p.variant = variant;
  p.heads = heads;
  p.d_eps = de;
  p.d = d;
  p.d_ff = d_ff;
  p.d_h = d_h;
  p.frozen_W_K = frozen.W_QC;  // keys reuse the checkpoint's query weight

  NormalSampler g(derive_seed(seed, 0x11));
  p.W_V = Mat(de, de);
  for (int i = 0; i < de; ++i) p.W_V(i, i) = 1.0;
  for (auto& v : p.W_V.a) v += 0.02 * g.next();

  p.ln1_gain = Mat(1, de, 1.0);
  p.ln1_bias = Mat(1, de, 0.0);
  p.ln2_gain = Mat(1, de, 1.0);
  p.ln2_bias = Mat(1, de, 0.0);

  NormalSampler g1(derive_seed(seed, 0x12));
  p.ffn_W1 = randn(d_ff, de, g1, 1.0 / std::sqrt(static_cast<double>(de)));
  p.ffn_b1 = Mat(1, d_ff, 0.0);
  p.ffn_W2 = randn(de, d_ff, g1, 1.0 / std::sqrt(static_cast<double>(d_ff)));
  p.ffn_b2 = Mat(1, de, 0.0);

  NormalSampler g2(derive_seed(seed, 0x13));
  p.head_W1 = randn(d_h, de, g2, 1.0 / std::sqrt(static_cast<double>(de)));
  p.head_b1 = Mat(1, d_h, 0.0);
  p.head_w2 = randn(1, d_h, g2, 1.0 / std::sqrt(static_cast<double>(d_h)));
  p.head_b2 = Mat(1, 1, 0.0);

  NormalSampler g3(derive_seed(seed, 0x14));
  p.cat_w = randn(1, kNumCategories * de, g3,
                  1.0 / std::sqrt(static_cast<double>(kNumCategories * de)));
  p.cat_b = Mat(1, 1, 0.0);

  return p;
}

void freeze_for_inference(DecoderParams& params) { params.frozen_for_inference = true; }

std::vector<std::pair<std::string, Mat*>> trainable_tensors(DecoderParams& p, bool freeze_w_v) {
  std::vector<std::pair<std::string, Mat*>> out;
  if (!freeze_w_v) out.emplace_back("W_V", &p.W_V);
  if (p.variant != Variant::no_ffn) {
    out.emplace_back("ln1.gain", &p.ln1_gain);
    out.emplace_back("ln1.bias", &p.ln1_bias);
    out.emplace_back("ffn.W1", &p.ffn_W1);
    out.emplace_back("ffn.b1", &p.ffn_b1);
    out.emplace_back("ffn.W2", &p.ffn_W2);
    out.emplace_back("ffn.b2", &p.ffn_b2);
    out.emplace_back("ln2.gain", &p.ln2_gain);
    out.emplace_back("ln2.bias", &p.ln2_bias);
  }
  if (p.variant == Variant::no_cat) {
    out.emplace_back("cat.w", &p.cat_w);
    out.emplace_back("cat.b", &p.cat_b);
  } else {
    out.emplace_back("head.W1", &p.head_W1);
    out.emplace_back("head.b1", &p.head_b1);
    out.emplace_back("head.w2", &p.head_w2);
    out.emplace_back("head.b2", &p.head_b2);
  }
  return out;
}

std::pair<Mat, Mat> project_kv(const Mat& phi, const DecoderParams& params) {
  if (phi.cols != params.d_eps)
    throw std::invalid_argument("project_kv: phi cols " + std::to_string(phi.cols) +
                                " != d_eps " + std::to_string(params.d_eps));
  return {matmul_nt(phi, params.frozen_W_K), matmul_nt(phi, params.W_V)};
}

namespace {

// Attention with optional per-head weight capture.
Mat attend_impl(const Mat& Q, const Mat& K, const Mat& V, int heads, std::vector<Mat>* A_out) {
  if (Q.cols != K.cols) throw std::invalid_argument("attend: Q/K dim mismatch");
  if (K.rows != V.rows) throw std::invalid_argument("attend: K/V row mismatch");
  if (heads < 1 || Q.cols % heads != 0 || V.cols % heads != 0)
    throw std::invalid_argument("attend: heads must divide d and d_eps");

  const int d_head = Q.cols / heads;
  const int v_head = V.cols / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(d_head));
  Mat F(Q.rows, V.cols);
  if (A_out) A_out->clear();

  for (int h = 0; h < heads; ++h) {
    const int q0 = h * d_head;
    const int v0 = h * v_head;
    Mat S(Q.rows, K.rows);
    for (int i = 0; i < Q.rows; ++i)
      for (int n = 0; n < K.rows; ++n) {
        double acc = 0.0;
        for (int k = 0; k < d_head; ++k) acc += Q(i, q0 + k) * K(n, q0 + k);
        S(i, n) = acc * scale;
      }
    softmax_rows_inplace(S);
    for (int i = 0; i < Q.rows; ++i)
      for (int j = 0; j < v_head; ++j) {
        double acc = 0.0;
        for (int n = 0; n < K.rows; ++n) acc += S(i, n) * V(n, v0 + j);
        F(i, v0 + j) = acc;
      }
    if (A_out) A_out->push_back(std::move(S));
  }
  return F;
}

}  // namespace

Mat attend(const Mat& Q, const Mat& K, const Mat& V, int heads) {
  return attend_impl(Q, K, V, heads, nullptr);
}

Prediction classify_forward(const Mat& input, bool input_is_features, const QueryMatrix* Q,
                            const DecoderParams& p, ClassifyTape* tape) {
  require_finite(input, "classify");
  Mat F;
  if (input_is_features) {
    require_shape(input, kNumCategories, p.d_eps, "classify: F");
    F = input;
  } else {
    auto [K, V] = project_kv(input, p);
    std::vector<Mat> A;
    if (p.variant == Variant::no_att) {
      const auto m = col_mean(V);
      F = Mat(kNumCategories, p.d_eps);
      for (int i = 0; i < kNumCategories; ++i)
        for (int j = 0; j < p.d_eps; ++j) F(i, j) = m[j];
    } else {
      if (!Q) throw std::invalid_argument("classify: query matrix required");
      require_shape(Q->tensor, kNumCategories, p.d, "classify: Q");
      F = attend_impl(Q->tensor, K, V, p.heads, tape ? &A : nullptr);
    }
    if (tape) {
      tape->from_phi = true;
      tape->phi = input;
      tape->V = std::move(V);
      tape->A_heads = std::move(A);
    }
  }
  if (tape) tape->F = F;

  // LN -> FFN -> LN (skipped entirely for no_ffn)
  Mat Fp;
  if (p.variant == Variant::no_ffn) {
    Fp = F;
  } else {
    const int de = p.d_eps;
    Mat xhat1(kNumCategories, de), X1(kNumCategories, de);
    std::vector<double> inv1(kNumCategories);
    for (int i = 0; i < kNumCategories; ++i) {
      double mean = 0.0;
      for (int j = 0; j < de; ++j) mean += F(i, j);
      mean /= de;
      double var = 0.0;
      for (int j = 0; j < de; ++j) {
        const double dv = F(i, j) - mean;
        var += dv * dv;
      }
      var /= de;
      const double inv = 1.0 / std::sqrt(var + kLnEps);
      inv1[i] = inv;
      for (int j = 0; j < de; ++j) {
        xhat1(i, j) = (F(i, j) - mean) * inv;
        X1(i, j) = p.ln1_gain(0, j) * xhat1(i, j) + p.ln1_bias(0, j);
      }
    }
    Mat H = matmul_nt(X1, p.ffn_W1);
    for (int i = 0; i < H.rows; ++i)
      for (int j = 0; j < H.cols; ++j) H(i, j) += p.ffn_b1(0, j);
    Mat G(H.rows, H.cols);
    for (size_t i = 0; i < H.a.size(); ++i) G.a[i] = gelu(H.a[i]);
    Mat Y = matmul_nt(G, p.ffn_W2);
    for (int i = 0; i < Y.rows; ++i)
      for (int j = 0; j < Y.cols; ++j) Y(i, j) += p.ffn_b2(0, j);

    Mat xhat2(kNumCategories, de);
    std::vector<double> inv2(kNumCategories);
    Fp = Mat(kNumCategories, de);
    for (int i = 0; i < kNumCategories; ++i) {
      double mean = 0.0;
      for (int j = 0; j < de; ++j) mean += Y(i, j);
      mean /= de;
      double var = 0.0;
      for (int j = 0; j < de; ++j) {
        const double dv = Y(i, j) - mean;
        var += dv * dv;
      }
      var /= de;
      const double inv = 1.0 / std::sqrt(var + kLnEps);
      inv2[i] = inv;
      for (int j = 0; j < de; ++j) {
        xhat2(i, j) = (Y(i, j) - mean) * inv;
        Fp(i, j) = p.ln2_gain(0, j) * xhat2(i, j) + p.ln2_bias(0, j);
      }
    }
    if (tape) {
      tape->xhat1 = std::move(xhat1);
      tape->X1 = std::move(X1);
      tape->H = std::move(H);
      tape->G = std::move(G);
      tape->Y = std::move(Y);
      tape->xhat2 = std::move(xhat2);
      tape->inv_std1 = std::move(inv1);
      tape->inv_std2 = std::move(inv2);
    }
  }
  if (tape) tape->Fp = Fp;

  Prediction pred;
  if (p.variant == Variant::no_cat) {
    double logit = p.cat_b(0, 0);
    int idx = 0;
    for (int i = 0; i < kNumCategories; ++i)
      for (int j = 0; j < p.d_eps; ++j, ++idx) logit += p.cat_w(0, idx) * Fp(i, j);
    const double prob = sigmoid_clamped(logit);
    for (int i = 0; i < kNumCategories; ++i) pred.y[i] = prob;
    if (tape) tape->cat_logit = logit;
  } else {
    Mat h1(kNumCategories, p.d_h), u(kNumCategories, p.d_h);
    for (int i = 0; i < kNumCategories; ++i) {
      for (int k = 0; k < p.d_h; ++k) {
        double acc = p.head_b1(0, k);
        for (int j = 0; j < p.d_eps; ++j) acc += p.head_W1(k, j) * Fp(i, j);
        h1(i, k) = acc;
        u(i, k) = gelu(acc);
      }
      double logit = p.head_b2(0, 0);
      for (int k = 0; k < p.d_h; ++k) logit += p.head_w2(0, k) * u(i, k);
      pred.y[i] = sigmoid_clamped(logit);
      if (tape) tape->logits[i] = logit;
    }
    if (tape) {
      tape->h1 = std::move(h1);
      tape->u = std::move(u);
    }
  }
  if (tape) tape->pred = pred;
  return pred;
}

Prediction head_forward(const Mat& F, const DecoderParams& params) {
  return classify_forward(F, /*input_is_features=*/true, nullptr, params, nullptr);
}

Prediction classify(const Mat& phi, const QueryMatrix& Q, const DecoderParams& params) {
  return classify_forward(phi, /*input_is_features=*/false, &Q, params, nullptr);
}

Mat attention_map(const QueryMatrix& Q, const Mat& K, int category_index) {
  if (category_index < 0 || category_index >= kNumCategories)
    throw std::out_of_range("attention_map: category index out of range");
  if (Q.tensor.cols != K.cols) throw std::invalid_argument("attention_map: Q/K dim mismatch");
  const int n = K.rows;
  const int g = static_cast<int>(std::lround(std::sqrt(static_cast<double>(n))));
  if (g * g != n)
    throw std::invalid_argument("attention_map: N = " + std::to_string(n) +
                                " is not a perfect square");
  Mat row(1, n);
  const double scale = 1.0 / std::sqrt(static_cast<double>(Q.tensor.cols));
  for (int i = 0; i < n; ++i) {
    double acc = 0.0;
    for (int k = 0; k < Q.tensor.cols; ++k) acc += Q.tensor(category_index, k) * K(i, k);
    row(0, i) = acc * scale;
  }
  softmax_rows_inplace(row);
  Mat map(g, g);
  map.a = std::move(row.a);
  return map;
}

TensorArchive save_decoder(const DecoderParams& p) {
  TensorArchive ar;
  ar.put("decoder.W_V", p.W_V);
  ar.put("decoder.ln1.gain", p.ln1_gain);
  ar.put("decoder.ln1.bias", p.ln1_bias);
  ar.put("decoder.ln2.gain", p.ln2_gain);
  ar.put("decoder.ln2.bias", p.ln2_bias);
  ar.put("decoder.ffn.W1", p.ffn_W1);
  ar.put("decoder.ffn.b1", p.ffn_b1);
  ar.put("decoder.ffn.W2", p.ffn_W2);
  ar.put("decoder.ffn.b2", p.ffn_b2);
  ar.put("decoder.head.W1", p.head_W1);
  ar.put("decoder.head.b1", p.head_b1);
  ar.put("decoder.head.w2", p.head_w2);
  ar.put("decoder.head.b2", p.head_b2);
  ar.put("decoder.cat.w", p.cat_w);
  ar.put("decoder.cat.b", p.cat_b);
  ar.put("decoder.W_K", p.frozen_W_K);
  ar.put_meta("decoder.variant", variant_name(p.variant));
  ar.put_meta("decoder.heads", std::to_string(p.heads));
  return ar;
}

DecoderParams load_decoder(const TensorArchive& ar) {
  DecoderParams p;
  p.variant = variant_from_name(ar.get_meta("decoder.variant"));
  p.heads = std::stoi(ar.get_meta("decoder.heads"));
  p.W_V = ar.get("decoder.W_V");
  p.ln1_gain = ar.get("decoder.ln1.gain");
  p.ln1_bias = ar.get("decoder.ln1.bias");
  p.ln2_gain = ar.get("decoder.ln2.gain");
  p.ln2_bias = ar.get("decoder.ln2.bias");
  p.ffn_W1 = ar.get("decoder.ffn.W1");
  p.ffn_b1 = ar.get("decoder.ffn.b1");
  p.ffn_W2 = ar.get("decoder.ffn.W2");
  p.ffn_b2 = ar.get("decoder.ffn.b2");
  p.head_W1 = ar.get("decoder.head.W1");
  p.head_b1 = ar.get("decoder.head.b1");
  p.head_w2 = ar.get("decoder.head.w2");
  p.head_b2 = ar.get("decoder.head.b2");
  p.cat_w = ar.get("decoder.cat.w");
  p.cat_b = ar.get("decoder.cat.b");
  p.frozen_W_K = ar.get("decoder.W_K");
  p.d_eps = p.W_V.rows;
  p.d = p.frozen_W_K.rows;
  p.d_ff = p.ffn_W1.rows;
  p.d_h = p.head_W1.rows;
  if (p.heads < 1 || p.d % p.heads != 0 || p.d_eps % p.heads != 0)
    throw std::runtime_error("load_decoder: head count inconsistent with dims");
  return p;
}

}  // namespace wukong
