#include "wukong/trainer.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <numeric>
#include <stdexcept>
#include <thread>

#include "json.hpp"

namespace wukong {

namespace {

constexpr double kClampLo = 1e-7;
constexpr double kClampHi = 1.0 - 1e-7;

double clamp_prob(double p) { return std::min(std::max(p, kClampLo), kClampHi); }

// Derivative of the clamped BCE w.r.t. the logit: zero in the clamped
// (flat) region, p - y inside it.
double dloss_dlogit(double p, int y) {
  if (p <= kClampLo || p >= kClampHi) return 0.0;
  return p - static_cast<double>(y);
}

// LayerNorm backward for one row (biased variance):
//   dx = inv_std * (dxhat - mean(dxhat) - xhat * mean(dxhat .* xhat))
void layernorm_backward_row(const double* dxhat, const double* xhat, double inv_std, int dim,
                            double* dx) {
  double m1 = 0.0, m2 = 0.0;
  for (int j = 0; j < dim; ++j) {
    m1 += dxhat[j];
    m2 += dxhat[j] * xhat[j];
  }
  m1 /= dim;
  m2 /= dim;
  for (int j = 0; j < dim; ++j) dx[j] = inv_std * (dxhat[j] - m1 - xhat[j] * m2);
}

void check_finite(const Mat& m, const char* layer) {
  if (!all_finite(m))
    throw std::runtime_error(std::string("loss_gradients: non-finite values in ") + layer);
}

void run_parallel(int n, int threads, const std::function<void(int)>& fn) {
  if (threads <= 1 || n <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  threads = std::min(threads, n);
  std::vector<std::thread> pool;
  std::atomic<int> next{0};
  for (int t = 0; t < threads; ++t)
    pool.emplace_back([&] {
      for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1)) fn(i);
    });
  for (auto& th : pool) th.join();
}

}  // namespace

double bce_loss(const Prediction& y_hat, const LabelVector& y) {
  double loss = 0.0;
  for (int i = 0; i < kNumCategories; ++i) {
    const double p = clamp_prob(y_hat.y[i]);
    loss -= y.bits[i] ? std::log(p) : std::log(1.0 - p);
  }
  return loss;
}

double bce_loss_binary(double p, int y) {
  p = clamp_prob(p);
  return y ? -std::log(p) : -std::log(1.0 - p);
}

const Mat* GradientSet::find(const std::string& name) const {
  for (const auto& [k, m] : grads)
    if (k == name) return &m;
  return nullptr;
}

GradientSet loss_gradients(const DecoderParams& params, const QueryMatrix* Q,
                           const std::vector<const CacheRecord*>& batch, CacheLevel level,
                           bool freeze_w_v) {
  if (batch.empty()) throw std::invalid_argument("loss_gradients: empty batch");
  if (level == CacheLevel::features && !freeze_w_v)
    throw std::invalid_argument(
        "loss_gradients: feature-level records cannot train W_V; set freeze_w_v");

  const int de = params.d_eps;
  const bool has_ffn = params.variant != Variant::no_ffn;
  const bool per_cat = params.variant != Variant::no_cat;
  const bool from_phi = level == CacheLevel::phi;
  const bool grad_wv = from_phi && !freeze_w_v;

  // accumulators, zero-shaped like their tensors
  GradientSet out;
  auto& names = out.grads;
  auto push = [&](const std::string& n, int r, int c) { names.emplace_back(n, Mat(r, c)); };
  if (grad_wv) push("W_V", de, de);
  if (has_ffn) {
    push("ln1.gain", 1, de);
    push("ln1.bias", 1, de);
    push("ffn.W1", params.d_ff, de);
    push("ffn.b1", 1, params.d_ff);
    push("ffn.W2", de, params.d_ff);
    push("ffn.b2", 1, de);
    push("ln2.gain", 1, de);
    push("ln2.bias", 1, de);
  }
  if (per_cat) {
    push("head.W1", params.d_h, de);
    push("head.b1", 1, params.d_h);
    push("head.w2", 1, params.d_h);
    push("head.b2", 1, 1);
  } else {
    push("cat.w", 1, kNumCategories * de);
    push("cat.b", 1, 1);
  }
  auto grad_of = [&](const std::string& n) -> Mat& {
    for (auto& [k, m] : names)
      if (k == n) return m;
    throw std::logic_error("loss_gradients: missing accumulator " + n);
  };

  double loss_sum = 0.0;
  for (const CacheRecord* rec : batch) {
    ClassifyTape tape;
    classify_forward(rec->x, level == CacheLevel::features, Q, params, &tape);
    check_finite(tape.F, "attention output");
    if (has_ffn) check_finite(tape.Y, "ffn output");

    if (per_cat) {
      loss_sum += bce_loss(tape.pred, rec->y);
    } else {
      loss_sum += bce_loss_binary(tape.pred.y[0], rec->y.any());
    }

    // head backward -> dFp
    Mat dFp(kNumCategories, de);
    if (per_cat) {
      auto& g_W1 = grad_of("head.W1");
      auto& g_b1 = grad_of("head.b1");
      auto& g_w2 = grad_of("head.w2");
      auto& g_b2 = grad_of("head.b2");
      for (int i = 0; i < kNumCategories; ++i) {
        const double dlogit = dloss_dlogit(tape.pred.y[i], rec->y.bits[i]);
        if (dlogit == 0.0) continue;
        g_b2(0, 0) += dlogit;
        for (int k = 0; k < params.d_h; ++k) {
          g_w2(0, k) += dlogit * tape.u(i, k);
          const double dh1 = dlogit * params.head_w2(0, k) * gelu_grad(tape.h1(i, k));
          g_b1(0, k) += dh1;
          for (int j = 0; j < de; ++j) {
            g_W1(k, j) += dh1 * tape.Fp(i, j);
            dFp(i, j) += dh1 * params.head_W1(k, j);
          }
        }
      }
    } else {
      const double dlogit = dloss_dlogit(tape.pred.y[0], rec->y.any());
      auto& g_w = grad_of("cat.w");
      auto& g_b = grad_of("cat.b");
      g_b(0, 0) += dlogit;
      int idx = 0;
      for (int i = 0; i < kNumCategories; ++i)
        for (int j = 0; j < de; ++j, ++idx) {
          g_w(0, idx) += dlogit * tape.Fp(i, j);
          dFp(i, j) = dlogit * params.cat_w(0, idx);
        }
    }

    // LN2 <- FFN <- LN1 backward -> dF
    Mat dF;
    if (has_ffn) {
      auto& g_gain2 = grad_of("ln2.gain");
      auto& g_bias2 = grad_of("ln2.bias");
      Mat dY(kNumCategories, de);
      {
        std::vector<double> dxhat(de);
        for (int i = 0; i < kNumCategories; ++i) {
          for (int j = 0; j < de; ++j) {
            g_gain2(0, j) += dFp(i, j) * tape.xhat2(i, j);
            g_bias2(0, j) += dFp(i, j);
            dxhat[j] = dFp(i, j) * params.ln2_gain(0, j);
          }
          layernorm_backward_row(dxhat.data(), tape.xhat2.row_ptr(i), tape.inv_std2[i], de,
                                 dY.row_ptr(i));
        }
      }

      auto& g_W2 = grad_of("ffn.W2");
      auto& g_b2 = grad_of("ffn.b2");
      auto& g_W1 = grad_of("ffn.W1");
      auto& g_b1 = grad_of("ffn.b1");
      Mat dX1(kNumCategories, de);
      for (int i = 0; i < kNumCategories; ++i) {
        for (int j = 0; j < de; ++j) {
          const double d = dY(i, j);
          g_b2(0, j) += d;
          for (int k = 0; k < params.d_ff; ++k) g_W2(j, k) += d * tape.G(i, k);
        }
        for (int k = 0; k < params.d_ff; ++k) {
          double dg = 0.0;
          for (int j = 0; j < de; ++j) dg += dY(i, j) * params.ffn_W2(j, k);
          const double dh = dg * gelu_grad(tape.H(i, k));
          g_b1(0, k) += dh;
          for (int j = 0; j < de; ++j) {
            g_W1(k, j) += dh * tape.X1(i, j);
            dX1(i, j) += dh * params.ffn_W1(k, j);
          }
        }
      }

      auto& g_gain1 = grad_of("ln1.gain");
      auto& g_bias1 = grad_of("ln1.bias");
      dF = Mat(kNumCategories, de);
      {
        std::vector<double> dxhat(de);
        for (int i = 0; i < kNumCategories; ++i) {
          for (int j = 0; j < de; ++j) {
            g_gain1(0, j) += dX1(i, j) * tape.xhat1(i, j);
            g_bias1(0, j) += dX1(i, j);
            dxhat[j] = dX1(i, j) * params.ln1_gain(0, j);
          }
          layernorm_backward_row(dxhat.data(), tape.xhat1.row_ptr(i), tape.inv_std1[i], de,
                                 dF.row_ptr(i));
        }
      }
    } else {
      dF = std::move(dFp);
    }

    // attention -> V -> W_V backward (phi-level records only)
    if (grad_wv) {
      const int n_tok = tape.phi.rows;
      Mat dV(n_tok, de);
      if (params.variant == Variant::no_att) {
        for (int j = 0; j < de; ++j) {
          double acc = 0.0;
          for (int i = 0; i < kNumCategories; ++i) acc += dF(i, j);
          acc /= n_tok;
          for (int n = 0; n < n_tok; ++n) dV(n, j) = acc;
        }
      } else {
        const int v_head = de / params.heads;
        for (int h = 0; h < params.heads; ++h) {
          const Mat& A = tape.A_heads[h];
          const int v0 = h * v_head;
          for (int i = 0; i < kNumCategories; ++i)
            for (int n = 0; n < n_tok; ++n) {
              const double a = A(i, n);
              for (int j = 0; j < v_head; ++j) dV(n, v0 + j) += a * dF(i, v0 + j);
            }
        }
      }
      auto& g_WV = grad_of("W_V");
      for (int n = 0; n < n_tok; ++n)
        for (int j = 0; j < de; ++j) {
          const double d = dV(n, j);
          if (d == 0.0) continue;
          for (int k = 0; k < de; ++k) g_WV(j, k) += d * tape.phi(n, k);
        }
    }
  }

  const double inv_n = 1.0 / static_cast<double>(batch.size());
  out.mean_loss = loss_sum * inv_n;
  for (auto& [k, m] : names)
    for (auto& v : m.a) v *= inv_n;
  return out;
}

FeatureCache precompute_features(const std::vector<TrainingExample>& data,
                                 const ToyBackbone& backbone, const QueryMatrix& Q,
                                 const DecoderParams& params, int t_c, CacheLevel level,
                                 int threads) {
  if (t_c < 1 || t_c > backbone.cfg().T())
    throw std::invalid_argument("precompute_features: T_C outside [1, T]");
  FeatureCache cache;
  cache.level = level;
  cache.provenance.backbone_id = backbone.id();
  cache.provenance.t_c = t_c;
  cache.provenance.q_digest = digest_f32(Q.tensor);
  if (level == CacheLevel::features) cache.provenance.w_v_digest = digest_f32(params.W_V);

  cache.records.resize(data.size());
  run_parallel(static_cast<int>(data.size()), threads, [&](int i) {
    const auto& ex = data[i];
    CacheRecord rec;
    char idbuf[64];
    std::snprintf(idbuf, sizeof(idbuf), "%016llx:%llu",
                  static_cast<unsigned long long>(fnv1a64(ex.prompt.data(), ex.prompt.size())),
                  static_cast<unsigned long long>(ex.seed));
    rec.sample_id = idbuf;
    rec.y = ex.y;
    const Mat phi = tap_features(backbone, ex.prompt, ex.seed, t_c);
    if (level == CacheLevel::phi) {
      rec.x = phi;
    } else {
      auto [K, V] = project_kv(phi, params);
      if (params.variant == Variant::no_att) {
        const auto m = col_mean(V);
        rec.x = Mat(kNumCategories, params.d_eps);
        for (int r = 0; r < kNumCategories; ++r)
          for (int j = 0; j < params.d_eps; ++j) rec.x(r, j) = m[j];
      } else {
        rec.x = attend(Q.tensor, K, V, params.heads);
      }
    }
    cache.records[i] = std::move(rec);
  });
  return cache;
}

void save_cache(const FeatureCache& cache, const std::string& archive_path,
                const std::string& manifest_path) {
  TensorArchive ar;
  nlohmann::json manifest;
  manifest["level"] = cache.level == CacheLevel::phi ? "phi" : "features";
  manifest["backbone_id"] = cache.provenance.backbone_id;
  manifest["t_c"] = cache.provenance.t_c;
  manifest["q_digest"] = cache.provenance.q_digest;
  manifest["w_v_digest"] = cache.provenance.w_v_digest;
  auto& recs = manifest["records"] = nlohmann::json::array();
  for (size_t i = 0; i < cache.records.size(); ++i) {
    const auto& r = cache.records[i];
    char name[32];
    std::snprintf(name, sizeof(name), "rec%06zu.x", i);
    ar.put(name, r.x);
    nlohmann::json jr;
    jr["id"] = r.sample_id;
    jr["labels"] = r.y.bits;
    recs.push_back(std::move(jr));
  }
  ar.save(archive_path);
  std::ofstream f(manifest_path, std::ios::trunc);
  if (!f) throw std::runtime_error("save_cache: cannot open '" + manifest_path + "'");
  f << manifest.dump(2) << "\n";
}

FeatureCache load_cache(const std::string& archive_path, const std::string& manifest_path) {
  std::ifstream f(manifest_path);
  if (!f) throw std::runtime_error("load_cache: cannot open '" + manifest_path + "'");
  nlohmann::json manifest = nlohmann::json::parse(f);
  FeatureCache cache;
  cache.level = manifest.at("level").get<std::string>() == "phi" ? CacheLevel::phi
                                                                 : CacheLevel::features;
  cache.provenance.backbone_id = manifest.at("backbone_id").get<std::string>();
  cache.provenance.t_c = manifest.at("t_c").get<int>();
  cache.provenance.q_digest = manifest.at("q_digest").get<uint64_t>();
  cache.provenance.w_v_digest = manifest.at("w_v_digest").get<uint64_t>();
  const TensorArchive ar = TensorArchive::load(archive_path);
  const auto& recs = manifest.at("records");
  for (size_t i = 0; i < recs.size(); ++i) {
    CacheRecord r;
    r.sample_id = recs[i].at("id").get<std::string>();
    const auto labels = recs[i].at("labels").get<std::vector<int>>();
    if (labels.size() != kNumCategories)
      throw std::runtime_error("load_cache: record has wrong label count");
    for (int j = 0; j < kNumCategories; ++j) r.y.bits[j] = static_cast<uint8_t>(labels[j]);
    char name[32];
    std::snprintf(name, sizeof(name), "rec%06zu.x", i);
    r.x = ar.get(name);
    cache.records.push_back(std::move(r));
  }
  return cache;
}

TrainResult train(const FeatureCache& data, const QueryMatrix& Q, DecoderParams& params,
                  const TrainConfig& cfg) {
  if (data.records.empty()) throw std::invalid_argument("train: empty dataset");
  if (params.frozen_for_inference)
    throw std::invalid_argument("train: params are frozen for inference");
  if (cfg.learning_rate <= 0) throw std::invalid_argument("train: learning_rate must be > 0");
  if (cfg.max_iterations < 1) throw std::invalid_argument("train: max_iterations must be >= 1");
  if (data.provenance.q_digest != 0 && data.provenance.q_digest != digest_f32(Q.tensor))
    throw std::invalid_argument("train: cache provenance mismatch (query matrix digest)");
  const bool features_level = data.level == CacheLevel::features;
  if (features_level && !cfg.freeze_w_v)
    throw std::invalid_argument("train: feature-level cache requires freeze_w_v");
  if (features_level && data.provenance.w_v_digest != 0 &&
      data.provenance.w_v_digest != digest_f32(params.W_V))
    throw std::invalid_argument("train: cache provenance mismatch (W_V digest)");
  for (const auto& r : data.records)
    if (!r.x.same_shape(data.records.front().x))
      throw std::invalid_argument("train: cache records have mismatched shapes");

  TrainResult result;
  {
    int pos = 0, neg = 0;
    for (const auto& r : data.records) (r.y.any() ? pos : neg)++;
    if (pos == 0 || neg == 0) {
      std::fprintf(stderr, "wukong: warning: training data contains a single class (%d+/%d-)\n",
                   pos, neg);
      result.warned_single_class = true;
    }
  }

  auto tensors = trainable_tensors(params, cfg.freeze_w_v);
  std::vector<Mat> m_state, v_state;
  for (auto& [name, t] : tensors) {
    m_state.emplace_back(t->rows, t->cols);
    v_state.emplace_back(t->rows, t->cols);
  }

  const int n = static_cast<int>(data.records.size());
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);

  long step = 0;
  for (int iter = 1; iter <= cfg.max_iterations; ++iter) {
    std::vector<std::pair<int, int>> chunks;  // [begin, end) into order
    if (cfg.batch_size <= 0 || cfg.batch_size >= n) {
      chunks.emplace_back(0, n);
    } else {
      // seeded Fisher-Yates, re-derived per iteration
      SplitMix64 shuf(derive_seed(cfg.seed, 0x1000 + static_cast<uint64_t>(iter)));
      for (int i = n - 1; i > 0; --i) {
        const int j = static_cast<int>(shuf.next() % static_cast<uint64_t>(i + 1));
        std::swap(order[i], order[j]);
      }
      for (int b = 0; b < n; b += cfg.batch_size)
        chunks.emplace_back(b, std::min(b + cfg.batch_size, n));
    }

    double loss_acc = 0.0;
    for (auto [lo, hi] : chunks) {
      std::vector<const CacheRecord*> batch;
      batch.reserve(hi - lo);
      for (int i = lo; i < hi; ++i) batch.push_back(&data.records[order[i]]);
      GradientSet gs = loss_gradients(params, &Q, batch, data.level, cfg.freeze_w_v);
      loss_acc += gs.mean_loss * (hi - lo);

      ++step;
      const double bc1 = 1.0 - std::pow(cfg.adam_beta1, static_cast<double>(step));
      const double bc2 = 1.0 - std::pow(cfg.adam_beta2, static_cast<double>(step));
      for (size_t ti = 0; ti < tensors.size(); ++ti) {
        const Mat* g = gs.find(tensors[ti].first);
        if (!g) throw std::logic_error("train: gradient missing for " + tensors[ti].first);
        Mat& theta = *tensors[ti].second;
        Mat& m = m_state[ti];
        Mat& v = v_state[ti];
        for (size_t k = 0; k < theta.a.size(); ++k) {
          m.a[k] = cfg.adam_beta1 * m.a[k] + (1.0 - cfg.adam_beta1) * g->a[k];
          v.a[k] = cfg.adam_beta2 * v.a[k] + (1.0 - cfg.adam_beta2) * g->a[k] * g->a[k];
          const double mhat = m.a[k] / bc1;
          const double vhat = v.a[k] / bc2;
          theta.a[k] -= cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.adam_eps);
        }
      }
    }
    result.loss_trace.push_back(loss_acc / n);
  }
  return result;
}

void save_loss_csv(const std::string& path, const std::vector<double>& trace) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("save_loss_csv: cannot open '" + path + "'");
  f << "iteration,mean_loss\n";
  for (size_t i = 0; i < trace.size(); ++i) f << (i + 1) << "," << trace[i] << "\n";
}

}  // namespace wukong
