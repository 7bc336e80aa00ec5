#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "wukong/classifier.hpp"
#include "wukong/query_bank.hpp"

namespace wukong {

// Per-category binary labels.
struct LabelVector {
  std::array<uint8_t, kNumCategories> bits{};

  int any() const {
    for (auto b : bits)
      if (b) return 1;
    return 0;
  }
};

// Summed per-category binary cross-entropy. Probabilities are clamped into
// [1e-7, 1 - 1e-7] before the logs, so the loss is finite and nonnegative.
double bce_loss(const Prediction& y_hat, const LabelVector& y);

// Single-term BCE on one probability; the no_cat training objective uses it
// against the any-category bit.
double bce_loss_binary(double p, int y);

enum class CacheLevel { phi, features };

struct CacheRecord {
  std::string sample_id;
  Mat x;  // phi (N x d_eps) at CacheLevel::phi, F (7 x d_eps) at features
  LabelVector y;
};

struct CacheProvenance {
  std::string backbone_id;
  int t_c = 0;
  uint64_t q_digest = 0;
  uint64_t w_v_digest = 0;  // set at features level (F depends on W_V)
};

struct FeatureCache {
  CacheLevel level = CacheLevel::phi;
  std::vector<CacheRecord> records;
  CacheProvenance provenance;
};

struct TrainConfig {
  double learning_rate = 1e-3;
  int max_iterations = 50;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  int batch_size = 0;  // <= 0: full batch; otherwise one iteration = one epoch
  uint64_t seed = 0;
  bool freeze_w_v = false;
};

// Gradients of the mean batch loss, keyed like trainable_tensors(). Frozen
// tensors (frozen_W_K, Q) have no entry at all.
struct GradientSet {
  double mean_loss = 0.0;
  std::vector<std::pair<std::string, Mat>> grads;

  const Mat* find(const std::string& name) const;
  bool contains(const std::string& name) const { return find(name) != nullptr; }
};

// Exact analytic gradients via backpropagation through the decoder. Batch
// items must match the stated level. Errors on non-finite intermediates,
// naming the layer.
GradientSet loss_gradients(const DecoderParams& params, const QueryMatrix* Q,
                           const std::vector<const CacheRecord*>& batch, CacheLevel level,
                           bool freeze_w_v);

// Runs the shared denoise-and-tap path for every (prompt, seed, y) and
// stores phi (default) or F. F-level caches are only valid while W_V stays
// at the value recorded in the provenance digest.
struct TrainingExample {
  std::string prompt;
  uint64_t seed = 0;
  LabelVector y;
};

FeatureCache precompute_features(const std::vector<TrainingExample>& data,
                                 const ToyBackbone& backbone, const QueryMatrix& Q,
                                 const DecoderParams& params, int t_c,
                                 CacheLevel level = CacheLevel::phi, int threads = 1);

// Cache round-trip: tensors in a TensorArchive (f32), bookkeeping in a JSON
// manifest.
void save_cache(const FeatureCache& cache, const std::string& archive_path,
                const std::string& manifest_path);
FeatureCache load_cache(const std::string& archive_path, const std::string& manifest_path);

struct TrainResult {
  std::vector<double> loss_trace;  // mean loss per iteration, pre-update
  bool warned_single_class = false;
};

// Adam over the trainable subset; deterministic given (data, config, seed).
// Validates cache provenance against Q (and W_V at features level) and
// rejects params already frozen for inference.
TrainResult train(const FeatureCache& data, const QueryMatrix& Q, DecoderParams& params,
                  const TrainConfig& cfg);

void save_loss_csv(const std::string& path, const std::vector<double>& trace);

}  // namespace wukong
