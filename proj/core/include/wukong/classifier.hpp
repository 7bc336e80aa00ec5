#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "wukong/archive.hpp"
#include "wukong/backbone.hpp"
#include "wukong/diffusion.hpp"
#include "wukong/query_bank.hpp"
#include "wukong/tensor.hpp"

namespace wukong {

// Ablation variants:
//   full    cross-attention + LN/FFN/LN + per-category head
//   no_att  mean of V rows broadcast to 7 rows instead of attention
//   no_ffn  head applied directly to F, LN/FFN/LN skipped
//   no_cat  single binary head over the flattened F'; scalar replicated
enum class Variant { full, no_att, no_ffn, no_cat };

std::string variant_name(Variant v);
Variant variant_from_name(const std::string& name);

// Exact GELU and its derivative (erf form).
double gelu(double x);
double gelu_grad(double x);

// Per-category probabilities, each strictly inside (0,1).
struct Prediction {
  std::array<double, kNumCategories> y{};

  double max() const {
    double m = y[0];
    for (double v : y) m = m > v ? m : v;
    return m;
  }
};

// Decoder parameters. frozen_W_K (= W_QC from the checkpoint) is never
// updated; everything else is trainable subject to the variant and the
// freeze_w_v switch.
struct DecoderParams {
  Variant variant = Variant::full;
  int heads = 1;
  int d_eps = 0, d = 0, d_ff = 0, d_h = 0;

  Mat W_V;                                       // d_eps x d_eps
  Mat ln1_gain, ln1_bias, ln2_gain, ln2_bias;    // 1 x d_eps
  Mat ffn_W1, ffn_b1, ffn_W2, ffn_b2;            // d_ff x d_eps, 1 x d_ff, d_eps x d_ff, 1 x d_eps
  Mat head_W1, head_b1, head_w2, head_b2;        // d_h x d_eps, 1 x d_h, 1 x d_h, 1 x 1
  Mat cat_w, cat_b;                              // 1 x (7*d_eps), 1 x 1

  Mat frozen_W_K;                                // d x d_eps, bitwise constant
  bool frozen_for_inference = false;
};

// Seeded initialization. d_ff defaults to 4*d_eps, d_h to d_eps. heads must
// divide both d and d_eps.
DecoderParams init_decoder(const DiffusionConfig& cfg, const FrozenProjections& frozen,
                           Variant variant, int heads, uint64_t seed, int d_ff = 0, int d_h = 0);

// Finalizes params for concurrent inference; training rejects frozen params.
void freeze_for_inference(DecoderParams& params);

// Trainable tensors by canonical name, in a fixed order. The set depends on
// the variant (no_ffn drops LN/FFN, no_cat swaps the head) and on
// freeze_w_v. frozen_W_K is never in the list.
std::vector<std::pair<std::string, Mat*>> trainable_tensors(DecoderParams& params,
                                                            bool freeze_w_v);

// K = phi * W_K^T (frozen, no gradient path), V = phi * W_V^T (trainable).
std::pair<Mat, Mat> project_kv(const Mat& phi, const DecoderParams& params);

// Multi-head scaled dot-product attention with per-row max-subtracted
// softmax. Columns are split into `heads` slices; per head the scale is
// sqrt(d/heads); outputs concatenate to 7 x d_eps.
Mat attend(const Mat& Q, const Mat& K, const Mat& V, int heads);

// LN -> FFN -> LN then the per-row MLP head and sigmoid, per the variant.
Prediction head_forward(const Mat& F, const DecoderParams& params);

// project_kv -> attend -> head_forward (no_att replaces attention with the
// row mean of V).
Prediction classify(const Mat& phi, const QueryMatrix& Q, const DecoderParams& params);

// Softmax row of the chosen category's query over all N keys, reshaped
// row-major to sqrt(N) x sqrt(N). Errors when N is not a perfect square.
Mat attention_map(const QueryMatrix& Q, const Mat& K, int category_index);

// Forward pass bookkeeping for backpropagation (see trainer).
struct ClassifyTape {
  bool from_phi = false;
  Mat phi;                   // input when from_phi
  std::vector<Mat> A_heads;  // per-head attention weights, 7 x N
  Mat V;                     // N x d_eps
  Mat F;                     // 7 x d_eps
  // LN1 / FFN / LN2 intermediates (empty for no_ffn)
  Mat xhat1, X1, H, G, Y, xhat2, Fp;
  std::vector<double> inv_std1, inv_std2;  // per row
  // head intermediates
  Mat h1, u;                    // 7 x d_h
  std::array<double, kNumCategories> logits{};
  double cat_logit = 0.0;
  Prediction pred;
};

// Shared forward used by classify/head_forward and the trainer. When
// input_is_features, `input` is F (7 x d_eps) and Q may be null; otherwise
// `input` is phi (N x d_eps).
Prediction classify_forward(const Mat& input, bool input_is_features, const QueryMatrix* Q,
                            const DecoderParams& params, ClassifyTape* tape);

// Archive round-trip with canonical decoder.* names; variant and head count
// ride in the JSON header.
TensorArchive save_decoder(const DecoderParams& params);
DecoderParams load_decoder(const TensorArchive& ar);

}  // namespace wukong
