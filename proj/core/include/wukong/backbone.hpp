#pragma once

#include <cstdint>
#include <string>

#include "wukong/archive.hpp"
#include "wukong/diffusion.hpp"
#include "wukong/image.hpp"
#include "wukong/tensor.hpp"

namespace wukong {

// Encoded prompt tau(s): M x d_tau, deterministic in source_text.
struct TextEmbedding {
  Mat tensor;
  std::string source_text;
};

// Cross-attention projections lifted from a checkpoint; immutable once
// extracted. W_VC is carried for completeness but unused by the detector.
struct FrozenProjections {
  Mat W_QC;  // d x d_eps
  Mat W_KC;  // d x d_tau
  Mat W_VC;  // d x d_tau
  std::string layer_id;
};

// phi(x_{T-T_C}): the N x d_eps token grid tapped before the final
// upsample cross-attention layer.
using IntermediateFeatures = Mat;

// Deterministic desk-scale stand-in for a diffusion U-Net + text encoder.
// Every weight derives from one 64-bit seed via named splitmix64
// sub-streams, so two backbones with equal (config, seed) are bit-identical.
//
// Architecture (fixed, not a fidelity claim):
//   encode_text  whitespace tokens -> fnv1a64 hash into a 4096-row embedding
//                table, plus a per-position vector; row V is the padding
//                embedding. Prompts longer than M tokens are rejected.
//   unet_prefix  h_n = x_n + step_sinusoid(t) + gate_n * gain * readout(mean
//                text token); the gate is a fixed seeded zero-mean per-token
//                vector, so prompts steer token regions unevenly instead of
//                shifting the whole grid. Then two token-mixing layers: 3x3
//                toroidal convolution over the sqrt(N) x sqrt(N) token grid
//                (one shared kernel), channel affine, tanh.
//   unet_suffix  one affine layer over phi (t, s unused).
//   decode       channel-mean per token, min-max to [0,255] on the
//                sqrt(N) x sqrt(N) grid; constant latents map to mid-gray.
class ToyBackbone {
 public:
  static constexpr int kVocab = 4096;
  static constexpr const char* kDefaultLayerId = "up.final.cross_attn";
  static constexpr double kDefaultTextGain = 1.0;  // readout at the latent's unit scale

  ToyBackbone(DiffusionConfig cfg, uint64_t seed, double text_gain = kDefaultTextGain);

  // Weight import: any process that emits the archive entries listed in
  // export_archive() can drive the pipeline with its own checkpoint.
  static ToyBackbone from_archive(DiffusionConfig cfg, const TensorArchive& ar);

  const DiffusionConfig& cfg() const { return cfg_; }
  double text_gain() const { return text_gain_; }

  // Stable content id ("toy:<hex>"): digest of the exported archive.
  const std::string& id() const { return id_; }

  TextEmbedding encode_text(const std::string& prompt) const;
  IntermediateFeatures unet_prefix(const LatentState& x, int t, const TextEmbedding& s) const;
  Mat unet_suffix(const IntermediateFeatures& phi, int t, const TextEmbedding& s) const;

  // Composition suffix(prefix(x,t,s),t,s); the full per-step predictor.
  Mat predict_noise(const LatentState& x, int t, const TextEmbedding& s) const;

  Image decode(const LatentState& x0) const;

  FrozenProjections frozen_projections() const;

  TensorArchive export_archive() const;

 private:
  struct RawTag {};
  ToyBackbone(DiffusionConfig cfg, double text_gain, RawTag);  // weights filled by caller
  void compute_id();

  DiffusionConfig cfg_;
  double text_gain_;
  Mat embed_;         // (kVocab+1) x d_tau, last row = padding
  Mat pos_;           // M x d_tau
  Mat text_readout_;  // d_eps x d_tau
  Mat text_gate_;     // N x 1, zero mean
  Mat kern1_, kern2_;  // 3 x 3 token-mixing kernels
  Mat mix1_W_, mix2_W_;  // d_eps x d_eps
  Mat mix1_b_, mix2_b_;  // 1 x d_eps
  Mat suffix_W_;         // d_eps x d_eps
  Mat suffix_b_;         // 1 x d_eps
  Mat wqc_, wkc_, wvc_;  // frozen cross-attention projections
  std::string id_;
};

// Pulls <layer_id>.W_QC/.W_KC/.W_VC out of an archive, validating shapes
// against the config. The result is a deep copy; later archive mutation
// cannot touch it.
FrozenProjections extract_frozen_projections(const TensorArchive& ar, const std::string& layer_id,
                                             const DiffusionConfig& cfg);

// T_C - 1 full denoising steps from init_latent(seed), then the prefix at
// step t_c: phi(x_{T - T_C}). The single feature path shared by training,
// evaluation and the guard.
IntermediateFeatures tap_features(const ToyBackbone& backbone, const std::string& prompt,
                                  uint64_t seed, int t_c);

// Full T-step generation (no guard) plus decode.
Image generate_image(const ToyBackbone& backbone, const std::string& prompt, uint64_t seed);

}  // namespace wukong
