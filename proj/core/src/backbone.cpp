#include "wukong/backbone.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

namespace wukong {

namespace {

// Weight sub-stream tags; part of the documented seeding scheme.
enum Stream : uint64_t {
  kEmbed = 1,
  kPos = 2,
  kReadout = 3,
  kPrefix1 = 4,
  kPrefix2 = 5,
  kSuffix = 6,
  kWqc = 7,
  kWkc = 8,
  kWvc = 9,
  kGate = 10,
};

std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream ss(text);
  std::string tok;
  while (ss >> tok) out.push_back(tok);
  return out;
}

// 3x3 toroidal convolution over the g x g token grid, one shared kernel
// applied to every channel.
Mat conv3x3_torus(const Mat& H, const Mat& kern, int g) {
  Mat out(H.rows, H.cols);
  for (int r = 0; r < g; ++r) {
    for (int c = 0; c < g; ++c) {
      double* dst = out.row_ptr(r * g + c);
      for (int dr = -1; dr <= 1; ++dr) {
        const int rr = (r + dr + g) % g;
        for (int dc = -1; dc <= 1; ++dc) {
          const int cc = (c + dc + g) % g;
          const double k = kern(dr + 1, dc + 1);
          const double* src = H.row_ptr(rr * g + cc);
          for (int ch = 0; ch < H.cols; ++ch) dst[ch] += k * src[ch];
        }
      }
    }
  }
  return out;
}

Mat mixing_layer(const Mat& H, const Mat& kern, const Mat& W, const Mat& b, int g) {
  Mat Z = matmul_nt(conv3x3_torus(H, kern, g), W);
  for (int i = 0; i < Z.rows; ++i) {
    double* r = Z.row_ptr(i);
    for (int j = 0; j < Z.cols; ++j) r[j] = std::tanh(r[j] + b(0, j));
  }
  return Z;
}

std::vector<double> step_sinusoid(int t, int dim) {
  std::vector<double> e(dim, 0.0);
  for (int k = 0; 2 * k < dim; ++k) {
    const double freq = std::pow(10000.0, -2.0 * k / dim);
    e[2 * k] = std::sin(t * freq);
    if (2 * k + 1 < dim) e[2 * k + 1] = std::cos(t * freq);
  }
  return e;
}

std::string format_gain(double g) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", g);
  return buf;
}

}  // namespace

ToyBackbone::ToyBackbone(DiffusionConfig cfg, double text_gain, RawTag)
    : cfg_(std::move(cfg)), text_gain_(text_gain) {}

ToyBackbone::ToyBackbone(DiffusionConfig cfg, uint64_t seed, double text_gain)
    : cfg_(std::move(cfg)), text_gain_(text_gain) {
  const int de = cfg_.d_eps(), dt = cfg_.d_tau(), d = cfg_.d(), M = cfg_.M();
  auto stream = [&](uint64_t tag) { return NormalSampler(derive_seed(seed, tag)); };

  {
    NormalSampler g = stream(kEmbed);
    embed_ = randn(kVocab + 1, dt, g);
  }
  {
    NormalSampler g = stream(kPos);
    pos_ = randn(M, dt, g);
  }
  {
    NormalSampler g = stream(kReadout);
    text_readout_ = randn(de, dt, g, 1.0 / std::sqrt(static_cast<double>(dt)));
  }
  {
    NormalSampler g = stream(kGate);
    text_gate_ = randn(cfg_.N(), 1, g);
    double mean = 0.0;
    for (double v : text_gate_.a) mean += v;
    mean /= cfg_.N();
    for (double& v : text_gate_.a) v -= mean;
  }
  {
    NormalSampler g = stream(kPrefix1);
    kern1_ = randn(3, 3, g, 1.0 / 3.0);
    mix1_W_ = randn(de, de, g, 1.0 / std::sqrt(static_cast<double>(de)));
    mix1_b_ = randn(1, de, g, 0.1);
  }
  {
    NormalSampler g = stream(kPrefix2);
    kern2_ = randn(3, 3, g, 1.0 / 3.0);
    mix2_W_ = randn(de, de, g, 1.0 / std::sqrt(static_cast<double>(de)));
    mix2_b_ = randn(1, de, g, 0.1);
  }
  {
    NormalSampler g = stream(kSuffix);
    suffix_W_ = randn(de, de, g, 1.0 / std::sqrt(static_cast<double>(de)));
    suffix_b_ = randn(1, de, g, 0.1);
  }
  {
    NormalSampler g = stream(kWqc);
    wqc_ = randn(d, de, g, 1.0 / std::sqrt(static_cast<double>(de)));
  }
  {
    NormalSampler g = stream(kWkc);
    wkc_ = randn(d, dt, g, 1.0 / std::sqrt(static_cast<double>(dt)));
  }
  {
    NormalSampler g = stream(kWvc);
    wvc_ = randn(d, dt, g, 1.0 / std::sqrt(static_cast<double>(dt)));
  }
  compute_id();
}

ToyBackbone ToyBackbone::from_archive(DiffusionConfig cfg, const TensorArchive& ar) {
  double gain = kDefaultTextGain;
  if (ar.contains_meta("toy.text_gain")) gain = std::stod(ar.get_meta("toy.text_gain"));
  ToyBackbone b(std::move(cfg), gain, RawTag{});
  const int de = b.cfg_.d_eps(), dt = b.cfg_.d_tau(), d = b.cfg_.d(), M = b.cfg_.M();

  b.embed_ = ar.get("toy.embed");
  require_shape(b.embed_, kVocab + 1, dt, "toy.embed");
  b.pos_ = ar.get("toy.pos");
  require_shape(b.pos_, M, dt, "toy.pos");
  b.text_readout_ = ar.get("toy.text_readout");
  require_shape(b.text_readout_, de, dt, "toy.text_readout");
  b.text_gate_ = ar.get("toy.text_gate");
  require_shape(b.text_gate_, b.cfg_.N(), 1, "toy.text_gate");
  b.kern1_ = ar.get("toy.prefix1.kernel");
  require_shape(b.kern1_, 3, 3, "toy.prefix1.kernel");
  b.mix1_W_ = ar.get("toy.prefix1.W");
  require_shape(b.mix1_W_, de, de, "toy.prefix1.W");
  b.mix1_b_ = ar.get("toy.prefix1.b");
  require_shape(b.mix1_b_, 1, de, "toy.prefix1.b");
  b.kern2_ = ar.get("toy.prefix2.kernel");
  require_shape(b.kern2_, 3, 3, "toy.prefix2.kernel");
  b.mix2_W_ = ar.get("toy.prefix2.W");
  require_shape(b.mix2_W_, de, de, "toy.prefix2.W");
  b.mix2_b_ = ar.get("toy.prefix2.b");
  require_shape(b.mix2_b_, 1, de, "toy.prefix2.b");
  b.suffix_W_ = ar.get("toy.suffix.W");
  require_shape(b.suffix_W_, de, de, "toy.suffix.W");
  b.suffix_b_ = ar.get("toy.suffix.b");
  require_shape(b.suffix_b_, 1, de, "toy.suffix.b");
  const std::string lid = kDefaultLayerId;
  b.wqc_ = ar.get(lid + ".W_QC");
  require_shape(b.wqc_, d, de, lid + ".W_QC");
  b.wkc_ = ar.get(lid + ".W_KC");
  require_shape(b.wkc_, d, dt, lid + ".W_KC");
  b.wvc_ = ar.get(lid + ".W_VC");
  require_shape(b.wvc_, d, dt, lid + ".W_VC");
  b.compute_id();
  return b;
}

void ToyBackbone::compute_id() {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(export_archive().digest()));
  id_ = std::string("toy:") + buf;
}

TextEmbedding ToyBackbone::encode_text(const std::string& prompt) const {
  const auto tokens = tokenize(prompt);
  if (static_cast<int>(tokens.size()) > cfg_.M())
    throw std::invalid_argument("encode_text: prompt tokenizes to " +
                                std::to_string(tokens.size()) + " tokens, max M = " +
                                std::to_string(cfg_.M()));
  TextEmbedding e;
  e.source_text = prompt;
  e.tensor = Mat(cfg_.M(), cfg_.d_tau());
  for (int i = 0; i < cfg_.M(); ++i) {
    int row = kVocab;  // padding
    if (i < static_cast<int>(tokens.size()))
      row = static_cast<int>(fnv1a64(tokens[i].data(), tokens[i].size()) %
                             static_cast<uint64_t>(kVocab));
    const double* emb = embed_.row_ptr(row);
    const double* p = pos_.row_ptr(i);
    double* dst = e.tensor.row_ptr(i);
    for (int j = 0; j < cfg_.d_tau(); ++j) dst[j] = emb[j] + p[j];
  }
  return e;
}

IntermediateFeatures ToyBackbone::unet_prefix(const LatentState& x, int t,
                                              const TextEmbedding& s) const {
  if (t < 1 || t > cfg_.T())
    throw std::invalid_argument("unet_prefix: t = " + std::to_string(t) + " outside [1, T]");
  if (x.step + t != cfg_.T() + 1)
    throw std::invalid_argument("unet_prefix: latent step " + std::to_string(x.step) +
                                " inconsistent with denoising iteration " + std::to_string(t));
  require_shape(x.tensor, cfg_.N(), cfg_.d_eps(), "unet_prefix: x");
  require_shape(s.tensor, cfg_.M(), cfg_.d_tau(), "unet_prefix: s");

  const int de = cfg_.d_eps();
  const auto se = step_sinusoid(t, de);
  const auto mean_tok = col_mean(s.tensor);
  std::vector<double> readout(de);
  for (int j = 0; j < de; ++j) {
    double acc = 0.0;
    const double* w = text_readout_.row_ptr(j);
    for (int k = 0; k < cfg_.d_tau(); ++k) acc += w[k] * mean_tok[k];
    readout[j] = text_gain_ * acc;
  }

  Mat h = x.tensor;
  for (int i = 0; i < h.rows; ++i) {
    double* r = h.row_ptr(i);
    const double gate = text_gate_(i, 0);
    for (int j = 0; j < de; ++j) r[j] += se[j] + gate * readout[j];
  }
  h = mixing_layer(h, kern1_, mix1_W_, mix1_b_, cfg_.grid());
  h = mixing_layer(h, kern2_, mix2_W_, mix2_b_, cfg_.grid());
  return h;
}

Mat ToyBackbone::unet_suffix(const IntermediateFeatures& phi, int /*t*/,
                             const TextEmbedding& /*s*/) const {
  require_shape(phi, cfg_.N(), cfg_.d_eps(), "unet_suffix: phi");
  Mat eps = matmul_nt(phi, suffix_W_);
  for (int i = 0; i < eps.rows; ++i) {
    double* r = eps.row_ptr(i);
    for (int j = 0; j < eps.cols; ++j) r[j] += suffix_b_(0, j);
  }
  return eps;
}

Mat ToyBackbone::predict_noise(const LatentState& x, int t, const TextEmbedding& s) const {
  return unet_suffix(unet_prefix(x, t, s), t, s);
}

Image ToyBackbone::decode(const LatentState& x0) const {
  if (x0.step != 0)
    throw std::invalid_argument("decode: latent at step " + std::to_string(x0.step) +
                                ", expected 0");
  require_shape(x0.tensor, cfg_.N(), cfg_.d_eps(), "decode: x0");
  const int g = cfg_.grid();
  std::vector<double> vals(cfg_.N());
  for (int i = 0; i < cfg_.N(); ++i) {
    double acc = 0.0;
    const double* r = x0.tensor.row_ptr(i);
    for (int j = 0; j < cfg_.d_eps(); ++j) acc += r[j];
    vals[i] = acc / cfg_.d_eps();
  }
  double lo = vals[0], hi = vals[0];
  for (double v : vals) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  Image img;
  img.width = g;
  img.height = g;
  img.pixels.resize(static_cast<size_t>(cfg_.N()));
  if (hi == lo) {
    std::fill(img.pixels.begin(), img.pixels.end(), static_cast<uint8_t>(128));
    return img;
  }
  for (int i = 0; i < cfg_.N(); ++i)
    img.pixels[i] = static_cast<uint8_t>(std::lround((vals[i] - lo) / (hi - lo) * 255.0));
  return img;
}

FrozenProjections ToyBackbone::frozen_projections() const {
  return FrozenProjections{wqc_, wkc_, wvc_, kDefaultLayerId};
}

TensorArchive ToyBackbone::export_archive() const {
  TensorArchive ar;
  ar.put("toy.embed", embed_);
  ar.put("toy.pos", pos_);
  ar.put("toy.text_readout", text_readout_);
  ar.put("toy.text_gate", text_gate_);
  ar.put("toy.prefix1.kernel", kern1_);
  ar.put("toy.prefix1.W", mix1_W_);
  ar.put("toy.prefix1.b", mix1_b_);
  ar.put("toy.prefix2.kernel", kern2_);
  ar.put("toy.prefix2.W", mix2_W_);
  ar.put("toy.prefix2.b", mix2_b_);
  ar.put("toy.suffix.W", suffix_W_);
  ar.put("toy.suffix.b", suffix_b_);
  const std::string lid = kDefaultLayerId;
  ar.put(lid + ".W_QC", wqc_);
  ar.put(lid + ".W_KC", wkc_);
  ar.put(lid + ".W_VC", wvc_);
  ar.put_meta("toy.text_gain", format_gain(text_gain_));
  return ar;
}

FrozenProjections extract_frozen_projections(const TensorArchive& ar, const std::string& layer_id,
                                             const DiffusionConfig& cfg) {
  FrozenProjections fp;
  fp.layer_id = layer_id;
  fp.W_QC = ar.get(layer_id + ".W_QC");
  require_shape(fp.W_QC, cfg.d(), cfg.d_eps(), layer_id + ".W_QC");
  fp.W_KC = ar.get(layer_id + ".W_KC");
  require_shape(fp.W_KC, cfg.d(), cfg.d_tau(), layer_id + ".W_KC");
  fp.W_VC = ar.get(layer_id + ".W_VC");
  require_shape(fp.W_VC, cfg.d(), cfg.d_tau(), layer_id + ".W_VC");
  return fp;
}

IntermediateFeatures tap_features(const ToyBackbone& backbone, const std::string& prompt,
                                  uint64_t seed, int t_c) {
  const auto& cfg = backbone.cfg();
  if (t_c < 1 || t_c > cfg.T())
    throw std::invalid_argument("tap_features: T_C = " + std::to_string(t_c) + " outside [1, T]");
  const TextEmbedding s = backbone.encode_text(prompt);
  LatentState x = init_latent(seed, cfg);
  for (int t = 1; t < t_c; ++t) {
    const Mat phi = backbone.unet_prefix(x, t, s);
    const Mat eps = backbone.unet_suffix(phi, t, s);
    x = scheduler_step(eps, x.step, x, cfg);
  }
  return backbone.unet_prefix(x, t_c, s);
}

Image generate_image(const ToyBackbone& backbone, const std::string& prompt, uint64_t seed) {
  const auto& cfg = backbone.cfg();
  const TextEmbedding s = backbone.encode_text(prompt);
  LatentState x = init_latent(seed, cfg);
  for (int t = 1; t <= cfg.T(); ++t) {
    const Mat phi = backbone.unet_prefix(x, t, s);
    const Mat eps = backbone.unet_suffix(phi, t, s);
    x = scheduler_step(eps, x.step, x, cfg);
  }
  return backbone.decode(x);
}

}  // namespace wukong
