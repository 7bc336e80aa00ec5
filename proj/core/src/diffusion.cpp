#include "wukong/diffusion.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace wukong {

DiffusionConfig::DiffusionConfig(int T, std::vector<double> beta, double guidance_scale, int d_eps,
                                 int d_tau, int d, int N, int M)
    : T_(T),
      beta_(std::move(beta)),
      guidance_scale_(guidance_scale),
      d_eps_(d_eps),
      d_tau_(d_tau),
      d_(d),
      N_(N),
      M_(M) {
  if (T_ < 1) throw std::invalid_argument("diffusion config: T must be >= 1");
  if (static_cast<int>(beta_.size()) != T_)
    throw std::invalid_argument("diffusion config: beta schedule length " +
                                std::to_string(beta_.size()) + " != T = " + std::to_string(T_));
  double prev = 0.0;
  for (int t = 0; t < T_; ++t) {
    if (!(beta_[t] > prev && beta_[t] < 1.0))
      throw std::invalid_argument(
          "diffusion config: beta schedule must be strictly increasing in (0,1), violated at t=" +
          std::to_string(t + 1));
    prev = beta_[t];
  }
  for (int v : {d_eps_, d_tau_, d_, N_, M_})
    if (v < 1) throw std::invalid_argument("diffusion config: all dims must be >= 1");
  grid_ = static_cast<int>(std::lround(std::sqrt(static_cast<double>(N_))));
  if (grid_ * grid_ != N_)
    throw std::invalid_argument("diffusion config: N = " + std::to_string(N_) +
                                " is not a perfect square");
  alpha_.resize(T_);
  alpha_bar_.resize(T_ + 1);
  alpha_bar_[0] = 1.0;
  for (int t = 0; t < T_; ++t) {
    alpha_[t] = 1.0 - beta_[t];
    alpha_bar_[t + 1] = alpha_bar_[t] * alpha_[t];
  }
}

double DiffusionConfig::beta(int t) const {
  if (t < 1 || t > T_) throw std::out_of_range("beta(t): t must be in [1, T]");
  return beta_[t - 1];
}

double DiffusionConfig::alpha(int t) const {
  if (t < 1 || t > T_) throw std::out_of_range("alpha(t): t must be in [1, T]");
  return alpha_[t - 1];
}

double DiffusionConfig::alpha_bar(int t) const {
  if (t < 0 || t > T_) throw std::out_of_range("alpha_bar(t): t must be in [0, T]");
  return alpha_bar_[t];
}

std::vector<double> linear_beta_schedule(int T, double beta_start, double beta_end) {
  if (T < 1) throw std::invalid_argument("linear_beta_schedule: T must be >= 1");
  std::vector<double> beta(T);
  if (T == 1) {
    beta[0] = beta_start;
    return beta;
  }
  for (int t = 0; t < T; ++t)
    beta[t] = beta_start + (beta_end - beta_start) * static_cast<double>(t) / (T - 1);
  return beta;
}

DiffusionConfig toy_diffusion_config() {
  return DiffusionConfig(50, linear_beta_schedule(50, 1e-4, 0.02), 7.5,
                         /*d_eps=*/16, /*d_tau=*/32, /*d=*/16, /*N=*/64, /*M=*/8);
}

LatentState init_latent(uint64_t seed, const DiffusionConfig& cfg) {
  NormalSampler g(seed);
  LatentState s;
  s.tensor = randn(cfg.N(), cfg.d_eps(), g);
  s.step = cfg.T();
  return s;
}

LatentState forward_diffuse(const LatentState& x0, int t, const DiffusionConfig& cfg,
                            uint64_t seed) {
  if (x0.step != 0) throw std::invalid_argument("forward_diffuse: input must be at step 0");
  require_shape(x0.tensor, cfg.N(), cfg.d_eps(), "forward_diffuse: x0");
  if (t < 0 || t > cfg.T())
    throw std::out_of_range("forward_diffuse: t = " + std::to_string(t) + " outside [0, T]");
  if (t == 0) return x0;
  const double ab = cfg.alpha_bar(t);
  const double mean_coef = std::sqrt(ab);
  const double noise_coef = std::sqrt(1.0 - ab);
  NormalSampler g(seed);
  LatentState out;
  out.step = t;
  out.tensor = Mat(x0.tensor.rows, x0.tensor.cols);
  for (size_t i = 0; i < out.tensor.a.size(); ++i)
    out.tensor.a[i] = mean_coef * x0.tensor.a[i] + noise_coef * g.next();
  return out;
}

Mat guided_noise(const Mat& eps_cond, const Mat& eps_uncond, double gamma) {
  if (!eps_cond.same_shape(eps_uncond))
    throw std::invalid_argument("guided_noise: shape mismatch");
  // gamma 0/1 short-circuits keep the algebraic identities bit-exact
  if (gamma == 0.0) return eps_uncond;
  if (gamma == 1.0) return eps_cond;
  Mat out = eps_uncond;
  for (size_t i = 0; i < out.a.size(); ++i)
    out.a[i] += gamma * (eps_cond.a[i] - eps_uncond.a[i]);
  return out;
}

double ddim_mean(double x, double eps, double beta_t, double alpha_bar_t) {
  const double alpha_t = 1.0 - beta_t;
  return (x - beta_t / std::sqrt(1.0 - alpha_bar_t) * eps) / std::sqrt(alpha_t);
}

LatentState scheduler_step(const Mat& noise_prediction, int t, const LatentState& x_t,
                           const DiffusionConfig& cfg) {
  if (t < 1) throw std::invalid_argument("scheduler_step: t must be >= 1");
  if (t != x_t.step)
    throw std::invalid_argument("scheduler_step: t = " + std::to_string(t) +
                                " inconsistent with latent step " + std::to_string(x_t.step));
  if (t > cfg.T()) throw std::out_of_range("scheduler_step: t > T");
  if (!noise_prediction.same_shape(x_t.tensor))
    throw std::invalid_argument("scheduler_step: noise prediction shape mismatch");

  const double beta_t = cfg.beta(t);
  const double alpha_t = cfg.alpha(t);
  const double ab_t = cfg.alpha_bar(t);
  const double c = beta_t / std::sqrt(1.0 - ab_t);
  const double inv_sqrt_alpha = 1.0 / std::sqrt(alpha_t);

  LatentState out;
  out.step = t - 1;
  out.tensor = Mat(x_t.tensor.rows, x_t.tensor.cols);
  for (size_t i = 0; i < out.tensor.a.size(); ++i)
    out.tensor.a[i] = (x_t.tensor.a[i] - c * noise_prediction.a[i]) * inv_sqrt_alpha;
  return out;
}

}  // namespace wukong
