#pragma once

#include <cstdint>
#include <vector>

#include "wukong/tensor.hpp"

namespace wukong {

// Denoising-process configuration. Validates the variance schedule
// (0 < beta_1 < ... < beta_T < 1) and caches alpha_t = 1 - beta_t and
// alpha_bar_t = prod_{i<=t} alpha_i, with alpha_bar(0) = 1 by the empty
// product. alpha_bar is strictly decreasing.
class DiffusionConfig {
 public:
  DiffusionConfig(int T, std::vector<double> beta, double guidance_scale, int d_eps, int d_tau,
                  int d, int N, int M);

  int T() const { return T_; }
  double guidance_scale() const { return guidance_scale_; }
  int d_eps() const { return d_eps_; }
  int d_tau() const { return d_tau_; }
  int d() const { return d_; }
  int N() const { return N_; }
  int M() const { return M_; }
  int grid() const { return grid_; }  // sqrt(N)

  double beta(int t) const;       // t in [1, T]
  double alpha(int t) const;      // t in [1, T]
  double alpha_bar(int t) const;  // t in [0, T]

 private:
  int T_;
  std::vector<double> beta_;
  double guidance_scale_;
  int d_eps_, d_tau_, d_, N_, M_, grid_;
  std::vector<double> alpha_;
  std::vector<double> alpha_bar_;  // index t, alpha_bar_[0] = 1
};

std::vector<double> linear_beta_schedule(int T, double beta_start, double beta_end);

// Desk-scale defaults: T=50, N=64, d_eps=16, d_tau=32, d=16, M=8,
// guidance 7.5, linear beta 1e-4..0.02.
DiffusionConfig toy_diffusion_config();

// Latent x_t together with its step index t in [0, T].
struct LatentState {
  Mat tensor;  // N x d_eps
  int step = 0;
};

// x_T ~ N(0, I), filled row-major from NormalSampler(seed).
LatentState init_latent(uint64_t seed, const DiffusionConfig& cfg);

// Closed-form forward marginal: sqrt(alpha_bar_t) x_0 + sqrt(1-alpha_bar_t) eps.
// t = 0 returns x_0 bit-identically.
LatentState forward_diffuse(const LatentState& x0, int t, const DiffusionConfig& cfg,
                            uint64_t seed);

// Classifier-free guidance blend: eps_uncond + gamma * (eps_cond - eps_uncond).
Mat guided_noise(const Mat& eps_cond, const Mat& eps_uncond, double gamma);

// Posterior mean of one reverse step on a single value:
//   (x - beta_t / sqrt(1 - alpha_bar_t) * eps) / sqrt(1 - beta_t)
double ddim_mean(double x, double eps, double beta_t, double alpha_bar_t);

// Deterministic (zero-variance) reverse update x_{t-1} from x_t. Requires
// t == x_t.step and t >= 1; decrements the step.
LatentState scheduler_step(const Mat& noise_prediction, int t, const LatentState& x_t,
                           const DiffusionConfig& cfg);

}  // namespace wukong
