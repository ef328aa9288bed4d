#pragma once

#include <functional>

#include "core/rng.hpp"
#include "core/tensor.hpp"

namespace dpa {

// K-step diffusion coefficients. beta is linear; alpha_bar the cumulative
// product of (1 - beta). The reverse-step coefficients are exposed under the
// names used by the update x_k = a_k * (x_{k+1} - l_k * eps + N(0, s_k^2 I)):
// step_alpha (a_k), step_lambda (l_k), step_sigma (s_k). step_sigma(0) == 0,
// so the last reverse step is deterministic.
class NoiseSchedule {
 public:
  static NoiseSchedule linear(int steps = 100, double beta_start = 1e-4,
                              double beta_end = 2e-2);

  int K() const { return static_cast<int>(beta_.size()); }
  double beta(int k) const { return beta_.at(k); }
  double alpha(int k) const { return 1.0 - beta_.at(k); }
  double alpha_bar(int k) const { return alpha_bar_.at(k); }
  double step_alpha(int k) const { return step_alpha_.at(k); }
  double step_lambda(int k) const { return step_lambda_.at(k); }
  double step_sigma(int k) const { return step_sigma_.at(k); }

 private:
  std::vector<double> beta_, alpha_bar_, step_alpha_, step_lambda_, step_sigma_;
};

// Noise-prediction interface: output has the shape of x_k; deterministic
// given (x_k, k, cond, parameters).
class Denoiser {
 public:
  virtual ~Denoiser() = default;
  virtual Tensor predict(const Tensor& x_k, int k, const Tensor& cond) const = 0;
};

// q-sample: sqrt(abar_k) * x0 + sqrt(1 - abar_k) * eps. With literal_unscaled
// the scaling is dropped and the result is x0 + eps.
Tensor forward_sample(const NoiseSchedule& sched, const Tensor& x0, int k,
                      const Tensor& eps, bool literal_unscaled = false);

// One reverse step: consumes x at noise level k, emits level k-1 (k == 0
// emits the sample). Stochastic unless step_sigma(k) == 0.
Tensor ddpm_step(const NoiseSchedule& sched, const Tensor& x_next, int k,
                 const Denoiser& denoiser, const Tensor& cond, Rng& rng);

// Deterministic DDIM (eta = 0) update between schedule levels. k_to == -1
// returns the plain x0 prediction (terminal projection).
Tensor ddim_step(const NoiseSchedule& sched, const Tensor& x_next, int k_from,
                 int k_to, const Denoiser& denoiser, const Tensor& cond);

// x0 prediction at level k: (x - sqrt(1-abar_k) * eps) / sqrt(abar_k).
Tensor predict_x0(const NoiseSchedule& sched, const Tensor& x_k, int k,
                  const Tensor& eps_hat);

enum class SamplerKind { Ddpm, Ddim };

struct SamplerConfig {
  SamplerKind kind = SamplerKind::Ddim;
  int ddim_steps = 8;
};

// The DDIM level sequence for an n-call chain: n descending levels ending at
// 0; the final transition is the terminal projection to the sample.
std::vector<int> ddim_timesteps(int K, int n);

// Full reverse chain from x_K ~ N(0, I) to the sample.
Tensor sample_loop(const NoiseSchedule& sched, const Denoiser& denoiser,
                   const Tensor& cond, const std::vector<int>& shape,
                   const SamplerConfig& sampler, Rng& rng);

// Draws k ~ U[0,K), eps ~ N(0,I); returns mse(predict(q_sample, k, cond), eps).
Tensor denoising_loss(const NoiseSchedule& sched, const Denoiser& denoiser,
                      const Tensor& x0, const Tensor& cond, Rng& rng);

}  // namespace dpa
