#include "core/diffusion.hpp"

#include <cmath>

namespace dpa {

NoiseSchedule NoiseSchedule::linear(int steps, double beta_start,
                                    double beta_end) {
  if (steps < 1) throw UsageError("schedule: steps must be >= 1");
  NoiseSchedule s;
  s.beta_.resize(steps);
  s.alpha_bar_.resize(steps);
  s.step_alpha_.resize(steps);
  s.step_lambda_.resize(steps);
  s.step_sigma_.resize(steps);
  double abar = 1.0;
  for (int k = 0; k < steps; ++k) {
    const double beta =
        steps == 1 ? beta_start
                   : beta_start + (beta_end - beta_start) * k / (steps - 1);
    s.beta_[k] = beta;
    const double alpha = 1.0 - beta;
    const double abar_prev = abar;
    abar *= alpha;
    s.alpha_bar_[k] = abar;
    s.step_alpha_[k] = 1.0 / std::sqrt(alpha);
    s.step_lambda_[k] = beta / std::sqrt(1.0 - abar);
    if (k == 0) {
      s.step_sigma_[k] = 0.0;
    } else {
      // posterior variance, moved inside the a_k * (...) parentheses
      const double var = (1.0 - abar_prev) / (1.0 - abar) * beta;
      s.step_sigma_[k] = std::sqrt(var) * std::sqrt(alpha);
    }
  }
  return s;
}

namespace {
void check_k(const NoiseSchedule& s, int k, const char* op) {
  if (k < 0 || k >= s.K())
    throw UsageError(std::string(op) + ": step index out of range");
}
}  // namespace

Tensor forward_sample(const NoiseSchedule& sched, const Tensor& x0, int k,
                      const Tensor& eps, bool literal_unscaled) {
  check_k(sched, k, "forward_sample");
  if (x0.shape() != eps.shape())
    throw DimensionError("forward_sample: eps shape mismatch");
  if (literal_unscaled) return add(x0, eps);
  const double abar = sched.alpha_bar(k);
  return add(scale(x0, std::sqrt(abar)), scale(eps, std::sqrt(1.0 - abar)));
}

Tensor ddpm_step(const NoiseSchedule& sched, const Tensor& x_next, int k,
                 const Denoiser& denoiser, const Tensor& cond, Rng& rng) {
  check_k(sched, k, "ddpm_step");
  Tensor eps_hat = denoiser.predict(x_next, k, cond);
  Tensor inner = sub(x_next, scale(eps_hat, sched.step_lambda(k)));
  const double sig = sched.step_sigma(k);
  if (sig > 0.0) {
    Tensor noise = Tensor::randn(x_next.shape(), rng);
    inner = add(inner, scale(noise, sig));
  }
  return scale(inner, sched.step_alpha(k));
}

Tensor predict_x0(const NoiseSchedule& sched, const Tensor& x_k, int k,
                  const Tensor& eps_hat) {
  check_k(sched, k, "predict_x0");
  const double abar = sched.alpha_bar(k);
  return scale(sub(x_k, scale(eps_hat, std::sqrt(1.0 - abar))),
               1.0 / std::sqrt(abar));
}

Tensor ddim_step(const NoiseSchedule& sched, const Tensor& x_next, int k_from,
                 int k_to, const Denoiser& denoiser, const Tensor& cond) {
  check_k(sched, k_from, "ddim_step");
  if (k_to >= k_from || k_to < -1)
    throw UsageError("ddim_step: indices must satisfy k_from > k_to >= -1");
  Tensor eps_hat = denoiser.predict(x_next, k_from, cond);
  Tensor x0 = predict_x0(sched, x_next, k_from, eps_hat);
  if (k_to < 0) return x0;
  const double abar_to = sched.alpha_bar(k_to);
  return add(scale(x0, std::sqrt(abar_to)),
             scale(eps_hat, std::sqrt(1.0 - abar_to)));
}

std::vector<int> ddim_timesteps(int K, int n) {
  if (n < 1 || n > K) throw UsageError("ddim: invalid step count");
  std::vector<int> ts(n);
  for (int i = 0; i < n; ++i) {
    const double f = n == 1 ? 0.0 : static_cast<double>(i) / (n - 1);
    ts[i] = static_cast<int>(std::lround((K - 1) * (1.0 - f)));
  }
  ts.back() = 0;
  return ts;
}

Tensor sample_loop(const NoiseSchedule& sched, const Denoiser& denoiser,
                   const Tensor& cond, const std::vector<int>& shape,
                   const SamplerConfig& sampler, Rng& rng) {
  Tensor x = Tensor::randn(shape, rng);
  if (sampler.kind == SamplerKind::Ddpm) {
    for (int k = sched.K() - 1; k >= 0; --k)
      x = ddpm_step(sched, x, k, denoiser, cond, rng);
    return x;
  }
  const std::vector<int> ts = ddim_timesteps(sched.K(), sampler.ddim_steps);
  for (size_t i = 0; i < ts.size(); ++i) {
    const int k_to = (i + 1 < ts.size()) ? ts[i + 1] : -1;
    x = ddim_step(sched, x, ts[i], k_to, denoiser, cond);
  }
  return x;
}

Tensor denoising_loss(const NoiseSchedule& sched, const Denoiser& denoiser,
                      const Tensor& x0, const Tensor& cond, Rng& rng) {
  const int k = rng.uniform_int(sched.K());
  Tensor eps = Tensor::randn(x0.shape(), rng);
  Tensor noised = forward_sample(sched, x0, k, eps);
  return mse(denoiser.predict(noised, k, cond), eps);
}

}  // namespace dpa
