#pragma once

#include <string>
#include <utility>
#include <vector>

#include "core/rng.hpp"
#include "core/tensor.hpp"

namespace dpa {

// Sinusoidal embedding of a diffusion step index (dim must be even).
Tensor time_embedding(int k, int dim);

// 4 stride-2 conv layers (4x4 kernels, pad 1), channels in->8->16->32->64,
// ReLU activations; the final 64x4x4 map is flattened and linearly projected
// to a 64-d feature (pooling would discard the spatial layout the policy
// needs to locate agent and block).
struct ConvEncoder {
  static constexpr int kFeatureDim = 64;

  std::vector<Tensor> weights;  // [co,ci,4,4] per layer
  std::vector<Tensor> biases;   // [co] per layer
  Tensor proj_w;                // [1024, 64]
  Tensor proj_b;                // [1, 64]

  void init(int in_channels, Rng& rng);
  // x: [in_channels, 64, 64] -> [64]
  Tensor forward(const Tensor& x) const;

  std::vector<std::pair<std::string, Tensor>> named_params(
      const std::string& prefix) const;
  std::vector<Tensor> params() const;
};

// 3 linear layers, hidden width 256, ReLU; maps (feature, time embedding,
// flattened noised trajectory) to a noise prediction of trajectory shape.
struct MlpDenoiser {
  static constexpr int kHidden = 256;
  static constexpr int kTimeDim = 16;

  int traj_len = 0;     // L_a * D_a
  std::vector<Tensor> weights;  // row-major [in, out]
  std::vector<Tensor> biases;   // [1, out]

  void init(int feature_dim, int traj_elems, Rng& rng);
  // traj_flat: [1, traj_len], cond feature: [F] -> [1, traj_len]
  Tensor forward(const Tensor& traj_flat, int k, const Tensor& feature) const;

  std::vector<std::pair<std::string, Tensor>> named_params(
      const std::string& prefix) const;
  std::vector<Tensor> params() const;
};

}  // namespace dpa
