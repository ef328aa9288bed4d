#include "core/nets.hpp"

#include <cmath>

namespace dpa {

Tensor time_embedding(int k, int dim) {
  if (dim % 2 != 0) throw UsageError("time_embedding: dim must be even");
  const int half = dim / 2;
  std::vector<double> out(dim);
  for (int j = 0; j < half; ++j) {
    const double freq =
        std::exp(-std::log(10000.0) * (half == 1 ? 0.0 : double(j) / (half - 1)));
    out[j] = std::sin(k * freq);
    out[half + j] = std::cos(k * freq);
  }
  return Tensor::from({dim}, std::move(out));
}

namespace {

Tensor he_init(std::vector<int> shape, int fan_in, Rng& rng) {
  Tensor t = Tensor::randn(shape, rng);
  const double s = std::sqrt(2.0 / fan_in);
  for (auto& v : t.vec()) v *= s;
  t.set_requires_grad(true);
  return t;
}

Tensor zero_param(std::vector<int> shape) {
  Tensor t = Tensor::zeros(std::move(shape));
  t.set_requires_grad(true);
  return t;
}

}  // namespace

void ConvEncoder::init(int in_channels, Rng& rng) {
  const int chans[5] = {in_channels, 8, 16, 32, 64};
  weights.clear();
  biases.clear();
  for (int l = 0; l < 4; ++l) {
    const int ci = chans[l], co = chans[l + 1];
    weights.push_back(he_init({co, ci, 4, 4}, ci * 16, rng));
    biases.push_back(zero_param({co}));
  }
  proj_w = he_init({64 * 4 * 4, kFeatureDim}, 64 * 4 * 4, rng);
  proj_b = zero_param({1, kFeatureDim});
}

Tensor ConvEncoder::forward(const Tensor& x) const {
  Tensor h = x;
  for (size_t l = 0; l < weights.size(); ++l)
    h = relu(conv2d(h, weights[l], biases[l], 2, 1));
  Tensor flat = reshape(h, {1, h.numel()});
  return reshape(add(matmul(flat, proj_w), proj_b), {kFeatureDim});
}

std::vector<std::pair<std::string, Tensor>> ConvEncoder::named_params(
    const std::string& prefix) const {
  std::vector<std::pair<std::string, Tensor>> out;
  for (size_t l = 0; l < weights.size(); ++l) {
    out.emplace_back(prefix + ".conv" + std::to_string(l) + ".w", weights[l]);
    out.emplace_back(prefix + ".conv" + std::to_string(l) + ".b", biases[l]);
  }
  out.emplace_back(prefix + ".proj.w", proj_w);
  out.emplace_back(prefix + ".proj.b", proj_b);
  return out;
}

std::vector<Tensor> ConvEncoder::params() const {
  std::vector<Tensor> out;
  for (size_t l = 0; l < weights.size(); ++l) {
    out.push_back(weights[l]);
    out.push_back(biases[l]);
  }
  out.push_back(proj_w);
  out.push_back(proj_b);
  return out;
}

void MlpDenoiser::init(int feature_dim, int traj_elems, Rng& rng) {
  traj_len = traj_elems;
  const int in_dim = feature_dim + kTimeDim + traj_elems;
  const int dims[4] = {in_dim, kHidden, kHidden, traj_elems};
  weights.clear();
  biases.clear();
  for (int l = 0; l < 3; ++l) {
    weights.push_back(he_init({dims[l], dims[l + 1]}, dims[l], rng));
    biases.push_back(zero_param({1, dims[l + 1]}));
  }
}

Tensor MlpDenoiser::forward(const Tensor& traj_flat, int k,
                            const Tensor& feature) const {
  if (traj_flat.numel() != traj_len)
    throw DimensionError("denoiser: trajectory length mismatch");
  Tensor in = concat({feature, time_embedding(k, kTimeDim),
                      reshape(traj_flat, {traj_len})});
  Tensor h = reshape(in, {1, in.numel()});
  for (size_t l = 0; l < weights.size(); ++l) {
    h = add(matmul(h, weights[l]), biases[l]);
    if (l + 1 < weights.size()) h = relu(h);
  }
  return h;  // [1, traj_len]
}

std::vector<std::pair<std::string, Tensor>> MlpDenoiser::named_params(
    const std::string& prefix) const {
  std::vector<std::pair<std::string, Tensor>> out;
  for (size_t l = 0; l < weights.size(); ++l) {
    out.emplace_back(prefix + ".fc" + std::to_string(l) + ".w", weights[l]);
    out.emplace_back(prefix + ".fc" + std::to_string(l) + ".b", biases[l]);
  }
  return out;
}

std::vector<Tensor> MlpDenoiser::params() const {
  std::vector<Tensor> out;
  for (size_t l = 0; l < weights.size(); ++l) {
    out.push_back(weights[l]);
    out.push_back(biases[l]);
  }
  return out;
}

}  // namespace dpa
