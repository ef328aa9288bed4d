#pragma once

#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace dpa {

struct DimensionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

class Rng;

// Dense row-major tensor of doubles with reverse-mode autodiff. A Tensor is a
// cheap handle onto a shared node; ops build a graph of whole-tensor nodes,
// each with a custom backward closure. Graphs are single-threaded; independent
// graphs may live on different threads.
class Tensor {
 public:
  struct Impl {
    std::vector<int> shape;
    std::vector<double> data;
    std::vector<double> grad;  // allocated lazily, same length as data
    bool requires_grad = false;
    bool is_leaf = true;
    bool consumed = false;  // backward already ran through this node
    std::vector<std::shared_ptr<Impl>> parents;
    std::function<void(Impl&)> backprop;

    void ensure_grad() {
      if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    }
  };

  Tensor() = default;
  bool defined() const { return impl_ != nullptr; }

  static Tensor zeros(std::vector<int> shape);
  static Tensor full(std::vector<int> shape, double value);
  static Tensor from(std::vector<int> shape, std::vector<double> data);
  static Tensor scalar(double value);
  static Tensor randn(std::vector<int> shape, Rng& rng);

  const std::vector<int>& shape() const { return impl_->shape; }
  int numel() const { return static_cast<int>(impl_->data.size()); }
  double* data() { return impl_->data.data(); }
  const double* data() const { return impl_->data.data(); }
  std::vector<double>& vec() { return impl_->data; }
  const std::vector<double>& vec() const { return impl_->data; }
  double item() const;

  void set_requires_grad(bool v);
  bool requires_grad() const { return impl_->requires_grad; }
  bool is_leaf() const { return impl_->is_leaf; }

  // Gradient as a tensor; zeros if backward never reached this leaf.
  Tensor grad() const;
  const std::vector<double>& grad_vec() const;
  void zero_grad();

  // Value copy detached from any graph.
  Tensor detach() const;
  Tensor clone_with_grad() const;  // detached copy with requires_grad set

  std::shared_ptr<Impl> impl() const { return impl_; }

 private:
  explicit Tensor(std::shared_ptr<Impl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<Impl> impl_;
  friend Tensor make_node(std::vector<int> shape, std::vector<double> data,
                          std::vector<Tensor> parents,
                          std::function<void(Tensor::Impl&)> backprop);
};

// Builds a graph node with a custom backward closure; the extension point for
// ops defined outside tensor.cpp.
Tensor make_node(std::vector<int> shape, std::vector<double> data,
                 std::vector<Tensor> parents,
                 std::function<void(Tensor::Impl&)> backprop);

// Disables graph construction for the enclosing scope (thread-local).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;

 private:
  bool prev_;
};
bool grad_enabled();

// ---- elementwise ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, double b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor relu(const Tensor& a);
Tensor clamp(const Tensor& a, double lo, double hi);
Tensor sign(const Tensor& a);
Tensor sine(const Tensor& a);
Tensor cosine(const Tensor& a);

// ---- linear algebra / nn ----
Tensor matmul(const Tensor& a, const Tensor& b);
// x: [c_in, h, w], k: [c_out, c_in, kh, kw], bias: optional [c_out]
Tensor conv2d(const Tensor& x, const Tensor& k, const Tensor& bias, int stride,
              int pad);
Tensor conv2d(const Tensor& x, const Tensor& k, int stride, int pad);
// [c, h, w] inputs concatenated along channels
Tensor concat_channels(const std::vector<Tensor>& xs);
// flattened 1-D concat
Tensor concat(const std::vector<Tensor>& xs);
Tensor reshape(const Tensor& a, std::vector<int> shape);
Tensor global_avg_pool(const Tensor& a);  // [c,h,w] -> [c]
Tensor sum(const Tensor& a);
Tensor mse(const Tensor& a, const Tensor& b);

void backward(const Tensor& loss);

// ---- optimizer ----
struct Adam {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long t = 0;
  std::vector<std::vector<double>> m, v;

  // Standard Adam update in place, reading each parameter's grad.
  void step(std::vector<Tensor>& params);
};

}  // namespace dpa
