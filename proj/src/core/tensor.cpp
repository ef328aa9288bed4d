#include "core/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "core/rng.hpp"

namespace dpa {

namespace {

thread_local bool t_grad_enabled = true;

int numel_of(const std::vector<int>& shape) {
  int n = 1;
  for (int d : shape) {
    if (d < 0) throw DimensionError("negative extent");
    n *= d;
  }
  return n;
}

std::string shape_str(const std::vector<int>& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape mismatch " +
                         shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

}  // namespace

NoGradGuard::NoGradGuard() : prev_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = prev_; }
bool grad_enabled() { return t_grad_enabled; }

Tensor make_node(std::vector<int> shape, std::vector<double> data,
                 std::vector<Tensor> parents,
                 std::function<void(Tensor::Impl&)> backprop) {
  auto impl = std::make_shared<Tensor::Impl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  bool needs = false;
  if (t_grad_enabled) {
    for (const auto& p : parents)
      if (p.impl()->requires_grad) needs = true;
  }
  if (needs) {
    impl->requires_grad = true;
    impl->is_leaf = false;
    for (auto& p : parents) impl->parents.push_back(p.impl());
    impl->backprop = std::move(backprop);
  }
  return Tensor(std::move(impl));
}

Tensor Tensor::zeros(std::vector<int> shape) {
  const int n = numel_of(shape);
  auto impl = std::make_shared<Impl>();
  impl->shape = std::move(shape);
  impl->data.assign(n, 0.0);
  return Tensor(std::move(impl));
}

Tensor Tensor::full(std::vector<int> shape, double value) {
  Tensor t = zeros(std::move(shape));
  std::fill(t.vec().begin(), t.vec().end(), value);
  return t;
}

Tensor Tensor::from(std::vector<int> shape, std::vector<double> data) {
  if (numel_of(shape) != static_cast<int>(data.size()))
    throw DimensionError("from: data length does not match shape");
  auto impl = std::make_shared<Impl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double value) { return from({}, {value}); }

Tensor Tensor::randn(std::vector<int> shape, Rng& rng) {
  Tensor t = zeros(std::move(shape));
  for (auto& v : t.vec()) v = rng.normal();
  return t;
}

double Tensor::item() const {
  if (numel() != 1) throw UsageError("item: tensor is not scalar");
  return impl_->data[0];
}

void Tensor::set_requires_grad(bool v) {
  if (!impl_->is_leaf) throw UsageError("requires_grad on non-leaf tensor");
  impl_->requires_grad = v;
}

Tensor Tensor::grad() const {
  Tensor g = zeros(impl_->shape);
  if (impl_->grad.size() == impl_->data.size()) g.vec() = impl_->grad;
  return g;
}

const std::vector<double>& Tensor::grad_vec() const {
  impl_->ensure_grad();
  return impl_->grad;
}

void Tensor::zero_grad() {
  std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

Tensor Tensor::detach() const {
  auto impl = std::make_shared<Impl>();
  impl->shape = impl_->shape;
  impl->data = impl_->data;
  return Tensor(std::move(impl));
}

Tensor Tensor::clone_with_grad() const {
  Tensor t = detach();
  t.set_requires_grad(true);
  return t;
}

// ---- backward ----

void backward(const Tensor& loss) {
  auto root = loss.impl();
  if (loss.numel() != 1) throw UsageError("backward: loss must be scalar");
  if (root->consumed) throw UsageError("backward: graph already consumed");
  if (!root->requires_grad) {
    root->consumed = true;
    return;  // nothing reachable requires grad
  }

  // Iterative post-order topological sort over grad-requiring nodes.
  std::vector<Tensor::Impl*> order;
  std::unordered_set<Tensor::Impl*> seen;
  std::vector<std::pair<Tensor::Impl*, size_t>> stack;
  stack.emplace_back(root.get(), 0);
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      Tensor::Impl* p = node->parents[idx++].get();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root->ensure_grad();
  root->grad[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Tensor::Impl* node = *it;
    if (node->backprop) {
      for (auto& p : node->parents) p->ensure_grad();
      node->backprop(*node);
    }
  }
  // Consume the graph: leaves keep grads, interior nodes are released.
  for (Tensor::Impl* node : order) {
    if (!node->is_leaf) {
      node->backprop = nullptr;
      node->parents.clear();
      node->consumed = true;
    }
  }
  root->consumed = true;
}

// ---- elementwise ----

namespace {

template <typename Fwd, typename Bwd>
Tensor unary_op(const Tensor& a, Fwd fwd, Bwd bwd) {
  std::vector<double> out(a.numel());
  const double* x = a.data();
  for (int i = 0; i < a.numel(); ++i) out[i] = fwd(x[i]);
  auto ai = a.impl();
  return make_node(a.shape(), std::move(out), {a},
                   [ai, bwd](Tensor::Impl& n) {
                     for (size_t i = 0; i < n.data.size(); ++i)
                       ai->grad[i] += n.grad[i] * bwd(ai->data[i]);
                   });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  for (int i = 0; i < a.numel(); ++i) out[i] = a.data()[i] + b.data()[i];
  auto ai = a.impl();
  auto bi = b.impl();
  return make_node(a.shape(), std::move(out), {a, b},
                   [ai, bi](Tensor::Impl& n) {
                     if (ai->requires_grad)
                       for (size_t i = 0; i < n.data.size(); ++i)
                         ai->grad[i] += n.grad[i];
                     if (bi->requires_grad)
                       for (size_t i = 0; i < n.data.size(); ++i)
                         bi->grad[i] += n.grad[i];
                   });
}

Tensor add(const Tensor& a, double b) {
  return unary_op(
      a, [b](double x) { return x + b; }, [](double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  for (int i = 0; i < a.numel(); ++i) out[i] = a.data()[i] - b.data()[i];
  auto ai = a.impl();
  auto bi = b.impl();
  return make_node(a.shape(), std::move(out), {a, b},
                   [ai, bi](Tensor::Impl& n) {
                     if (ai->requires_grad)
                       for (size_t i = 0; i < n.data.size(); ++i)
                         ai->grad[i] += n.grad[i];
                     if (bi->requires_grad)
                       for (size_t i = 0; i < n.data.size(); ++i)
                         bi->grad[i] -= n.grad[i];
                   });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  for (int i = 0; i < a.numel(); ++i) out[i] = a.data()[i] * b.data()[i];
  auto ai = a.impl();
  auto bi = b.impl();
  return make_node(a.shape(), std::move(out), {a, b},
                   [ai, bi](Tensor::Impl& n) {
                     if (ai->requires_grad)
                       for (size_t i = 0; i < n.data.size(); ++i)
                         ai->grad[i] += n.grad[i] * bi->data[i];
                     if (bi->requires_grad)
                       for (size_t i = 0; i < n.data.size(); ++i)
                         bi->grad[i] += n.grad[i] * ai->data[i];
                   });
}

Tensor scale(const Tensor& a, double s) {
  return unary_op(
      a, [s](double x) { return x * s; }, [s](double) { return s; });
}

Tensor relu(const Tensor& a) {
  return unary_op(
      a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor clamp(const Tensor& a, double lo, double hi) {
  // gradient 1 strictly inside (lo, hi), 0 elsewhere
  return unary_op(
      a, [lo, hi](double x) { return std::min(hi, std::max(lo, x)); },
      [lo, hi](double x) { return (x > lo && x < hi) ? 1.0 : 0.0; });
}

Tensor sign(const Tensor& a) {
  // subgradient is identically zero: output is a constant
  std::vector<double> out(a.numel());
  for (int i = 0; i < a.numel(); ++i)
    out[i] = (a.data()[i] > 0.0) ? 1.0 : (a.data()[i] < 0.0 ? -1.0 : 0.0);
  return Tensor::from(a.shape(), std::move(out));
}

Tensor sine(const Tensor& a) {
  return unary_op(
      a, [](double x) { return std::sin(x); },
      [](double x) { return std::cos(x); });
}

Tensor cosine(const Tensor& a) {
  return unary_op(
      a, [](double x) { return std::cos(x); },
      [](double x) { return -std::sin(x); });
}

// ---- matmul ----

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.shape().size() != 2 || b.shape().size() != 2)
    throw DimensionError("matmul: rank-2 tensors required");
  const int m = a.shape()[0], k = a.shape()[1];
  const int k2 = b.shape()[0], n = b.shape()[1];
  if (k != k2)
    throw DimensionError("matmul: inner extents differ (" + std::to_string(k) +
                         " vs " + std::to_string(k2) + ")");
  std::vector<double> out(static_cast<size_t>(m) * n, 0.0);
  const double* A = a.data();
  const double* B = b.data();
  for (int i = 0; i < m; ++i)
    for (int p = 0; p < k; ++p) {
      const double av = A[i * k + p];
      const double* brow = B + p * n;
      double* orow = out.data() + i * n;
      for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  auto ai = a.impl();
  auto bi = b.impl();
  return make_node(
      {m, n}, std::move(out), {a, b}, [ai, bi, m, k, n](Tensor::Impl& node) {
        const double* G = node.grad.data();
        if (ai->requires_grad) {
          // dA = G * B^T
          for (int i = 0; i < m; ++i)
            for (int p = 0; p < k; ++p) {
              double s = 0.0;
              const double* grow = G + i * n;
              const double* brow = bi->data.data() + p * n;
              for (int j = 0; j < n; ++j) s += grow[j] * brow[j];
              ai->grad[i * k + p] += s;
            }
        }
        if (bi->requires_grad) {
          // dB = A^T * G
          for (int i = 0; i < m; ++i)
            for (int p = 0; p < k; ++p) {
              const double av = ai->data[i * k + p];
              const double* grow = G + i * n;
              double* brow = bi->grad.data() + p * n;
              for (int j = 0; j < n; ++j) brow[j] += av * grow[j];
            }
        }
      });
}

// ---- conv2d ----

Tensor conv2d(const Tensor& x, const Tensor& k, const Tensor& bias, int stride,
              int pad) {
  if (x.shape().size() != 3 || k.shape().size() != 4)
    throw DimensionError("conv2d: expected x[c,h,w], k[co,ci,kh,kw]");
  const int ci = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
  const int co = k.shape()[0], kci = k.shape()[1], kh = k.shape()[2],
            kw = k.shape()[3];
  if (ci != kci) throw DimensionError("conv2d: channel mismatch");
  if (bias.defined() && (bias.shape() != std::vector<int>{co}))
    throw DimensionError("conv2d: bias must be [c_out]");
  if ((h + 2 * pad - kh) % stride != 0 || (w + 2 * pad - kw) % stride != 0)
    throw DimensionError("conv2d: non-integer output extent");
  const int oh = (h + 2 * pad - kh) / stride + 1;
  const int ow = (w + 2 * pad - kw) / stride + 1;
  if (oh <= 0 || ow <= 0) throw DimensionError("conv2d: kernel too large");

  // valid kernel ranges per output row/column; padding contributes nothing,
  // so skipping it outright leaves the accumulation order unchanged
  auto range_lo = [pad](int o, int stride_) {
    return std::max(0, pad - o * stride_);
  };
  auto range_hi = [pad](int o, int stride_, int extent, int klen) {
    return std::min(klen, extent + pad - o * stride_);
  };

  std::vector<double> out(static_cast<size_t>(co) * oh * ow, 0.0);
  const double* X = x.data();
  const double* K = k.data();
  for (int oc = 0; oc < co; ++oc) {
    const double b = bias.defined() ? bias.data()[oc] : 0.0;
    for (int oy = 0; oy < oh; ++oy) {
      const int ky_lo = range_lo(oy, stride), ky_hi = range_hi(oy, stride, h, kh);
      for (int ox = 0; ox < ow; ++ox) {
        const int kx_lo = range_lo(ox, stride), kx_hi = range_hi(ox, stride, w, kw);
        const int ix0 = ox * stride - pad;
        double s = b;
        for (int ic = 0; ic < ci; ++ic)
          for (int ky = ky_lo; ky < ky_hi; ++ky) {
            const int iy = oy * stride - pad + ky;
            const double* xrow = X + (ic * h + iy) * w + ix0;
            const double* krow = K + ((oc * ci + ic) * kh + ky) * kw;
            for (int kx = kx_lo; kx < kx_hi; ++kx) s += xrow[kx] * krow[kx];
          }
        out[(oc * oh + oy) * ow + ox] = s;
      }
    }
  }

  auto xi = x.impl();
  auto kimpl = k.impl();
  auto bimpl = bias.defined() ? bias.impl() : nullptr;
  std::vector<Tensor> parents = {x, k};
  if (bias.defined()) parents.push_back(bias);
  return make_node(
      {co, oh, ow}, std::move(out), std::move(parents),
      [xi, kimpl, bimpl, ci, h, w, co, kh, kw, oh, ow, stride,
       pad](Tensor::Impl& node) {
        const double* G = node.grad.data();
        const bool want_x = xi->requires_grad;
        const bool want_k = kimpl->requires_grad;
        const bool want_b = bimpl && bimpl->requires_grad;
        for (int oc = 0; oc < co; ++oc)
          for (int oy = 0; oy < oh; ++oy) {
            const int ky_lo = std::max(0, pad - oy * stride);
            const int ky_hi = std::min(kh, h + pad - oy * stride);
            for (int ox = 0; ox < ow; ++ox) {
              const double g = G[(oc * oh + oy) * ow + ox];
              if (g == 0.0) continue;
              if (want_b) bimpl->grad[oc] += g;
              const int kx_lo = std::max(0, pad - ox * stride);
              const int kx_hi = std::min(kw, w + pad - ox * stride);
              const int ix0 = ox * stride - pad;
              for (int ic = 0; ic < ci; ++ic)
                for (int ky = ky_lo; ky < ky_hi; ++ky) {
                  const int iy = oy * stride - pad + ky;
                  const size_t xrow = (ic * h + iy) * static_cast<size_t>(w) + ix0;
                  const size_t krow =
                      ((oc * ci + ic) * kh + ky) * static_cast<size_t>(kw);
                  if (want_x && want_k) {
                    for (int kx = kx_lo; kx < kx_hi; ++kx) {
                      xi->grad[xrow + kx] += g * kimpl->data[krow + kx];
                      kimpl->grad[krow + kx] += g * xi->data[xrow + kx];
                    }
                  } else if (want_x) {
                    for (int kx = kx_lo; kx < kx_hi; ++kx)
                      xi->grad[xrow + kx] += g * kimpl->data[krow + kx];
                  } else if (want_k) {
                    for (int kx = kx_lo; kx < kx_hi; ++kx)
                      kimpl->grad[krow + kx] += g * xi->data[xrow + kx];
                  }
                }
            }
          }
      });
}

Tensor conv2d(const Tensor& x, const Tensor& k, int stride, int pad) {
  return conv2d(x, k, Tensor(), stride, pad);
}

// ---- shape ops ----

Tensor concat_channels(const std::vector<Tensor>& xs) {
  if (xs.empty()) throw UsageError("concat_channels: empty input");
  const int h = xs[0].shape()[1], w = xs[0].shape()[2];
  int c = 0;
  for (const auto& x : xs) {
    if (x.shape().size() != 3 || x.shape()[1] != h || x.shape()[2] != w)
      throw DimensionError("concat_channels: incompatible shapes");
    c += x.shape()[0];
  }
  std::vector<double> out;
  out.reserve(static_cast<size_t>(c) * h * w);
  for (const auto& x : xs)
    out.insert(out.end(), x.vec().begin(), x.vec().end());
  std::vector<std::shared_ptr<Tensor::Impl>> impls;
  for (const auto& x : xs) impls.push_back(x.impl());
  return make_node({c, h, w}, std::move(out), xs,
                   [impls](Tensor::Impl& node) {
                     size_t off = 0;
                     for (auto& p : impls) {
                       if (p->requires_grad)
                         for (size_t i = 0; i < p->data.size(); ++i)
                           p->grad[i] += node.grad[off + i];
                       off += p->data.size();
                     }
                   });
}

Tensor concat(const std::vector<Tensor>& xs) {
  if (xs.empty()) throw UsageError("concat: empty input");
  std::vector<double> out;
  int n = 0;
  for (const auto& x : xs) n += x.numel();
  out.reserve(n);
  for (const auto& x : xs)
    out.insert(out.end(), x.vec().begin(), x.vec().end());
  std::vector<std::shared_ptr<Tensor::Impl>> impls;
  for (const auto& x : xs) impls.push_back(x.impl());
  return make_node({n}, std::move(out), xs, [impls](Tensor::Impl& node) {
    size_t off = 0;
    for (auto& p : impls) {
      if (p->requires_grad)
        for (size_t i = 0; i < p->data.size(); ++i)
          p->grad[i] += node.grad[off + i];
      off += p->data.size();
    }
  });
}

Tensor reshape(const Tensor& a, std::vector<int> shape) {
  if (numel_of(shape) != a.numel())
    throw DimensionError("reshape: element count mismatch");
  auto ai = a.impl();
  return make_node(std::move(shape), a.vec(), {a}, [ai](Tensor::Impl& node) {
    for (size_t i = 0; i < node.data.size(); ++i) ai->grad[i] += node.grad[i];
  });
}

Tensor global_avg_pool(const Tensor& a) {
  if (a.shape().size() != 3)
    throw DimensionError("global_avg_pool: expected [c,h,w]");
  const int c = a.shape()[0], h = a.shape()[1], w = a.shape()[2];
  const int hw = h * w;
  std::vector<double> out(c, 0.0);
  for (int ic = 0; ic < c; ++ic) {
    double s = 0.0;
    const double* p = a.data() + static_cast<size_t>(ic) * hw;
    for (int i = 0; i < hw; ++i) s += p[i];
    out[ic] = s / hw;
  }
  auto ai = a.impl();
  return make_node({c}, std::move(out), {a}, [ai, c, hw](Tensor::Impl& node) {
    for (int ic = 0; ic < c; ++ic) {
      const double g = node.grad[ic] / hw;
      double* p = ai->grad.data() + static_cast<size_t>(ic) * hw;
      for (int i = 0; i < hw; ++i) p[i] += g;
    }
  });
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (int i = 0; i < a.numel(); ++i) s += a.data()[i];
  auto ai = a.impl();
  return make_node({}, {s}, {a}, [ai](Tensor::Impl& node) {
    const double g = node.grad[0];
    for (auto& v : ai->grad) v += g;
  });
}

Tensor mse(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mse");
  const int n = a.numel();
  double s = 0.0;
  for (int i = 0; i < n; ++i) {
    const double d = a.data()[i] - b.data()[i];
    s += d * d;
  }
  auto ai = a.impl();
  auto bi = b.impl();
  return make_node({}, {s / n}, {a, b}, [ai, bi, n](Tensor::Impl& node) {
    const double g = node.grad[0] * 2.0 / n;
    for (int i = 0; i < n; ++i) {
      const double d = ai->data[i] - bi->data[i];
      if (ai->requires_grad) ai->grad[i] += g * d;
      if (bi->requires_grad) bi->grad[i] -= g * d;
    }
  });
}

// ---- Adam ----

void Adam::step(std::vector<Tensor>& params) {
  if (m.empty()) {
    m.resize(params.size());
    v.resize(params.size());
    for (size_t i = 0; i < params.size(); ++i) {
      m[i].assign(params[i].numel(), 0.0);
      v[i].assign(params[i].numel(), 0.0);
    }
  }
  if (m.size() != params.size()) throw UsageError("adam: parameter count changed");
  ++t;
  const double bc1 = 1.0 - std::pow(beta1, t);
  const double bc2 = 1.0 - std::pow(beta2, t);
  for (size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params[i];
    if (m[i].size() != static_cast<size_t>(p.numel()))
      throw UsageError("adam: parameter shape changed");
    const std::vector<double>& g = p.grad_vec();
    double* w = p.data();
    for (size_t j = 0; j < g.size(); ++j) {
      m[i][j] = beta1 * m[i][j] + (1.0 - beta1) * g[j];
      v[i][j] = beta2 * v[i][j] + (1.0 - beta2) * g[j] * g[j];
      const double mh = m[i][j] / bc1;
      const double vh = v[i][j] / bc2;
      w[j] -= lr * mh / (std::sqrt(vh) + eps);
    }
  }
}

}  // namespace dpa
