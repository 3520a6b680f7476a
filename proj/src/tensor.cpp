#include "m6/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_set>

#include "m6/rng.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace m6 {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

namespace {

[[noreturn]] void shape_error(const char* op, const Tensor& a) {
  throw std::invalid_argument(std::string(op) + ": bad shape " +
                              shape_str(a.shape()));
}

[[noreturn]] void shape_error(const char* op, const Tensor& a,
                              const Tensor& b) {
  throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                              shape_str(a.shape()) + " vs " +
                              shape_str(b.shape()));
}

void require_defined(const Tensor& t, const char* op) {
  if (!t.defined()) throw std::invalid_argument(std::string(op) + ": empty tensor");
}

void require_2d(const Tensor& t, const char* op) {
  require_defined(t, op);
  if (t.ndim() != 2) shape_error(op, t);
}

void ensure_grad(TensorNode& n) {
  if (n.grad.empty()) n.grad.assign(n.value.size(), 0.0);
}

bool wants_grad(const Tensor& t) { return t.defined() && t.requires_grad(); }

// Thresholds below which the matmul kernels stay single threaded; the
// row-partitioned loops are bit-deterministic for any thread count.
constexpr std::size_t kParallelFlops = 1u << 16;

void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const double* a,
             const double* b, double* c, bool accumulate) {
  if (!accumulate) std::fill(c, c + m * n, 0.0);
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (m * k * n > kParallelFlops)
#endif
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(m); ++i) {
    double* crow = c + i * n;
    const double* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      double aip = arow[p];
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
}

// c[m,n] (+)= a[m,k] * b[n,k]^T
void gemm_nt(std::size_t m, std::size_t k, std::size_t n, const double* a,
             const double* b, double* c, bool accumulate) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (m * k * n > kParallelFlops)
#endif
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(m); ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      const double* brow = b + j * k;
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      crow[j] = accumulate ? crow[j] + acc : acc;
    }
  }
}

// c[k,n] (+)= a[m,k]^T * b[m,n]
void gemm_tn(std::size_t m, std::size_t k, std::size_t n, const double* a,
             const double* b, double* c, bool accumulate) {
  if (!accumulate) std::fill(c, c + k * n, 0.0);
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (m * k * n > kParallelFlops)
#endif
  for (std::ptrdiff_t p = 0; p < static_cast<std::ptrdiff_t>(k); ++p) {
    double* crow = c + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      double aip = a[i * k + p];
      const double* brow = b + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
}

}  // namespace

Tensor make_tensor(Shape shape, std::vector<double> data, bool requires_grad) {
  auto node = std::make_shared<TensorNode>();
  node->shape = std::move(shape);
  node->value = std::move(data);
  node->requires_grad = requires_grad;
  if (node->value.size() != numel(node->shape))
    throw std::invalid_argument("tensor: data size does not match shape " +
                                shape_str(node->shape));
  return Tensor(std::move(node));
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  std::size_t n = numel(shape);
  return make_tensor(std::move(shape), std::vector<double>(n, 0.0),
                     requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  std::size_t n = numel(shape);
  return make_tensor(std::move(shape), std::vector<double>(n, value),
                     requires_grad);
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data,
                         bool requires_grad) {
  return make_tensor(std::move(shape), std::move(data), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return make_tensor({1}, {value}, requires_grad);
}

Tensor Tensor::randn(Shape shape, Rng& rng, double stddev, bool requires_grad) {
  std::size_t n = numel(shape);
  std::vector<double> data(n);
  for (std::size_t i = 0; i < n; ++i) data[i] = rng.normal() * stddev;
  return make_tensor(std::move(shape), std::move(data), requires_grad);
}

const Shape& Tensor::shape() const {
  if (!node_) throw std::logic_error("shape() on empty tensor");
  return node_->shape;
}

std::size_t Tensor::ndim() const { return shape().size(); }

std::size_t Tensor::dim(std::size_t i) const {
  const Shape& s = shape();
  if (i >= s.size()) throw std::out_of_range("dim index out of range");
  return s[i];
}

std::size_t Tensor::size() const { return node_ ? node_->value.size() : 0; }

std::span<const double> Tensor::data() const {
  if (!node_) return {};
  return node_->value;
}

std::span<double> Tensor::data_mut() {
  if (!node_) throw std::logic_error("data_mut() on empty tensor");
  return node_->value;
}

std::span<const double> Tensor::grad() const {
  if (!node_) return {};
  return node_->grad;
}

std::span<double> Tensor::grad_mut() {
  if (!node_) throw std::logic_error("grad_mut() on empty tensor");
  ensure_grad(*node_);
  return node_->grad;
}

double Tensor::item() const {
  if (size() != 1) throw std::logic_error("item() needs a one-element tensor");
  return node_->value[0];
}

double Tensor::at(std::size_t i) const {
  if (i >= size()) throw std::out_of_range("tensor index out of range");
  return node_->value[i];
}

double Tensor::at(std::size_t i, std::size_t j) const {
  require_2d(*this, "at");
  if (i >= dim(0) || j >= dim(1))
    throw std::out_of_range("tensor index out of range");
  return node_->value[i * dim(1) + j];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

void Tensor::set_requires_grad(bool v) {
  if (!node_) throw std::logic_error("set_requires_grad on empty tensor");
  node_->requires_grad = v;
}

void Tensor::zero_grad() {
  if (node_) node_->grad.clear();
}

void Tensor::check_finite(const char* what) const {
  for (double v : data())
    if (!std::isfinite(v))
      throw std::runtime_error(std::string(what) + ": non-finite value");
}

namespace {

/// Builds a result node. Parents and the backward closure are dropped
/// when no input requires gradients, so inference runs record nothing.
Tensor op_node(Shape shape, std::vector<double> value,
               std::vector<Tensor> parents,
               std::function<void(TensorNode&)> backward) {
  bool rg = false;
  for (const Tensor& p : parents) rg = rg || wants_grad(p);
  Tensor out = make_tensor(std::move(shape), std::move(value), rg);
  if (rg) {
    out.node()->parents = std::move(parents);
    out.node()->backward = std::move(backward);
  }
  return out;
}

void accumulate(const Tensor& t, std::size_t i, double g) {
  TensorNode* n = t.node();
  ensure_grad(*n);
  n->grad[i] += g;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_defined(a, "add");
  require_defined(b, "add");
  if (a.shape() != b.shape()) shape_error("add", a, b);
  std::vector<double> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.data()[i] + b.data()[i];
  return op_node(a.shape(), std::move(v), {a, b}, [a, b](TensorNode& self) {
    if (wants_grad(a)) {
      ensure_grad(*a.node());
      for (std::size_t i = 0; i < self.grad.size(); ++i)
        a.node()->grad[i] += self.grad[i];
    }
    if (wants_grad(b)) {
      ensure_grad(*b.node());
      for (std::size_t i = 0; i < self.grad.size(); ++i)
        b.node()->grad[i] += self.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_defined(a, "sub");
  require_defined(b, "sub");
  if (a.shape() != b.shape()) shape_error("sub", a, b);
  std::vector<double> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.data()[i] - b.data()[i];
  return op_node(a.shape(), std::move(v), {a, b}, [a, b](TensorNode& self) {
    if (wants_grad(a)) {
      ensure_grad(*a.node());
      for (std::size_t i = 0; i < self.grad.size(); ++i)
        a.node()->grad[i] += self.grad[i];
    }
    if (wants_grad(b)) {
      ensure_grad(*b.node());
      for (std::size_t i = 0; i < self.grad.size(); ++i)
        b.node()->grad[i] -= self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_defined(a, "mul");
  require_defined(b, "mul");
  if (a.shape() != b.shape()) shape_error("mul", a, b);
  std::vector<double> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.data()[i] * b.data()[i];
  return op_node(a.shape(), std::move(v), {a, b}, [a, b](TensorNode& self) {
    if (wants_grad(a)) {
      ensure_grad(*a.node());
      for (std::size_t i = 0; i < self.grad.size(); ++i)
        a.node()->grad[i] += self.grad[i] * b.data()[i];
    }
    if (wants_grad(b)) {
      ensure_grad(*b.node());
      for (std::size_t i = 0; i < self.grad.size(); ++i)
        b.node()->grad[i] += self.grad[i] * a.data()[i];
    }
  });
}

Tensor scale(const Tensor& a, double c) {
  require_defined(a, "scale");
  std::vector<double> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.data()[i] * c;
  return op_node(a.shape(), std::move(v), {a}, [a, c](TensorNode& self) {
    if (!wants_grad(a)) return;
    ensure_grad(*a.node());
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      a.node()->grad[i] += self.grad[i] * c;
  });
}

Tensor add_rowvec(const Tensor& a, const Tensor& v) {
  require_2d(a, "add_rowvec");
  require_defined(v, "add_rowvec");
  std::size_t m = a.dim(0), n = a.dim(1);
  if (v.size() != n) shape_error("add_rowvec", a, v);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      out[i * n + j] = a.data()[i * n + j] + v.data()[j];
  return op_node(a.shape(), std::move(out), {a, v},
                 [a, v, m, n](TensorNode& self) {
                   if (wants_grad(a)) {
                     ensure_grad(*a.node());
                     for (std::size_t i = 0; i < self.grad.size(); ++i)
                       a.node()->grad[i] += self.grad[i];
                   }
                   if (wants_grad(v)) {
                     ensure_grad(*v.node());
                     for (std::size_t i = 0; i < m; ++i)
                       for (std::size_t j = 0; j < n; ++j)
                         v.node()->grad[j] += self.grad[i * n + j];
                   }
                 });
}

Tensor div_colvec(const Tensor& a, const Tensor& c) {
  require_2d(a, "div_colvec");
  require_defined(c, "div_colvec");
  std::size_t m = a.dim(0), n = a.dim(1);
  if (c.size() != m) shape_error("div_colvec", a, c);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < m; ++i) {
    double d = c.data()[i];
    if (d == 0.0) throw std::domain_error("div_colvec: zero divisor");
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = a.data()[i * n + j] / d;
  }
  return op_node(a.shape(), std::move(out), {a, c},
                 [a, c, m, n](TensorNode& self) {
                   for (std::size_t i = 0; i < m; ++i) {
                     double d = c.data()[i];
                     for (std::size_t j = 0; j < n; ++j) {
                       double g = self.grad[i * n + j];
                       if (wants_grad(a)) accumulate(a, i * n + j, g / d);
                       if (wants_grad(c))
                         accumulate(c, i, -g * a.data()[i * n + j] / (d * d));
                     }
                   }
                 });
}

Tensor sum_all(const Tensor& a) {
  require_defined(a, "sum_all");
  double s = 0.0;
  for (double x : a.data()) s += x;
  return op_node({1}, {s}, {a}, [a](TensorNode& self) {
    if (!wants_grad(a)) return;
    ensure_grad(*a.node());
    for (double& g : a.node()->grad) g += self.grad[0];
  });
}

Tensor mean_all(const Tensor& a) {
  require_defined(a, "mean_all");
  if (a.size() == 0) throw std::invalid_argument("mean_all: empty tensor");
  double s = 0.0;
  for (double x : a.data()) s += x;
  double inv = 1.0 / static_cast<double>(a.size());
  return op_node({1}, {s * inv}, {a}, [a, inv](TensorNode& self) {
    if (!wants_grad(a)) return;
    ensure_grad(*a.node());
    for (double& g : a.node()->grad) g += self.grad[0] * inv;
  });
}

Tensor sum_rows(const Tensor& a) {
  require_2d(a, "sum_rows");
  std::size_t m = a.dim(0), n = a.dim(1);
  std::vector<double> out(m, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i] += a.data()[i * n + j];
  return op_node({m, 1}, std::move(out), {a}, [a, m, n](TensorNode& self) {
    if (!wants_grad(a)) return;
    ensure_grad(*a.node());
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j)
        a.node()->grad[i * n + j] += self.grad[i];
  });
}

Tensor mse(const Tensor& a, const Tensor& b) {
  require_defined(a, "mse");
  require_defined(b, "mse");
  if (a.shape() != b.shape()) shape_error("mse", a, b);
  if (a.size() == 0) throw std::invalid_argument("mse: empty tensors");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    double d = a.data()[i] - b.data()[i];
    s += d * d;
  }
  double inv = 1.0 / static_cast<double>(a.size());
  return op_node({1}, {s * inv}, {a, b}, [a, b, inv](TensorNode& self) {
    double g2 = 2.0 * inv * self.grad[0];
    for (std::size_t i = 0; i < a.size(); ++i) {
      double d = a.data()[i] - b.data()[i];
      if (wants_grad(a)) accumulate(a, i, g2 * d);
      if (wants_grad(b)) accumulate(b, i, -g2 * d);
    }
  });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_2d(a, "matmul");
  require_2d(b, "matmul");
  std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) shape_error("matmul", a, b);
  std::vector<double> out(m * n);
  gemm_nn(m, k, n, a.data().data(), b.data().data(), out.data(), false);
  return op_node({m, n}, std::move(out), {a, b},
                 [a, b, m, k, n](TensorNode& self) {
                   if (wants_grad(a)) {
                     ensure_grad(*a.node());
                     gemm_nt(m, n, k, self.grad.data(), b.data().data(),
                             a.node()->grad.data(), true);
                   }
                   if (wants_grad(b)) {
                     ensure_grad(*b.node());
                     gemm_tn(m, k, n, a.data().data(), self.grad.data(),
                             b.node()->grad.data(), true);
                   }
                 });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_2d(a, "matmul_nt");
  require_2d(b, "matmul_nt");
  std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
  if (b.dim(1) != k) shape_error("matmul_nt", a, b);
  std::vector<double> out(m * n);
  gemm_nt(m, k, n, a.data().data(), b.data().data(), out.data(), false);
  return op_node({m, n}, std::move(out), {a, b},
                 [a, b, m, k, n](TensorNode& self) {
                   if (wants_grad(a)) {
                     ensure_grad(*a.node());
                     gemm_nn(m, n, k, self.grad.data(), b.data().data(),
                             a.node()->grad.data(), true);
                   }
                   if (wants_grad(b)) {
                     ensure_grad(*b.node());
                     gemm_tn(m, n, k, self.grad.data(), a.data().data(),
                             b.node()->grad.data(), true);
                   }
                 });
}

namespace {

struct AxisView {
  std::size_t outer, mid, inner;
};

AxisView axis_view(const Shape& shape, int axis, const char* op) {
  int nd = static_cast<int>(shape.size());
  if (axis < 0) axis += nd;
  if (axis < 0 || axis >= nd)
    throw std::invalid_argument(std::string(op) + ": axis out of range");
  AxisView v{1, shape[axis], 1};
  for (int i = 0; i < axis; ++i) v.outer *= shape[i];
  for (int i = axis + 1; i < nd; ++i) v.inner *= shape[i];
  return v;
}

}  // namespace

Tensor softmax(const Tensor& a, int axis) {
  require_defined(a, "softmax");
  AxisView v = axis_view(a.shape(), axis, "softmax");
  if (v.mid == 0) throw std::invalid_argument("softmax: empty axis");
  std::vector<double> out(a.size());
  const double* x = a.data().data();
  for (std::size_t o = 0; o < v.outer; ++o)
    for (std::size_t in = 0; in < v.inner; ++in) {
      std::size_t base = o * v.mid * v.inner + in;
      double mx = x[base];
      for (std::size_t i = 1; i < v.mid; ++i)
        mx = std::max(mx, x[base + i * v.inner]);
      double sum = 0.0;
      for (std::size_t i = 0; i < v.mid; ++i) {
        double e = std::exp(x[base + i * v.inner] - mx);
        out[base + i * v.inner] = e;
        sum += e;
      }
      for (std::size_t i = 0; i < v.mid; ++i) out[base + i * v.inner] /= sum;
    }
  return op_node(a.shape(), std::move(out), {a}, [a, v](TensorNode& self) {
    if (!wants_grad(a)) return;
    ensure_grad(*a.node());
    const double* y = self.value.data();
    const double* g = self.grad.data();
    double* dx = a.node()->grad.data();
    for (std::size_t o = 0; o < v.outer; ++o)
      for (std::size_t in = 0; in < v.inner; ++in) {
        std::size_t base = o * v.mid * v.inner + in;
        double dot = 0.0;
        for (std::size_t i = 0; i < v.mid; ++i) {
          std::size_t ix = base + i * v.inner;
          dot += g[ix] * y[ix];
        }
        for (std::size_t i = 0; i < v.mid; ++i) {
          std::size_t ix = base + i * v.inner;
          dx[ix] += y[ix] * (g[ix] - dot);
        }
      }
  });
}

namespace {
constexpr double kGeluC = 0.7978845608028653558798921198687;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;
}  // namespace

Tensor gelu(const Tensor& a) {
  require_defined(a, "gelu");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    double x = a.data()[i];
    double u = kGeluC * (x + kGeluA * x * x * x);
    out[i] = 0.5 * x * (1.0 + std::tanh(u));
  }
  return op_node(a.shape(), std::move(out), {a}, [a](TensorNode& self) {
    if (!wants_grad(a)) return;
    ensure_grad(*a.node());
    for (std::size_t i = 0; i < a.size(); ++i) {
      double x = a.data()[i];
      double u = kGeluC * (x + kGeluA * x * x * x);
      double t = std::tanh(u);
      double sech2 = 1.0 - t * t;
      double du = kGeluC * (1.0 + 3.0 * kGeluA * x * x);
      double d = 0.5 * (1.0 + t) + 0.5 * x * sech2 * du;
      a.node()->grad[i] += self.grad[i] * d;
    }
  });
}

Tensor sigmoid(const Tensor& a) {
  require_defined(a, "sigmoid");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i)
    out[i] = 1.0 / (1.0 + std::exp(-a.data()[i]));
  return op_node(a.shape(), std::move(out), {a}, [a](TensorNode& self) {
    if (!wants_grad(a)) return;
    ensure_grad(*a.node());
    for (std::size_t i = 0; i < a.size(); ++i) {
      double y = self.value[i];
      a.node()->grad[i] += self.grad[i] * y * (1.0 - y);
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps) {
  require_defined(x, "layer_norm");
  require_defined(gain, "layer_norm");
  require_defined(bias, "layer_norm");
  if (x.ndim() < 1) shape_error("layer_norm", x);
  std::size_t d = x.shape().back();
  if (d == 0 || gain.size() != d || bias.size() != d)
    throw std::invalid_argument("layer_norm: gain/bias must match last dim " +
                                std::to_string(d));
  std::size_t rows = x.size() / d;
  std::vector<double> out(x.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.data().data() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += xr[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<double>(d);
    double inv = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j)
      out[r * d + j] = (xr[j] - mu) * inv * gain.data()[j] + bias.data()[j];
  }
  return op_node(x.shape(), std::move(out), {x, gain, bias},
                 [x, gain, bias, eps, rows, d](TensorNode& self) {
                   double dn = static_cast<double>(d);
                   for (std::size_t r = 0; r < rows; ++r) {
                     const double* xr = x.data().data() + r * d;
                     const double* g = self.grad.data() + r * d;
                     double mu = 0.0;
                     for (std::size_t j = 0; j < d; ++j) mu += xr[j];
                     mu /= dn;
                     double var = 0.0;
                     for (std::size_t j = 0; j < d; ++j)
                       var += (xr[j] - mu) * (xr[j] - mu);
                     var /= dn;
                     double inv = 1.0 / std::sqrt(var + eps);
                     double sum_dh = 0.0, sum_dhx = 0.0;
                     for (std::size_t j = 0; j < d; ++j) {
                       double xhat = (xr[j] - mu) * inv;
                       double dh = g[j] * gain.data()[j];
                       sum_dh += dh;
                       sum_dhx += dh * xhat;
                       if (wants_grad(gain)) accumulate(gain, j, g[j] * xhat);
                       if (wants_grad(bias)) accumulate(bias, j, g[j]);
                     }
                     if (wants_grad(x)) {
                       ensure_grad(*x.node());
                       for (std::size_t j = 0; j < d; ++j) {
                         double xhat = (xr[j] - mu) * inv;
                         double dh = g[j] * gain.data()[j];
                         x.node()->grad[r * d + j] +=
                             inv * (dh - sum_dh / dn - xhat * sum_dhx / dn);
                       }
                     }
                   }
                 });
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> targets,
                     int ignore_id) {
  require_2d(logits, "cross_entropy");
  std::size_t t = logits.dim(0), vs = logits.dim(1);
  if (targets.size() != t)
    throw std::invalid_argument("cross_entropy: expected " + std::to_string(t) +
                                " targets, got " + std::to_string(targets.size()));
  double sum = 0.0;
  std::size_t valid = 0;
  for (std::size_t r = 0; r < t; ++r) {
    int y = targets[r];
    if (y == ignore_id) continue;
    if (y < 0 || static_cast<std::size_t>(y) >= vs)
      throw std::out_of_range("cross_entropy: target id " + std::to_string(y) +
                              " outside vocab of " + std::to_string(vs));
    const double* row = logits.data().data() + r * vs;
    double mx = row[0];
    for (std::size_t j = 1; j < vs; ++j) mx = std::max(mx, row[j]);
    double lse = 0.0;
    for (std::size_t j = 0; j < vs; ++j) lse += std::exp(row[j] - mx);
    lse = mx + std::log(lse);
    sum += lse - row[y];
    ++valid;
  }
  double value = valid ? sum / static_cast<double>(valid) : 0.0;
  std::vector<int> tgt(targets.begin(), targets.end());
  return op_node(
      {1}, {value}, {logits},
      [logits, tgt = std::move(tgt), ignore_id, t, vs, valid](TensorNode& self) {
        if (!wants_grad(logits) || valid == 0) return;
        ensure_grad(*logits.node());
        double s = self.grad[0] / static_cast<double>(valid);
        for (std::size_t r = 0; r < t; ++r) {
          int y = tgt[r];
          if (y == ignore_id) continue;
          const double* row = logits.data().data() + r * vs;
          double* gr = logits.node()->grad.data() + r * vs;
          double mx = row[0];
          for (std::size_t j = 1; j < vs; ++j) mx = std::max(mx, row[j]);
          double z = 0.0;
          for (std::size_t j = 0; j < vs; ++j) z += std::exp(row[j] - mx);
          for (std::size_t j = 0; j < vs; ++j) {
            double p = std::exp(row[j] - mx) / z;
            gr[j] += s * (p - (static_cast<std::size_t>(y) == j ? 1.0 : 0.0));
          }
        }
      });
}

Tensor embedding_rows(const Tensor& table, std::span<const int> ids) {
  require_2d(table, "embedding_rows");
  std::size_t vs = table.dim(0), d = table.dim(1);
  std::vector<double> out(ids.size() * d);
  for (std::size_t r = 0; r < ids.size(); ++r) {
    int id = ids[r];
    if (id < 0 || static_cast<std::size_t>(id) >= vs)
      throw std::out_of_range("embedding_rows: id " + std::to_string(id) +
                              " outside table of " + std::to_string(vs));
    std::copy_n(table.data().data() + static_cast<std::size_t>(id) * d, d,
                out.data() + r * d);
  }
  std::vector<int> idv(ids.begin(), ids.end());
  return op_node({ids.size(), d}, std::move(out), {table},
                 [table, idv = std::move(idv), d](TensorNode& self) {
                   if (!wants_grad(table)) return;
                   ensure_grad(*table.node());
                   for (std::size_t r = 0; r < idv.size(); ++r) {
                     double* dst = table.node()->grad.data() +
                                   static_cast<std::size_t>(idv[r]) * d;
                     const double* src = self.grad.data() + r * d;
                     for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
                   }
                 });
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> idx) {
  require_2d(x, "gather_rows");
  std::size_t m = x.dim(0), n = x.dim(1);
  std::vector<double> out(idx.size() * n);
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] >= m) throw std::out_of_range("gather_rows: row out of range");
    std::copy_n(x.data().data() + idx[r] * n, n, out.data() + r * n);
  }
  std::vector<std::size_t> iv(idx.begin(), idx.end());
  return op_node({idx.size(), n}, std::move(out), {x},
                 [x, iv = std::move(iv), n](TensorNode& self) {
                   if (!wants_grad(x)) return;
                   ensure_grad(*x.node());
                   for (std::size_t r = 0; r < iv.size(); ++r) {
                     double* dst = x.node()->grad.data() + iv[r] * n;
                     const double* src = self.grad.data() + r * n;
                     for (std::size_t j = 0; j < n; ++j) dst[j] += src[j];
                   }
                 });
}

Tensor gather_elems(const Tensor& x,
                    std::span<const std::pair<std::size_t, std::size_t>> at) {
  require_2d(x, "gather_elems");
  std::size_t m = x.dim(0), n = x.dim(1);
  std::vector<double> out(at.size());
  for (std::size_t r = 0; r < at.size(); ++r) {
    if (at[r].first >= m || at[r].second >= n)
      throw std::out_of_range("gather_elems: index out of range");
    out[r] = x.data()[at[r].first * n + at[r].second];
  }
  std::vector<std::pair<std::size_t, std::size_t>> av(at.begin(), at.end());
  return op_node({at.size(), 1}, std::move(out), {x},
                 [x, av = std::move(av), n](TensorNode& self) {
                   if (!wants_grad(x)) return;
                   ensure_grad(*x.node());
                   for (std::size_t r = 0; r < av.size(); ++r)
                     x.node()->grad[av[r].first * n + av[r].second] +=
                         self.grad[r];
                 });
}

Tensor concat_rows(std::span<const Tensor> parts) {
  std::vector<Tensor> kept;
  for (const Tensor& p : parts)
    if (p.defined() && p.size() > 0) kept.push_back(p);
  if (kept.empty()) throw std::invalid_argument("concat_rows: nothing to concat");
  std::size_t n = kept[0].dim(1), rows = 0;
  for (const Tensor& p : kept) {
    require_2d(p, "concat_rows");
    if (p.dim(1) != n) shape_error("concat_rows", kept[0], p);
    rows += p.dim(0);
  }
  std::vector<double> out;
  out.reserve(rows * n);
  for (const Tensor& p : kept)
    out.insert(out.end(), p.data().begin(), p.data().end());
  std::vector<Tensor> parents = kept;
  return op_node({rows, n}, std::move(out), std::move(parents),
                 [kept](TensorNode& self) {
                   std::size_t off = 0;
                   for (const Tensor& p : kept) {
                     std::size_t sz = p.size();
                     if (wants_grad(p)) {
                       ensure_grad(*p.node());
                       for (std::size_t i = 0; i < sz; ++i)
                         p.node()->grad[i] += self.grad[off + i];
                     }
                     off += sz;
                   }
                 });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel(shape) != x.size())
    throw std::invalid_argument("reshape: element count mismatch for " +
                                shape_str(x.shape()) + " -> " + shape_str(shape));
  std::vector<double> out(x.data().begin(), x.data().end());
  return op_node(std::move(shape), std::move(out), {x},
                 [x](TensorNode& self) {
                   if (!wants_grad(x)) return;
                   ensure_grad(*x.node());
                   for (std::size_t i = 0; i < self.grad.size(); ++i)
                     x.node()->grad[i] += self.grad[i];
                 });
}

Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t count) {
  require_2d(x, "slice_cols");
  std::size_t m = x.dim(0), n = x.dim(1);
  if (start + count > n) throw std::out_of_range("slice_cols: range out of bounds");
  std::vector<double> out(m * count);
  for (std::size_t i = 0; i < m; ++i)
    std::copy_n(x.data().data() + i * n + start, count, out.data() + i * count);
  return op_node({m, count}, std::move(out), {x},
                 [x, start, count, m, n](TensorNode& self) {
                   if (!wants_grad(x)) return;
                   ensure_grad(*x.node());
                   for (std::size_t i = 0; i < m; ++i)
                     for (std::size_t j = 0; j < count; ++j)
                       x.node()->grad[i * n + start + j] +=
                           self.grad[i * count + j];
                 });
}

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: nothing to concat");
  std::size_t m = parts[0].dim(0), n = 0;
  for (const Tensor& p : parts) {
    require_2d(p, "concat_cols");
    if (p.dim(0) != m) shape_error("concat_cols", parts[0], p);
    n += p.dim(1);
  }
  std::vector<double> out(m * n);
  std::size_t off = 0;
  for (const Tensor& p : parts) {
    std::size_t pc = p.dim(1);
    for (std::size_t i = 0; i < m; ++i)
      std::copy_n(p.data().data() + i * pc, pc, out.data() + i * n + off);
    off += pc;
  }
  std::vector<Tensor> kept(parts.begin(), parts.end());
  return op_node({m, n}, std::move(out), std::vector<Tensor>(kept),
                 [kept, m, n](TensorNode& self) {
                   std::size_t off = 0;
                   for (const Tensor& p : kept) {
                     std::size_t pc = p.dim(1);
                     if (wants_grad(p)) {
                       ensure_grad(*p.node());
                       for (std::size_t i = 0; i < m; ++i)
                         for (std::size_t j = 0; j < pc; ++j)
                           p.node()->grad[i * pc + j] +=
                               self.grad[i * n + off + j];
                     }
                     off += pc;
                   }
                 });
}

Tensor scatter_rows_weighted(std::size_t out_rows, const Tensor& rows,
                             std::span<const std::size_t> idx,
                             const Tensor& w) {
  require_2d(rows, "scatter_rows_weighted");
  std::size_t k = rows.dim(0), n = rows.dim(1);
  if (idx.size() != k || w.size() != k)
    throw std::invalid_argument(
        "scatter_rows_weighted: rows, idx and weights must agree");
  std::vector<double> out(out_rows * n, 0.0);
  for (std::size_t r = 0; r < k; ++r) {
    if (idx[r] >= out_rows)
      throw std::out_of_range("scatter_rows_weighted: row out of range");
    double wr = w.data()[r];
    const double* src = rows.data().data() + r * n;
    double* dst = out.data() + idx[r] * n;
    for (std::size_t j = 0; j < n; ++j) dst[j] += wr * src[j];
  }
  std::vector<std::size_t> iv(idx.begin(), idx.end());
  return op_node({out_rows, n}, std::move(out), {rows, w},
                 [rows, w, iv = std::move(iv), n](TensorNode& self) {
                   for (std::size_t r = 0; r < iv.size(); ++r) {
                     const double* gout = self.grad.data() + iv[r] * n;
                     if (wants_grad(rows)) {
                       ensure_grad(*rows.node());
                       double wr = w.data()[r];
                       double* dst = rows.node()->grad.data() + r * n;
                       for (std::size_t j = 0; j < n; ++j)
                         dst[j] += wr * gout[j];
                     }
                     if (wants_grad(w)) {
                       const double* src = rows.data().data() + r * n;
                       double dot = 0.0;
                       for (std::size_t j = 0; j < n; ++j)
                         dot += src[j] * gout[j];
                       accumulate(w, r, dot);
                     }
                   }
                 });
}

Tensor straight_through(const Tensor& z, std::vector<double> quantized) {
  require_defined(z, "straight_through");
  if (quantized.size() != z.size())
    throw std::invalid_argument("straight_through: value size mismatch");
  return op_node(z.shape(), std::move(quantized), {z}, [z](TensorNode& self) {
    if (!wants_grad(z)) return;
    ensure_grad(*z.node());
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      z.node()->grad[i] += self.grad[i];
  });
}

Tensor detach(const Tensor& x) {
  require_defined(x, "detach");
  return Tensor::from_data(x.shape(),
                           std::vector<double>(x.data().begin(), x.data().end()));
}

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.size() != 1)
    throw std::invalid_argument("backward: loss must be a scalar");
  if (!std::isfinite(loss.item()))
    throw std::runtime_error("backward: loss is not finite");
  if (!loss.requires_grad()) return;

  // Iterative post-order DFS over parent edges; shared subgraphs are
  // visited once, so their gradients accumulate through every path.
  std::vector<TensorNode*> order;
  std::unordered_set<TensorNode*> seen;
  struct Frame {
    TensorNode* node;
    std::size_t next = 0;
  };
  std::vector<Frame> stack{{loss.node()}};
  seen.insert(loss.node());
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next < f.node->parents.size()) {
      TensorNode* p = f.node->parents[f.next++].node();
      if (p && p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.push_back({p});
      }
    } else {
      order.push_back(f.node);
      stack.pop_back();
    }
  }

  ensure_grad(*loss.node());
  loss.node()->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorNode* n = *it;
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
}

Adam::Adam(std::vector<Tensor> params, AdamConfig cfg)
    : cfg_(cfg), params_(std::move(params)) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const Tensor& p : params_) {
    if (!p.defined()) throw std::invalid_argument("Adam: empty parameter");
    m_.emplace_back(p.size(), 0.0);
    v_.emplace_back(p.size(), 0.0);
  }
}

void Adam::step() {
  ++t_;
  double norm_sq = 0.0;
  for (const Tensor& p : params_)
    for (double g : p.grad()) norm_sq += g * g;
  last_norm_ = std::sqrt(norm_sq);
  double clip_scale = 1.0;
  if (cfg_.grad_clip > 0.0 && last_norm_ > cfg_.grad_clip)
    clip_scale = cfg_.grad_clip / last_norm_;

  double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = params_[i];
    auto g = p.grad();
    auto x = p.data_mut();
    for (std::size_t j = 0; j < x.size(); ++j) {
      double gj = (j < g.size() ? g[j] : 0.0) * clip_scale;
      m_[i][j] = cfg_.beta1 * m_[i][j] + (1.0 - cfg_.beta1) * gj;
      v_[i][j] = cfg_.beta2 * v_[i][j] + (1.0 - cfg_.beta2) * gj * gj;
      double mhat = m_[i][j] / bc1;
      double vhat = v_[i][j] / bc2;
      x[j] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
  }
}

void Adam::zero_grad() {
  for (Tensor& p : params_) p.zero_grad();
}

void Adam::set_lr(double lr) { cfg_.lr = lr; }

}  // namespace m6
