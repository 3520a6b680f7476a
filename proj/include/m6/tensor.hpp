#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace m6 {

class Rng;

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Target id skipped by cross_entropy.
inline constexpr int kIgnoreId = -1;

struct TensorNode;

/// Dense row-major f64 tensor with reverse-mode autodiff.
///
/// A Tensor is a cheap shared handle to its node. Ops build the graph as
/// they execute; backward() on a scalar walks it in reverse topological
/// order and accumulates into the .grad buffer of every tensor that
/// requires gradients. Gradients accumulate across calls until
/// zero_grad(). Graph recording and backward are single-threaded; only
/// the matmul kernels fan out across threads, row-parallel, so results
/// are bit-identical for any thread count.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<double> data,
                          bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  /// Gaussian init, mean 0 and the given standard deviation.
  static Tensor randn(Shape shape, Rng& rng, double stddev,
                      bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t ndim() const;
  std::size_t dim(std::size_t i) const;
  std::size_t size() const;

  std::span<const double> data() const;
  std::span<double> data_mut();
  /// Gradient buffer; empty span if no gradient has been accumulated.
  std::span<const double> grad() const;
  std::span<double> grad_mut();

  double item() const;
  double at(std::size_t i) const;
  double at(std::size_t i, std::size_t j) const;

  bool requires_grad() const;
  void set_requires_grad(bool v);
  void zero_grad();

  /// Node identity, for aliasing checks and graph bookkeeping.
  TensorNode* node() const { return node_.get(); }

  void check_finite(const char* what) const;

 private:
  explicit Tensor(std::shared_ptr<TensorNode> node) : node_(std::move(node)) {}
  std::shared_ptr<TensorNode> node_;
  friend Tensor make_tensor(Shape, std::vector<double>, bool);
};

struct TensorNode {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::vector<Tensor> parents;
  std::function<void(TensorNode&)> backward;
};

// ----- elementwise and reduction ops -----

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
/// a[m,n] + v[n] broadcast over rows.
Tensor add_rowvec(const Tensor& a, const Tensor& v);
/// a[m,n] / c[m,1] broadcast over columns.
Tensor div_colvec(const Tensor& a, const Tensor& c);
Tensor sum_all(const Tensor& a);
Tensor mean_all(const Tensor& a);
/// Row sums: [m,n] -> [m,1].
Tensor sum_rows(const Tensor& a);
/// Mean squared error over all elements.
Tensor mse(const Tensor& a, const Tensor& b);

// ----- matrix products -----

Tensor matmul(const Tensor& a, const Tensor& b);
/// a[m,k] times b[n,k] transposed -> [m,n].
Tensor matmul_nt(const Tensor& a, const Tensor& b);

// ----- nonlinearities and normalization -----

Tensor softmax(const Tensor& a, int axis);
Tensor gelu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps = 1e-5);

/// Mean negative log-likelihood over rows whose target is not ignore_id.
/// All rows ignored yields an exact zero with no gradient.
Tensor cross_entropy(const Tensor& logits, std::span<const int> targets,
                     int ignore_id = kIgnoreId);

// ----- gather / scatter / layout -----

/// Rows of an embedding table selected by id; gradient scatter-adds.
Tensor embedding_rows(const Tensor& table, std::span<const int> ids);
Tensor gather_rows(const Tensor& x, std::span<const std::size_t> idx);
/// Single elements picked at (row, col) pairs, shaped [k,1].
Tensor gather_elems(const Tensor& x,
                    std::span<const std::pair<std::size_t, std::size_t>> at);
Tensor concat_rows(std::span<const Tensor> parts);
/// Same elements, new shape; element count must match.
Tensor reshape(const Tensor& x, Shape shape);
Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t count);
Tensor concat_cols(std::span<const Tensor> parts);
/// out[idx[j]] += w[j] * rows[j]; out has out_rows rows. Gradients flow
/// to both the rows and the weights.
Tensor scatter_rows_weighted(std::size_t out_rows, const Tensor& rows,
                             std::span<const std::size_t> idx,
                             const Tensor& w);

/// Forward takes the quantized values, backward passes the incoming
/// gradient to z unchanged (straight-through surrogate).
Tensor straight_through(const Tensor& z, std::vector<double> quantized);
/// Value copy cut off from the graph.
Tensor detach(const Tensor& x);

/// Reverse-mode sweep from a finite scalar.
void backward(const Tensor& loss);

// ----- optimizer -----

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  /// Global-norm gradient clip; 0 disables.
  double grad_clip = 1.0;
};

class Adam {
 public:
  explicit Adam(std::vector<Tensor> params, AdamConfig cfg = {});
  /// One update from the gradients currently held by the parameters.
  /// Clips by global norm first when configured.
  void step();
  void zero_grad();
  void set_lr(double lr);
  double lr() const { return cfg_.lr; }
  long step_count() const { return t_; }
  /// Pre-clip global gradient norm observed by the latest step().
  double last_grad_norm() const { return last_norm_; }

 private:
  AdamConfig cfg_;
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_, v_;
  long t_ = 0;
  double last_norm_ = 0.0;
};

}  // namespace m6
