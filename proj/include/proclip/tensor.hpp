#pragma once

// Minimal reverse-mode automatic differentiation over dense row-major
// double matrices. Every trainable block in the library is written once
// against `Var`; inference runs the same code under `NoGradGuard`, which
// skips graph construction entirely.

#include <Eigen/Dense>

#include <functional>
#include <memory>
#include <vector>

namespace proclip {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

namespace detail {
struct Node;
}

// Receives the upstream gradient, the op's own output, and one pointer per
// parent gradient (nullptr when that parent needs no gradient).
using BackwardFn = std::function<void(const Matrix& grad, const Matrix& out, std::vector<Matrix*>& parent_grads)>;

class Var {
 public:
  Var() = default;
  explicit Var(Matrix value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Matrix& value() const;
  // Direct access for optimizer updates on leaf parameters.
  Matrix& mutable_value();
  const Matrix& grad() const;
  bool requires_grad() const;
  void set_requires_grad(bool on);
  void zero_grad();

  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  double item() const;

  // Seeds d(this)/d(this) = 1; `this` must be 1x1.
  void backward() const;
  void backward(const Matrix& seed) const;

  // Leaf nodes only: a fresh node holding a copy of the value.
  Var clone() const;

 private:
  explicit Var(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;

  friend Var make_op(Matrix value, std::vector<Var> parents,
                     BackwardFn backward);
};

// Graph recording is thread-local; the guard disables it for its scope.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

Var make_op(Matrix value, std::vector<Var> parents,
            BackwardFn backward);

Var constant(Matrix value);

// Linear algebra
Var matmul(const Var& a, const Var& b);     // a * b
Var matmul_nt(const Var& a, const Var& b);  // a * b^T
Var transpose(const Var& a);

// Elementwise
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var relu(const Var& a);
Var gelu(const Var& a);
Var sigmoid(const Var& a);

// Broadcasting
Var add_row(const Var& a, const Var& row);        // a (N x C) + row (1 x C)
Var scale_rows(const Var& a, const Var& weights);  // row i of a times weights(i, 0)

// Row-wise normalizations
Var softmax_rows(const Var& a);
Var log_softmax_rows(const Var& a);
Var layer_norm_rows(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);
Var l2_normalize_rows(const Var& a);

// Reductions and reshaping
Var mean_rows(const Var& a);  // 1 x C column means
Var sum(const Var& a);        // 1 x 1
Var diag(const Var& a);       // square N x N -> N x 1
Var concat_cols(const Var& a, const Var& b);
Var concat_rows(const std::vector<Var>& parts);
Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index count);

// Forward-only helpers on plain matrices.
Matrix softmax_rows(const Matrix& a);

}  // namespace proclip
