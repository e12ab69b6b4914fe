#include "proclip/tensor.hpp"

#include <cmath>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>

namespace proclip {

namespace detail {
struct Node {
  Matrix value;
  Matrix grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  BackwardFn backward;
};
}  // namespace detail

namespace {

thread_local bool g_grad_enabled = true;

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + std::to_string(a.rows()) + "x" +
                                std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                                std::to_string(b.cols()));
  }
}

}  // namespace

Var::Var(Matrix value, bool requires_grad) : node_(std::make_shared<detail::Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

const Matrix& Var::value() const { return node_->value; }
Matrix& Var::mutable_value() { return node_->value; }

const Matrix& Var::grad() const {
  if (node_->grad.size() == 0) node_->grad = Matrix::Zero(node_->value.rows(), node_->value.cols());
  return node_->grad;
}

bool Var::requires_grad() const { return node_->requires_grad; }
void Var::set_requires_grad(bool on) { node_->requires_grad = on; }
void Var::zero_grad() { node_->grad = Matrix::Zero(node_->value.rows(), node_->value.cols()); }

double Var::item() const {
  if (rows() != 1 || cols() != 1) throw std::invalid_argument("item: not a 1x1 value");
  return node_->value(0, 0);
}

Var Var::clone() const {
  Var out(node_->value, node_->requires_grad);
  return out;
}

void Var::backward() const {
  if (rows() != 1 || cols() != 1) throw std::invalid_argument("backward: root must be 1x1");
  backward(Matrix::Ones(1, 1));
}

void Var::backward(const Matrix& seed) const {
  if (!node_->requires_grad) return;
  // Iterative post-order DFS gives a topological order.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> visited;
  std::vector<std::pair<detail::Node*, std::size_t>> stack{{node_.get(), 0}};
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::Node* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  for (detail::Node* node : order) {
    // Interior nodes start from zero each pass; leaves accumulate.
    if (node->backward || node->grad.size() == 0) node->grad = Matrix::Zero(node->value.rows(), node->value.cols());
  }
  node_->grad += seed;
  std::vector<Matrix*> parent_grads;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* node = *it;
    if (!node->backward) continue;
    parent_grads.clear();
    for (auto& p : node->parents) parent_grads.push_back(p->requires_grad ? &p->grad : nullptr);
    node->backward(node->grad, node->value, parent_grads);
  }
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_enabled() { return g_grad_enabled; }

Var make_op(Matrix value, std::vector<Var> parents,
            BackwardFn backward) {
  auto node = std::make_shared<detail::Node>();
  node->value = std::move(value);
  if (g_grad_enabled) {
    bool any = false;
    for (const auto& p : parents) any = any || p.node_->requires_grad;
    if (any) {
      node->requires_grad = true;
      node->parents.reserve(parents.size());
      for (auto& p : parents) node->parents.push_back(std::move(p.node_));
      node->backward = std::move(backward);
    }
  }
  return Var(std::move(node));
}

Var constant(Matrix value) { return Var(std::move(value), false); }

Var matmul(const Var& a, const Var& b) {
  if (a.cols() != b.rows()) throw std::invalid_argument("matmul: inner dimension mismatch");
  Matrix out = a.value() * b.value();
  return make_op(std::move(out), {a, b}, [a, b](const Matrix& g, const Matrix&, auto& pg) {
    if (pg[0]) pg[0]->noalias() += g * b.value().transpose();
    if (pg[1]) pg[1]->noalias() += a.value().transpose() * g;
  });
}

Var matmul_nt(const Var& a, const Var& b) {
  if (a.cols() != b.cols()) throw std::invalid_argument("matmul_nt: inner dimension mismatch");
  Matrix out = a.value() * b.value().transpose();
  return make_op(std::move(out), {a, b}, [a, b](const Matrix& g, const Matrix&, auto& pg) {
    if (pg[0]) pg[0]->noalias() += g * b.value();
    if (pg[1]) pg[1]->noalias() += g.transpose() * a.value();
  });
}

Var transpose(const Var& a) {
  Matrix out = a.value().transpose();
  return make_op(std::move(out), {a}, [](const Matrix& g, const Matrix&, auto& pg) {
    if (pg[0]) *pg[0] += g.transpose();
  });
}

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  Matrix out = a.value() + b.value();
  return make_op(std::move(out), {a, b}, [](const Matrix& g, const Matrix&, auto& pg) {
    if (pg[0]) *pg[0] += g;
    if (pg[1]) *pg[1] += g;
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a, b, "sub");
  Matrix out = a.value() - b.value();
  return make_op(std::move(out), {a, b}, [](const Matrix& g, const Matrix&, auto& pg) {
    if (pg[0]) *pg[0] += g;
    if (pg[1]) *pg[1] -= g;
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a, b, "mul");
  Matrix out = a.value().cwiseProduct(b.value());
  return make_op(std::move(out), {a, b}, [a, b](const Matrix& g, const Matrix&, auto& pg) {
    if (pg[0]) *pg[0] += g.cwiseProduct(b.value());
    if (pg[1]) *pg[1] += g.cwiseProduct(a.value());
  });
}

Var scale(const Var& a, double s) {
  Matrix out = a.value() * s;
  return make_op(std::move(out), {a}, [s](const Matrix& g, const Matrix&, auto& pg) {
    if (pg[0]) *pg[0] += g * s;
  });
}

Var add_scalar(const Var& a, double s) {
  Matrix out = a.value().array() + s;
  return make_op(std::move(out), {a}, [](const Matrix& g, const Matrix&, auto& pg) {
    if (pg[0]) *pg[0] += g;
  });
}

Var relu(const Var& a) {
  Matrix out = a.value().cwiseMax(0.0);
  return make_op(std::move(out), {a}, [a](const Matrix& g, const Matrix&, auto& pg) {
    if (pg[0]) *pg[0] += (a.value().array() > 0.0).select(g, 0.0);
  });
}

Var gelu(const Var& a) {
  // Exact erf form.
  constexpr double kInvSqrt2 = 0.70710678118654752440;
  constexpr double kInvSqrt2Pi = 0.39894228040143267794;
  Matrix out = a.value().unaryExpr([](double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); });
  return make_op(std::move(out), {a}, [a](const Matrix& g, const Matrix&, auto& pg) {
    if (!pg[0]) return;
    Matrix d = a.value().unaryExpr([](double x) {
      return 0.5 * (1.0 + std::erf(x * kInvSqrt2)) + x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
    });
    *pg[0] += g.cwiseProduct(d);
  });
}

Var sigmoid(const Var& a) {
  Matrix out = a.value().unaryExpr([](double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
  });
  return make_op(std::move(out), {a}, [](const Matrix& g, const Matrix& y, auto& pg) {
    if (pg[0]) *pg[0] += g.cwiseProduct(y.cwiseProduct((1.0 - y.array()).matrix()));
  });
}

Var add_row(const Var& a, const Var& row) {
  if (row.rows() != 1 || row.cols() != a.cols()) throw std::invalid_argument("add_row: bias shape mismatch");
  Matrix out = a.value().rowwise() + row.value().row(0);
  return make_op(std::move(out), {a, row}, [](const Matrix& g, const Matrix&, auto& pg) {
    if (pg[0]) *pg[0] += g;
    if (pg[1]) *pg[1] += g.colwise().sum();
  });
}

Var scale_rows(const Var& a, const Var& weights) {
  if (weights.cols() != 1 || weights.rows() != a.rows()) {
    throw std::invalid_argument("scale_rows: weights must be " + std::to_string(a.rows()) + "x1");
  }
  Matrix out = weights.value().col(0).asDiagonal() * a.value();
  return make_op(std::move(out), {a, weights}, [a, weights](const Matrix& g, const Matrix&, auto& pg) {
    if (pg[0]) *pg[0] += weights.value().col(0).asDiagonal() * g;
    if (pg[1]) *pg[1] += g.cwiseProduct(a.value()).rowwise().sum();
  });
}

Matrix softmax_rows(const Matrix& a) {
  Matrix out(a.rows(), a.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    const double m = a.row(i).maxCoeff();
    out.row(i) = (a.row(i).array() - m).exp();
    out.row(i) /= out.row(i).sum();
  }
  return out;
}

Var softmax_rows(const Var& a) {
  Matrix out = softmax_rows(a.value());
  return make_op(std::move(out), {a}, [](const Matrix& g, const Matrix& y, auto& pg) {
    if (!pg[0]) return;
    const Eigen::VectorXd dots = g.cwiseProduct(y).rowwise().sum();
    *pg[0] += y.cwiseProduct((g.colwise() - dots));
  });
}

Var log_softmax_rows(const Var& a) {
  const Matrix& v = a.value();
  Matrix out(v.rows(), v.cols());
  for (Eigen::Index i = 0; i < v.rows(); ++i) {
    const double m = v.row(i).maxCoeff();
    const double lse = m + std::log((v.row(i).array() - m).exp().sum());
    out.row(i) = v.row(i).array() - lse;
  }
  return make_op(std::move(out), {a}, [](const Matrix& g, const Matrix& y, auto& pg) {
    if (!pg[0]) return;
    const Matrix p = y.array().exp();
    const Eigen::VectorXd gsum = g.rowwise().sum();
    *pg[0] += g - (p.array().colwise() * gsum.array()).matrix();
  });
}

Var layer_norm_rows(const Var& x, const Var& gamma, const Var& beta, double eps) {
  const Eigen::Index n = x.rows();
  const Eigen::Index c = x.cols();
  if (gamma.rows() != 1 || gamma.cols() != c || beta.rows() != 1 || beta.cols() != c) {
    throw std::invalid_argument("layer_norm_rows: scale/offset shape mismatch");
  }
  Matrix xhat(n, c);
  Eigen::VectorXd inv_std(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double mu = x.value().row(i).mean();
    const auto centered = x.value().row(i).array() - mu;
    const double var = centered.square().mean();
    inv_std(i) = 1.0 / std::sqrt(var + eps);
    xhat.row(i) = centered * inv_std(i);
  }
  Matrix out = (xhat.array().rowwise() * gamma.value().row(0).array()).rowwise() + beta.value().row(0).array();
  return make_op(std::move(out), {x, gamma, beta},
                 [xhat, inv_std, gamma](const Matrix& g, const Matrix&, auto& pg) {
                   if (pg[1]) *pg[1] += g.cwiseProduct(xhat).colwise().sum();
                   if (pg[2]) *pg[2] += g.colwise().sum();
                   if (!pg[0]) return;
                   const double inv_c = 1.0 / static_cast<double>(g.cols());
                   const Matrix gh = g.array().rowwise() * gamma.value().row(0).array();
                   for (Eigen::Index i = 0; i < g.rows(); ++i) {
                     const double mean_gh = gh.row(i).mean();
                     const double mean_gh_xhat = gh.row(i).dot(xhat.row(i)) * inv_c;
                     pg[0]->row(i).array() +=
                         inv_std(i) * (gh.row(i).array() - mean_gh - xhat.row(i).array() * mean_gh_xhat);
                   }
                 });
}

Var l2_normalize_rows(const Var& a) {
  const Eigen::VectorXd norms = a.value().rowwise().norm();
  for (Eigen::Index i = 0; i < norms.size(); ++i) {
    if (!(norms(i) > 0.0)) throw std::domain_error("l2_normalize_rows: zero or non-finite row");
  }
  Matrix out = norms.cwiseInverse().asDiagonal() * a.value();
  return make_op(std::move(out), {a}, [norms](const Matrix& g, const Matrix& y, auto& pg) {
    if (!pg[0]) return;
    const Eigen::VectorXd dots = g.cwiseProduct(y).rowwise().sum();
    for (Eigen::Index i = 0; i < g.rows(); ++i) {
      pg[0]->row(i) += (g.row(i) - dots(i) * y.row(i)) / norms(i);
    }
  });
}

Var mean_rows(const Var& a) {
  const double inv = 1.0 / static_cast<double>(a.rows());
  Matrix out = a.value().colwise().sum() * inv;
  return make_op(std::move(out), {a}, [inv](const Matrix& g, const Matrix&, auto& pg) {
    if (pg[0]) pg[0]->rowwise() += g.row(0) * inv;
  });
}

Var sum(const Var& a) {
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  return make_op(std::move(out), {a}, [](const Matrix& g, const Matrix&, auto& pg) {
    if (pg[0]) pg[0]->array() += g(0, 0);
  });
}

Var diag(const Var& a) {
  if (a.rows() != a.cols()) throw std::invalid_argument("diag: matrix not square");
  Matrix out = a.value().diagonal();
  return make_op(std::move(out), {a}, [](const Matrix& g, const Matrix&, auto& pg) {
    if (pg[0]) pg[0]->diagonal() += g.col(0);
  });
}

Var concat_cols(const Var& a, const Var& b) {
  if (a.rows() != b.rows()) throw std::invalid_argument("concat_cols: row count mismatch");
  Matrix out(a.rows(), a.cols() + b.cols());
  out << a.value(), b.value();
  const Eigen::Index ca = a.cols();
  const Eigen::Index cb = b.cols();
  return make_op(std::move(out), {a, b}, [ca, cb](const Matrix& g, const Matrix&, auto& pg) {
    if (pg[0]) *pg[0] += g.leftCols(ca);
    if (pg[1]) *pg[1] += g.rightCols(cb);
  });
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no parts");
  Eigen::Index rows = 0;
  const Eigen::Index cols = parts.front().cols();
  for (const auto& p : parts) {
    if (p.cols() != cols) throw std::invalid_argument("concat_rows: column count mismatch");
    rows += p.rows();
  }
  Matrix out(rows, cols);
  std::vector<Eigen::Index> offsets;
  Eigen::Index r = 0;
  for (const auto& p : parts) {
    offsets.push_back(r);
    out.middleRows(r, p.rows()) = p.value();
    r += p.rows();
  }
  std::vector<Eigen::Index> heights;
  for (const auto& p : parts) heights.push_back(p.rows());
  return make_op(std::move(out), parts, [offsets, heights](const Matrix& g, const Matrix&, auto& pg) {
    for (std::size_t k = 0; k < pg.size(); ++k) {
      if (pg[k]) *pg[k] += g.middleRows(offsets[k], heights[k]);
    }
  });
}

Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a.cols()) throw std::invalid_argument("slice_cols: out of range");
  Matrix out = a.value().middleCols(start, count);
  return make_op(std::move(out), {a}, [start, count](const Matrix& g, const Matrix&, auto& pg) {
    if (pg[0]) pg[0]->middleCols(start, count) += g;
  });
}

}  // namespace proclip
