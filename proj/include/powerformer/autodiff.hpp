#pragma once

// Tape-based reverse-mode differentiation over dense Eigen matrices.
//
// A Tape is rebuilt for every forward pass. Nodes are appended in evaluation order, so replaying
// them backwards is a valid topological order. Leaves bound to a Parameter push their gradient
// into Parameter::grad when backward() runs.

#include "powerformer/error.hpp"

#include <Eigen/Dense>
#include <Eigen/SparseCore>

#include <cmath>
#include <deque>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace powerformer::ad {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

inline std::string shape_str(Eigen::Index r, Eigen::Index c) {
  return "(" + std::to_string(r) + "x" + std::to_string(c) + ")";
}

template <typename Scalar>
struct Parameter {
  std::string name;
  Matrix<Scalar> value;
  Matrix<Scalar> grad;
};

// Named learnable tensors, iterated in insertion order.
template <typename Scalar>
class ParameterStore {
 public:
  Parameter<Scalar>& add(const std::string& name, Eigen::Index rows, Eigen::Index cols) {
    if (index_.count(name)) throw Error(ErrorCode::InvalidCase, "duplicate parameter name " + name);
    index_[name] = items_.size();
    items_.push_back({name, Matrix<Scalar>::Zero(rows, cols), Matrix<Scalar>::Zero(rows, cols)});
    return items_.back();
  }

  Parameter<Scalar>& at(const std::string& name) { return items_.at(lookup(name)); }
  const Parameter<Scalar>& at(const std::string& name) const { return items_.at(lookup(name)); }
  bool contains(const std::string& name) const { return index_.count(name) > 0; }
  std::size_t index_of(const std::string& name) const { return lookup(name); }

  Parameter<Scalar>& operator[](std::size_t i) { return items_[i]; }
  const Parameter<Scalar>& operator[](std::size_t i) const { return items_[i]; }

  std::size_t size() const { return items_.size(); }
  auto begin() { return items_.begin(); }
  auto end() { return items_.end(); }
  auto begin() const { return items_.begin(); }
  auto end() const { return items_.end(); }

  Eigen::Index scalar_count() const {
    Eigen::Index n = 0;
    for (const auto& p : items_) n += p.value.size();
    return n;
  }

  void zero_grad() {
    for (auto& p : items_) p.grad.setZero();
  }

  // Copies values only; names and shapes must agree.
  void copy_values_from(const ParameterStore& other) {
    if (other.items_.size() != items_.size()) {
      throw Error(ErrorCode::ShapeMismatch, "parameter stores differ in size");
    }
    for (std::size_t i = 0; i < items_.size(); ++i) {
      const auto& src = other.items_[i];
      auto& dst = items_[i];
      if (src.name != dst.name || src.value.rows() != dst.value.rows() || src.value.cols() != dst.value.cols()) {
        throw Error(ErrorCode::ShapeMismatch, "parameter " + dst.name + " " +
                                                  shape_str(dst.value.rows(), dst.value.cols()) + " vs " + src.name +
                                                  " " + shape_str(src.value.rows(), src.value.cols()));
      }
      dst.value = src.value;
    }
  }

  std::int64_t step = 0;

 private:
  std::size_t lookup(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw Error(ErrorCode::MissingGrad, "no parameter named " + name);
    return it->second;
  }

  std::deque<Parameter<Scalar>> items_;  // stable addresses for tape leaves
  std::unordered_map<std::string, std::size_t> index_;
};

template <typename Scalar>
class Tape;

template <typename Scalar>
struct Var {
  Tape<Scalar>* tape = nullptr;
  int id = -1;

  const Matrix<Scalar>& value() const { return tape->value(id); }
  const Matrix<Scalar>& grad() const { return tape->grad(id); }
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
};

template <typename Scalar>
class Tape {
 public:
  using Mat = Matrix<Scalar>;
  using Backward = std::function<void(Tape&, const Mat&)>;

  // With record_grad=false parameters enter as constants and no closures are kept.
  explicit Tape(bool record_grad = true) : record_grad_(record_grad) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<Scalar> constant(Mat value) { return push(std::move(value), false, nullptr, {}); }

  // Free leaf that collects a gradient but is not owned by a ParameterStore.
  Var<Scalar> variable(Mat value) { return push(std::move(value), record_grad_, nullptr, {}); }

  Var<Scalar> param(Parameter<Scalar>& p) { return push(p.value, record_grad_, &p, {}); }

  // Records an op output. The closure is dropped when no input requires a gradient.
  Var<Scalar> record(Mat value, std::initializer_list<Var<Scalar>> inputs, Backward backward) {
    return record(std::move(value), std::span<const Var<Scalar>>(inputs.begin(), inputs.size()), std::move(backward));
  }

  Var<Scalar> record(Mat value, std::span<const Var<Scalar>> inputs, Backward backward) {
    bool needs = false;
    for (const auto& v : inputs) needs = needs || nodes_[static_cast<std::size_t>(v.id)].requires_grad;
    return push(std::move(value), needs, nullptr, needs ? std::move(backward) : Backward{});
  }

  // Id the next recorded node will receive; lets a closure refer to its own output.
  int next_id() const { return static_cast<int>(nodes_.size()); }

  const Mat& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }

  const Mat& grad(int id) const {
    const auto& n = nodes_[static_cast<std::size_t>(id)];
    if (n.grad.size() == 0) empty_grad_ = Mat::Zero(n.value.rows(), n.value.cols());
    return n.grad.size() == 0 ? empty_grad_ : n.grad;
  }

  bool requires_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }

  template <typename Derived>
  void accumulate(int id, const Eigen::MatrixBase<Derived>& g) {
    auto& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0) {
      n.grad = g;
    } else {
      n.grad += g;
    }
  }

  void backward(Var<Scalar> loss) {
    const Mat& lv = value(loss.id);
    if (lv.rows() != 1 || lv.cols() != 1) {
      throw Error(ErrorCode::NonScalarLoss, "loss has shape " + shape_str(lv.rows(), lv.cols()));
    }
    nodes_[static_cast<std::size_t>(loss.id)].grad = Mat::Ones(1, 1);
    for (int i = loss.id; i >= 0; --i) {
      auto& n = nodes_[static_cast<std::size_t>(i)];
      if (!n.requires_grad || n.grad.size() == 0) continue;
      if (n.backward) n.backward(*this, n.grad);
      if (n.param) n.param->grad += n.grad;
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Mat value;
    Mat grad;
    bool requires_grad = false;
    Parameter<Scalar>* param = nullptr;
    Backward backward;
  };

  Var<Scalar> push(Mat value, bool requires_grad, Parameter<Scalar>* param, Backward backward) {
    nodes_.push_back({std::move(value), Mat(), requires_grad, param, std::move(backward)});
    return {this, static_cast<int>(nodes_.size() - 1)};
  }

  bool record_grad_;
  std::vector<Node> nodes_;
  mutable Mat empty_grad_;
};

namespace detail {

template <typename Scalar>
void require_same_shape(const char* op, const Var<Scalar>& a, const Var<Scalar>& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw Error(ErrorCode::ShapeMismatch,
                std::string(op) + ": " + shape_str(a.rows(), a.cols()) + " vs " + shape_str(b.rows(), b.cols()));
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------------------------
// Elementwise and linear ops

template <typename Scalar>
Var<Scalar> matmul(Var<Scalar> a, Var<Scalar> b) {
  if (a.cols() != b.rows()) {
    throw Error(ErrorCode::ShapeMismatch,
                "matmul: " + shape_str(a.rows(), a.cols()) + " by " + shape_str(b.rows(), b.cols()));
  }
  Matrix<Scalar> out;
  out.noalias() = a.value() * b.value();
  const int ia = a.id, ib = b.id;
  return a.tape->record(std::move(out), {a, b}, [ia, ib](Tape<Scalar>& t, const Matrix<Scalar>& g) {
    if (t.requires_grad(ia)) t.accumulate(ia, g * t.value(ib).transpose());
    if (t.requires_grad(ib)) t.accumulate(ib, t.value(ia).transpose() * g);
  });
}

template <typename Scalar>
Var<Scalar> transpose(Var<Scalar> a) {
  const int ia = a.id;
  return a.tape->record(a.value().transpose(), {a},
                        [ia](Tape<Scalar>& t, const Matrix<Scalar>& g) { t.accumulate(ia, g.transpose()); });
}

template <typename Scalar>
Var<Scalar> add(Var<Scalar> a, Var<Scalar> b) {
  detail::require_same_shape("add", a, b);
  const int ia = a.id, ib = b.id;
  return a.tape->record(a.value() + b.value(), {a, b}, [ia, ib](Tape<Scalar>& t, const Matrix<Scalar>& g) {
    t.accumulate(ia, g);
    t.accumulate(ib, g);
  });
}

template <typename Scalar>
Var<Scalar> sub(Var<Scalar> a, Var<Scalar> b) {
  detail::require_same_shape("sub", a, b);
  const int ia = a.id, ib = b.id;
  return a.tape->record(a.value() - b.value(), {a, b}, [ia, ib](Tape<Scalar>& t, const Matrix<Scalar>& g) {
    t.accumulate(ia, g);
    t.accumulate(ib, -g);
  });
}

template <typename Scalar>
Var<Scalar> scale(Var<Scalar> a, Scalar s) {
  const int ia = a.id;
  return a.tape->record(a.value() * s, {a},
                        [ia, s](Tape<Scalar>& t, const Matrix<Scalar>& g) { t.accumulate(ia, g * s); });
}

template <typename Scalar>
Var<Scalar> hadamard(Var<Scalar> a, Var<Scalar> b) {
  detail::require_same_shape("hadamard", a, b);
  const int ia = a.id, ib = b.id;
  return a.tape->record(a.value().cwiseProduct(b.value()), {a, b},
                        [ia, ib](Tape<Scalar>& t, const Matrix<Scalar>& g) {
                          if (t.requires_grad(ia)) t.accumulate(ia, g.cwiseProduct(t.value(ib)));
                          if (t.requires_grad(ib)) t.accumulate(ib, g.cwiseProduct(t.value(ia)));
                        });
}

// x (d x N) scaled column-wise by w (N x 1): out(:, j) = x(:, j) * w(j).
template <typename Scalar>
Var<Scalar> broadcast_hadamard(Var<Scalar> x, Var<Scalar> w) {
  if (w.cols() != 1 || w.rows() != x.cols()) {
    throw Error(ErrorCode::ShapeMismatch,
                "broadcast_hadamard: " + shape_str(x.rows(), x.cols()) + " by " + shape_str(w.rows(), w.cols()));
  }
  Matrix<Scalar> out = x.value() * w.value().col(0).asDiagonal();
  const int ix = x.id, iw = w.id;
  return x.tape->record(std::move(out), {x, w}, [ix, iw](Tape<Scalar>& t, const Matrix<Scalar>& g) {
    if (t.requires_grad(ix)) t.accumulate(ix, g * t.value(iw).col(0).asDiagonal());
    if (t.requires_grad(iw)) t.accumulate(iw, g.cwiseProduct(t.value(ix)).colwise().sum().transpose());
  });
}

// x (r x N) + b (r x 1) broadcast over columns.
template <typename Scalar>
Var<Scalar> add_bias(Var<Scalar> x, Var<Scalar> b) {
  if (b.cols() != 1 || b.rows() != x.rows()) {
    throw Error(ErrorCode::ShapeMismatch,
                "add_bias: " + shape_str(x.rows(), x.cols()) + " plus " + shape_str(b.rows(), b.cols()));
  }
  Matrix<Scalar> out = x.value().colwise() + b.value().col(0);
  const int ix = x.id, ib = b.id;
  return x.tape->record(std::move(out), {x, b}, [ix, ib](Tape<Scalar>& t, const Matrix<Scalar>& g) {
    t.accumulate(ix, g);
    if (t.requires_grad(ib)) t.accumulate(ib, g.rowwise().sum());
  });
}

// x (r x N) + row (1 x N) broadcast over rows.
template <typename Scalar>
Var<Scalar> add_row(Var<Scalar> x, Var<Scalar> row) {
  if (row.rows() != 1 || row.cols() != x.cols()) {
    throw Error(ErrorCode::ShapeMismatch,
                "add_row: " + shape_str(x.rows(), x.cols()) + " plus " + shape_str(row.rows(), row.cols()));
  }
  Matrix<Scalar> out = x.value().rowwise() + row.value().row(0);
  const int ix = x.id, ir = row.id;
  return x.tape->record(std::move(out), {x, row}, [ix, ir](Tape<Scalar>& t, const Matrix<Scalar>& g) {
    t.accumulate(ix, g);
    if (t.requires_grad(ir)) t.accumulate(ir, g.colwise().sum());
  });
}

template <typename Scalar>
Var<Scalar> relu(Var<Scalar> x) {
  const int ix = x.id;
  return x.tape->record(x.value().cwiseMax(Scalar(0)), {x}, [ix](Tape<Scalar>& t, const Matrix<Scalar>& g) {
    t.accumulate(ix, (t.value(ix).array() > Scalar(0)).select(g, Scalar(0)));
  });
}

// ---------------------------------------------------------------------------------------------
// Reductions and normalizations

template <typename Scalar>
Var<Scalar> sum(Var<Scalar> x) {
  const int ix = x.id;
  const Eigen::Index r = x.rows(), c = x.cols();
  Matrix<Scalar> out(1, 1);
  out(0, 0) = x.value().sum();
  return x.tape->record(std::move(out), {x}, [ix, r, c](Tape<Scalar>& t, const Matrix<Scalar>& g) {
    t.accumulate(ix, Matrix<Scalar>::Constant(r, c, g(0, 0)));
  });
}

// Mean over columns in consecutive groups: (d x n*B) -> (d x B). group = 0 means all columns.
template <typename Scalar>
Var<Scalar> mean_pool(Var<Scalar> x, Eigen::Index group = 0) {
  const Eigen::Index n = group == 0 ? x.cols() : group;
  if (n <= 0 || x.cols() % n != 0) {
    throw Error(ErrorCode::ShapeMismatch,
                "mean_pool: " + shape_str(x.rows(), x.cols()) + " with group " + std::to_string(n));
  }
  const Eigen::Index groups = x.cols() / n;
  Matrix<Scalar> out(x.rows(), groups);
  for (Eigen::Index b = 0; b < groups; ++b) out.col(b) = x.value().middleCols(b * n, n).rowwise().mean();
  const int ix = x.id;
  return x.tape->record(std::move(out), {x}, [ix, n, groups](Tape<Scalar>& t, const Matrix<Scalar>& g) {
    Matrix<Scalar> dx(g.rows(), n * groups);
    for (Eigen::Index b = 0; b < groups; ++b) dx.middleCols(b * n, n) = (g.col(b) / Scalar(n)).replicate(1, n);
    t.accumulate(ix, dx);
  });
}

// Column-wise means of a (r x N) matrix as a (1 x N) row.
template <typename Scalar>
Var<Scalar> mean_rows(Var<Scalar> x) {
  const int ix = x.id;
  const Eigen::Index r = x.rows();
  return x.tape->record(x.value().colwise().mean(), {x}, [ix, r](Tape<Scalar>& t, const Matrix<Scalar>& g) {
    t.accumulate(ix, (g / Scalar(r)).replicate(r, 1));
  });
}

namespace detail {

template <typename Scalar>
Matrix<Scalar> softmax_rows_value(const Matrix<Scalar>& x) {
  Matrix<Scalar> e = (x.colwise() - x.rowwise().maxCoeff()).array().exp().matrix();
  return e.array().colwise() / e.rowwise().sum().array();
}

}  // namespace detail

// Softmax across each row (entries of a row sum to one).
template <typename Scalar>
Var<Scalar> softmax_rows(Var<Scalar> x) {
  const int ix = x.id;
  const int iy = x.tape->next_id();
  return x.tape->record(detail::softmax_rows_value(x.value()), {x}, [ix, iy](Tape<Scalar>& t, const Matrix<Scalar>& g) {
    const Matrix<Scalar>& y = t.value(iy);
    const auto dot = g.cwiseProduct(y).rowwise().sum();
    t.accumulate(ix, y.cwiseProduct(g.colwise() - dot));
  });
}

// Softmax down each column (entries of a column sum to one).
template <typename Scalar>
Var<Scalar> softmax_cols(Var<Scalar> x) {
  return transpose(softmax_rows(transpose(x)));
}

// mean((a - target)^2) as a 1x1 scalar; the target is a constant.
template <typename Scalar>
Var<Scalar> mse(Var<Scalar> a, const Matrix<Scalar>& target) {
  if (a.rows() != target.rows() || a.cols() != target.cols()) {
    throw Error(ErrorCode::ShapeMismatch,
                "mse: " + shape_str(a.rows(), a.cols()) + " vs " + shape_str(target.rows(), target.cols()));
  }
  Matrix<Scalar> diff = a.value() - target;
  const Scalar count = static_cast<Scalar>(diff.size());
  Matrix<Scalar> out(1, 1);
  out(0, 0) = diff.squaredNorm() / count;
  const int ia = a.id;
  return a.tape->record(std::move(out), {a}, [ia, diff = std::move(diff), count](Tape<Scalar>& t, const Matrix<Scalar>& g) {
    t.accumulate(ia, diff * (Scalar(2) * g(0, 0) / count));
  });
}

// ---------------------------------------------------------------------------------------------
// Structural ops

template <typename Scalar>
Var<Scalar> concat_rows(std::span<const Var<Scalar>> parts) {
  if (parts.empty()) throw Error(ErrorCode::ShapeMismatch, "concat_rows of nothing");
  const Eigen::Index cols = parts[0].cols();
  Eigen::Index rows = 0;
  for (const auto& p : parts) {
    if (p.cols() != cols) {
      throw Error(ErrorCode::ShapeMismatch, "concat_rows: " + shape_str(parts[0].rows(), cols) + " with " +
                                                shape_str(p.rows(), p.cols()));
    }
    rows += p.rows();
  }
  Matrix<Scalar> out(rows, cols);
  std::vector<std::pair<int, Eigen::Index>> spans;
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    out.middleRows(at, p.rows()) = p.value();
    spans.emplace_back(p.id, at);
    at += p.rows();
  }
  return parts[0].tape->record(std::move(out), parts, [spans](Tape<Scalar>& t, const Matrix<Scalar>& g) {
    for (const auto& [id, offset] : spans) {
      if (t.requires_grad(id)) t.accumulate(id, g.middleRows(offset, t.value(id).rows()));
    }
  });
}

template <typename Scalar>
Var<Scalar> concat_cols(std::span<const Var<Scalar>> parts) {
  if (parts.empty()) throw Error(ErrorCode::ShapeMismatch, "concat_cols of nothing");
  const Eigen::Index rows = parts[0].rows();
  Eigen::Index cols = 0;
  for (const auto& p : parts) {
    if (p.rows() != rows) {
      throw Error(ErrorCode::ShapeMismatch, "concat_cols: " + shape_str(rows, parts[0].cols()) + " with " +
                                                shape_str(p.rows(), p.cols()));
    }
    cols += p.cols();
  }
  Matrix<Scalar> out(rows, cols);
  std::vector<std::pair<int, Eigen::Index>> spans;
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    out.middleCols(at, p.cols()) = p.value();
    spans.emplace_back(p.id, at);
    at += p.cols();
  }
  return parts[0].tape->record(std::move(out), parts, [spans](Tape<Scalar>& t, const Matrix<Scalar>& g) {
    for (const auto& [id, offset] : spans) {
      if (t.requires_grad(id)) t.accumulate(id, g.middleCols(offset, t.value(id).cols()));
    }
  });
}

template <typename Scalar>
Var<Scalar> column(Var<Scalar> x, Eigen::Index c) {
  if (c < 0 || c >= x.cols()) {
    throw Error(ErrorCode::ShapeMismatch, "column " + std::to_string(c) + " of " + shape_str(x.rows(), x.cols()));
  }
  const int ix = x.id;
  const Eigen::Index r = x.rows(), n = x.cols();
  return x.tape->record(x.value().col(c), {x}, [ix, c, r, n](Tape<Scalar>& t, const Matrix<Scalar>& g) {
    Matrix<Scalar> dx = Matrix<Scalar>::Zero(r, n);
    dx.col(c) = g.col(0);
    t.accumulate(ix, dx);
  });
}

template <typename Scalar>
Var<Scalar> row(Var<Scalar> x, Eigen::Index r) {
  if (r < 0 || r >= x.rows()) {
    throw Error(ErrorCode::ShapeMismatch, "row " + std::to_string(r) + " of " + shape_str(x.rows(), x.cols()));
  }
  const int ix = x.id;
  const Eigen::Index m = x.rows(), n = x.cols();
  return x.tape->record(x.value().row(r), {x}, [ix, r, m, n](Tape<Scalar>& t, const Matrix<Scalar>& g) {
    Matrix<Scalar> dx = Matrix<Scalar>::Zero(m, n);
    dx.row(r) = g.row(0);
    t.accumulate(ix, dx);
  });
}

// Column-major reinterpretation (Eigen storage order), e.g. (4 x n*B) -> (4n x B).
template <typename Scalar>
Var<Scalar> reshape(Var<Scalar> x, Eigen::Index rows, Eigen::Index cols) {
  if (rows * cols != x.value().size()) {
    throw Error(ErrorCode::ShapeMismatch,
                "reshape " + shape_str(x.rows(), x.cols()) + " to " + shape_str(rows, cols));
  }
  const int ix = x.id;
  const Eigen::Index r0 = x.rows(), c0 = x.cols();
  Matrix<Scalar> out = x.value().reshaped(rows, cols);
  return x.tape->record(std::move(out), {x}, [ix, r0, c0](Tape<Scalar>& t, const Matrix<Scalar>& g) {
    t.accumulate(ix, g.reshaped(r0, c0));
  });
}

// Each column of x (d x B) repeated `times` consecutively: (d x B*times).
template <typename Scalar>
Var<Scalar> repeat_cols(Var<Scalar> x, Eigen::Index times) {
  const Eigen::Index b = x.cols();
  Matrix<Scalar> out(x.rows(), b * times);
  for (Eigen::Index j = 0; j < b; ++j) out.middleCols(j * times, times) = x.value().col(j).replicate(1, times);
  const int ix = x.id;
  return x.tape->record(std::move(out), {x}, [ix, b, times](Tape<Scalar>& t, const Matrix<Scalar>& g) {
    Matrix<Scalar> dx(g.rows(), b);
    for (Eigen::Index j = 0; j < b; ++j) dx.col(j) = g.middleCols(j * times, times).rowwise().sum();
    t.accumulate(ix, dx);
  });
}

// Per-column inner products of two (d x N) matrices as an (N x 1) column.
template <typename Scalar>
Var<Scalar> column_dot(Var<Scalar> a, Var<Scalar> b) {
  detail::require_same_shape("column_dot", a, b);
  Matrix<Scalar> out = a.value().cwiseProduct(b.value()).colwise().sum().transpose();
  const int ia = a.id, ib = b.id;
  return a.tape->record(std::move(out), {a, b}, [ia, ib](Tape<Scalar>& t, const Matrix<Scalar>& g) {
    if (t.requires_grad(ia)) t.accumulate(ia, t.value(ib) * g.col(0).asDiagonal());
    if (t.requires_grad(ib)) t.accumulate(ib, t.value(ia) * g.col(0).asDiagonal());
  });
}

// Entry (actions[j], j) of each column: (K x B) -> (1 x B).
template <typename Scalar>
Var<Scalar> pick(Var<Scalar> x, std::span<const int> actions) {
  if (static_cast<Eigen::Index>(actions.size()) != x.cols()) {
    throw Error(ErrorCode::ShapeMismatch, "pick: " + std::to_string(actions.size()) + " indices for " +
                                              shape_str(x.rows(), x.cols()));
  }
  Matrix<Scalar> out(1, x.cols());
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    const int a = actions[static_cast<std::size_t>(j)];
    if (a < 0 || a >= x.rows()) throw Error(ErrorCode::ShapeMismatch, "pick: index out of range");
    out(0, j) = x.value()(a, j);
  }
  const int ix = x.id;
  const Eigen::Index r = x.rows(), c = x.cols();
  std::vector<int> idx(actions.begin(), actions.end());
  return x.tape->record(std::move(out), {x}, [ix, r, c, idx = std::move(idx)](Tape<Scalar>& t, const Matrix<Scalar>& g) {
    Matrix<Scalar> dx = Matrix<Scalar>::Zero(r, c);
    for (Eigen::Index j = 0; j < c; ++j) dx(idx[static_cast<std::size_t>(j)], j) = g(0, j);
    t.accumulate(ix, dx);
  });
}

// GIN aggregation over B stacked graphs sharing one topology:
// out block = (1 + eps) * x_block + x_block * adjacency, x is (d x n*B).
template <typename Scalar>
Var<Scalar> graph_aggregate(Var<Scalar> x, const Eigen::SparseMatrix<Scalar>& adjacency, Scalar eps) {
  const Eigen::Index n = adjacency.rows();
  if (adjacency.cols() != n || n == 0 || x.cols() % n != 0) {
    throw Error(ErrorCode::ShapeMismatch, "graph_aggregate: features " + shape_str(x.rows(), x.cols()) +
                                              " over " + std::to_string(n) + " nodes");
  }
  const Eigen::Index blocks = x.cols() / n;
  Matrix<Scalar> out = x.value() * (Scalar(1) + eps);
  for (Eigen::Index b = 0; b < blocks; ++b) {
    out.middleCols(b * n, n) += x.value().middleCols(b * n, n) * adjacency;
  }
  const int ix = x.id;
  const Eigen::SparseMatrix<Scalar>* adj = &adjacency;
  return x.tape->record(std::move(out), {x}, [ix, adj, n, blocks, eps](Tape<Scalar>& t, const Matrix<Scalar>& g) {
    Matrix<Scalar> dx = g * (Scalar(1) + eps);
    const Eigen::SparseMatrix<Scalar> adj_t = adj->transpose();
    for (Eigen::Index b = 0; b < blocks; ++b) dx.middleCols(b * n, n) += g.middleCols(b * n, n) * adj_t;
    t.accumulate(ix, dx);
  });
}

}  // namespace powerformer::ad
