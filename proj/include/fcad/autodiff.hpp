#pragma once

// Reverse-mode differentiation over dense 2-D tensors.
//
// A Graph owns its nodes; Expr is a lightweight handle (graph pointer + node
// id). Nodes are evaluated eagerly on construction and can be re-evaluated
// after leaf values change (see Graph::set_value / Graph::evaluate). Operand
// ids are always smaller than the node id, so the node vector is already a
// topological order and the graph is acyclic by construction.
//
// Scalars are 1x1 tensors. Elementwise binary ops broadcast an operand whose
// row or column count is 1 against the other operand.

#include <cstddef>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "fcad/error.hpp"

namespace fcad {

using Tensor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class OpKind {
  constant,
  parameter,
  add,
  subtract,
  multiply,
  matmul,
  transpose,
  relu,
  exp,
  log,
  power,
  sum,
  row_sum,
  dot,
  l2norm_squared,
  gather,
  select_rows,
  row_max_detached,
  norm_guard,
};

const char* op_name(OpKind kind);

class AutodiffError : public Error {
 public:
  explicit AutodiffError(const std::string& message) : Error("autodiff", message) {}
};

/// Lower bound on an embedding row's L2 norm before 1e-12 is added to its
/// first coordinate.
inline constexpr double kNormGuardEpsilon = 1e-12;

class Graph;

class Expr {
 public:
  Expr() = default;
  Expr(Graph* graph, std::size_t id) : graph_(graph), id_(id) {}

  Graph& graph() const;
  std::size_t id() const { return id_; }
  const Tensor& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  /// Value of a 1x1 expression.
  double scalar() const;
  bool valid() const { return graph_ != nullptr; }

 private:
  Graph* graph_ = nullptr;
  std::size_t id_ = 0;
};

/// Gradient of a scalar root with respect to every parameter leaf of a graph.
class Gradients {
 public:
  const Tensor& operator[](const Expr& leaf) const;
  const std::map<std::size_t, Tensor>& by_node() const { return grads_; }

 private:
  friend class Graph;
  std::map<std::size_t, Tensor> grads_;
};

struct GradReport {
  /// Parameter leaf name -> max relative error |a - f| / max(|a|, |f|, 1e-8).
  std::map<std::string, double> max_relative_error;
  double max_error = 0.0;
  double step = 0.0;
};

class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Expr constant(Tensor value);
  Expr constant(double value);
  Expr parameter(Tensor value, std::string name);

  /// Replaces a leaf value; shape must not change. Marks the graph stale until
  /// the next evaluate().
  void set_value(const Expr& leaf, Tensor value);

  /// Recomputes every node reachable from root in topological order.
  const Tensor& evaluate(const Expr& root);

  /// Reverse sweep from a scalar root. Requires up-to-date forward values.
  Gradients backward(const Expr& root);

  std::size_t size() const { return nodes_.size(); }
  std::vector<Expr> parameters();
  const std::string& name_of(const Expr& leaf) const;
  OpKind kind_of(const Expr& e) const { return node(e).kind; }
  const Tensor& adjoint(const Expr& e) const { return node(e).adjoint; }

 private:
  friend class Expr;
  friend Expr make_node(OpKind, std::vector<Expr>, double, std::vector<std::pair<Eigen::Index, Eigen::Index>>);

  struct Node {
    OpKind kind = OpKind::constant;
    std::vector<std::size_t> operands;
    Tensor value;
    Tensor adjoint;
    std::string name;
    double exponent = 0.0;
    std::vector<std::pair<Eigen::Index, Eigen::Index>> indices;
  };

  const Node& node(const Expr& e) const;
  Node& node(const Expr& e);
  Expr push(Node n);
  void compute(std::size_t id);
  void propagate(std::size_t id);
  std::vector<char> reachable(std::size_t root) const;
  [[noreturn]] void fail(std::size_t id, const std::string& what) const;

  std::vector<Node> nodes_;
  bool stale_ = false;
};

Expr add(const Expr& a, const Expr& b);
Expr subtract(const Expr& a, const Expr& b);
Expr multiply(const Expr& a, const Expr& b);
Expr scale(const Expr& a, double factor);
Expr matmul(const Expr& a, const Expr& b);
Expr transpose(const Expr& a);
Expr relu(const Expr& a);
Expr exp(const Expr& a);
Expr log(const Expr& a);
Expr power(const Expr& a, double exponent);
/// Sum of all elements, 1x1.
Expr sum(const Expr& a);
/// Per-row sum, rows x 1.
Expr row_sum(const Expr& a);
Expr dot(const Expr& a, const Expr& b);
Expr l2norm_squared(const Expr& a);
/// Picks elements at (row, col) into a k x 1 column.
Expr gather(const Expr& a, std::vector<std::pair<Eigen::Index, Eigen::Index>> at);
Expr select_rows(const Expr& a, const std::vector<Eigen::Index>& rows);
/// Per-row max as a rows x 1 column; gradient does not flow through it.
Expr row_max_detached(const Expr& a);
/// Identity, except rows with L2 norm below kNormGuardEpsilon get
/// kNormGuardEpsilon added to their first coordinate. Gradient is identity.
Expr norm_guard(const Expr& a);

inline Expr operator+(const Expr& a, const Expr& b) { return add(a, b); }
inline Expr operator-(const Expr& a, const Expr& b) { return subtract(a, b); }
inline Expr operator*(const Expr& a, const Expr& b) { return multiply(a, b); }
inline Expr operator*(double s, const Expr& a) { return scale(a, s); }

/// Central finite differences over every parameter coordinate. Leaves the
/// graph evaluated at the original leaf values.
GradReport check_gradient(Graph& graph, const Expr& root, double step);

}  // namespace fcad
