#include "fcad/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace fcad {

using Index = Eigen::Index;
using IndexPairs = std::vector<std::pair<Index, Index>>;

Expr make_node(OpKind kind, std::vector<Expr> operands, double exponent, IndexPairs indices);

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::constant: return "constant";
    case OpKind::parameter: return "parameter";
    case OpKind::add: return "add";
    case OpKind::subtract: return "subtract";
    case OpKind::multiply: return "multiply";
    case OpKind::matmul: return "matmul";
    case OpKind::transpose: return "transpose";
    case OpKind::relu: return "relu";
    case OpKind::exp: return "exp";
    case OpKind::log: return "log";
    case OpKind::power: return "power";
    case OpKind::sum: return "sum";
    case OpKind::row_sum: return "row_sum";
    case OpKind::dot: return "dot";
    case OpKind::l2norm_squared: return "l2norm_squared";
    case OpKind::gather: return "gather";
    case OpKind::select_rows: return "select_rows";
    case OpKind::row_max_detached: return "row_max_detached";
    case OpKind::norm_guard: return "norm_guard";
  }
  return "unknown";
}

namespace {

std::string shape_str(const Tensor& t) {
  std::ostringstream os;
  os << t.rows() << "x" << t.cols();
  return os.str();
}

bool broadcastable(Index a, Index b) { return a == b || a == 1 || b == 1; }

// Expands t to rows x cols, repeating along singleton dimensions.
Tensor expand(const Tensor& t, Index rows, Index cols) {
  if (t.rows() == rows && t.cols() == cols) return t;
  Tensor out(rows, cols);
  for (Index r = 0; r < rows; ++r) {
    for (Index c = 0; c < cols; ++c) {
      out(r, c) = t(t.rows() == 1 ? 0 : r, t.cols() == 1 ? 0 : c);
    }
  }
  return out;
}

// Inverse of expand for adjoints: sums over broadcast dimensions.
Tensor reduce_to(const Tensor& g, Index rows, Index cols) {
  if (g.rows() == rows && g.cols() == cols) return g;
  Tensor out = Tensor::Zero(rows, cols);
  for (Index r = 0; r < g.rows(); ++r) {
    for (Index c = 0; c < g.cols(); ++c) {
      out(rows == 1 ? 0 : r, cols == 1 ? 0 : c) += g(r, c);
    }
  }
  return out;
}

void accumulate(Tensor& into, const Tensor& g) {
  if (into.size() == 0) {
    into = g;
  } else {
    into += g;
  }
}

}  // namespace

Graph& Expr::graph() const {
  if (graph_ == nullptr) throw AutodiffError("use of an unbound Expr");
  return *graph_;
}

const Tensor& Expr::value() const { return graph().node(*this).value; }

double Expr::scalar() const {
  const Tensor& v = value();
  if (v.rows() != 1 || v.cols() != 1) {
    throw AutodiffError("expected a scalar, got " + shape_str(v));
  }
  return v(0, 0);
}

const Tensor& Gradients::operator[](const Expr& leaf) const {
  auto it = grads_.find(leaf.id());
  if (it == grads_.end()) throw AutodiffError("no gradient recorded for node " + std::to_string(leaf.id()));
  return it->second;
}

const Graph::Node& Graph::node(const Expr& e) const {
  if (e.id() >= nodes_.size()) throw AutodiffError("node id out of range");
  return nodes_[e.id()];
}

Graph::Node& Graph::node(const Expr& e) {
  if (e.id() >= nodes_.size()) throw AutodiffError("node id out of range");
  return nodes_[e.id()];
}

void Graph::fail(std::size_t id, const std::string& what) const {
  std::ostringstream os;
  os << "node " << id << " (" << op_name(nodes_[id].kind) << "): " << what;
  throw AutodiffError(os.str());
}

Expr Graph::push(Node n) {
  nodes_.push_back(std::move(n));
  const std::size_t id = nodes_.size() - 1;
  try {
    compute(id);
  } catch (...) {
    nodes_.pop_back();
    throw;
  }
  return Expr(this, id);
}

Expr Graph::constant(Tensor value) {
  Node n;
  n.kind = OpKind::constant;
  n.value = std::move(value);
  return push(std::move(n));
}

Expr Graph::constant(double value) {
  Tensor t(1, 1);
  t(0, 0) = value;
  return constant(std::move(t));
}

Expr Graph::parameter(Tensor value, std::string name) {
  Node n;
  n.kind = OpKind::parameter;
  n.value = std::move(value);
  n.name = std::move(name);
  return push(std::move(n));
}

void Graph::set_value(const Expr& leaf, Tensor value) {
  Node& n = node(leaf);
  if (n.kind != OpKind::parameter && n.kind != OpKind::constant) {
    fail(leaf.id(), "set_value on a non-leaf node");
  }
  if (n.value.rows() != value.rows() || n.value.cols() != value.cols()) {
    fail(leaf.id(), "set_value shape " + shape_str(value) + " does not match " + shape_str(n.value));
  }
  n.value = std::move(value);
  stale_ = true;
}

std::vector<Expr> Graph::parameters() {
  std::vector<Expr> out;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (nodes_[i].kind == OpKind::parameter) out.emplace_back(this, i);
  }
  return out;
}

const std::string& Graph::name_of(const Expr& leaf) const { return node(leaf).name; }

std::vector<char> Graph::reachable(std::size_t root) const {
  std::vector<char> mark(root + 1, 0);
  mark[root] = 1;
  for (std::size_t i = root + 1; i-- > 0;) {
    if (!mark[i]) continue;
    for (std::size_t op : nodes_[i].operands) mark[op] = 1;
  }
  return mark;
}

const Tensor& Graph::evaluate(const Expr& root) {
  if (root.id() >= nodes_.size()) throw AutodiffError("node id out of range");
  const auto mark = reachable(root.id());
  for (std::size_t i = 0; i <= root.id(); ++i) {
    if (mark[i]) compute(i);
  }
  stale_ = false;
  return nodes_[root.id()].value;
}

void Graph::compute(std::size_t id) {
  Node& n = nodes_[id];
  auto in = [&](std::size_t k) -> const Tensor& { return nodes_[n.operands[k]].value; };

  switch (n.kind) {
    case OpKind::constant:
    case OpKind::parameter:
      return;
    case OpKind::add:
    case OpKind::subtract:
    case OpKind::multiply: {
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      if (!broadcastable(a.rows(), b.rows()) || !broadcastable(a.cols(), b.cols())) {
        fail(id, "shape mismatch " + shape_str(a) + " vs " + shape_str(b));
      }
      const Index rows = std::max(a.rows(), b.rows());
      const Index cols = std::max(a.cols(), b.cols());
      const bool same = a.rows() == b.rows() && a.cols() == b.cols();
      if (n.kind == OpKind::add) {
        n.value = same ? Tensor(a + b) : Tensor(expand(a, rows, cols) + expand(b, rows, cols));
      } else if (n.kind == OpKind::subtract) {
        n.value = same ? Tensor(a - b) : Tensor(expand(a, rows, cols) - expand(b, rows, cols));
      } else {
        n.value = same ? Tensor(a.cwiseProduct(b))
                       : Tensor(expand(a, rows, cols).cwiseProduct(expand(b, rows, cols)));
      }
      return;
    }
    case OpKind::matmul: {
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      if (a.cols() != b.rows()) fail(id, "shape mismatch " + shape_str(a) + " * " + shape_str(b));
      n.value.noalias() = a * b;
      return;
    }
    case OpKind::transpose:
      n.value = in(0).transpose();
      return;
    case OpKind::relu:
      n.value = in(0).cwiseMax(0.0);
      return;
    case OpKind::exp:
      n.value = in(0).array().exp().matrix();
      return;
    case OpKind::log: {
      const Tensor& a = in(0);
      for (Index i = 0; i < a.size(); ++i) {
        if (!(a.data()[i] > 0.0)) {
          std::ostringstream os;
          os << "log of non-positive value " << a.data()[i];
          fail(id, os.str());
        }
      }
      n.value = a.array().log().matrix();
      return;
    }
    case OpKind::power:
      n.value = in(0).array().pow(n.exponent).matrix();
      return;
    case OpKind::sum:
      n.value = Tensor::Constant(1, 1, in(0).sum());
      return;
    case OpKind::row_sum:
      n.value = in(0).rowwise().sum();
      return;
    case OpKind::dot: {
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      if (a.rows() != b.rows() || a.cols() != b.cols()) {
        fail(id, "shape mismatch " + shape_str(a) + " . " + shape_str(b));
      }
      n.value = Tensor::Constant(1, 1, a.cwiseProduct(b).sum());
      return;
    }
    case OpKind::l2norm_squared:
      n.value = Tensor::Constant(1, 1, in(0).squaredNorm());
      return;
    case OpKind::gather: {
      const Tensor& a = in(0);
      n.value.resize(static_cast<Index>(n.indices.size()), 1);
      for (std::size_t k = 0; k < n.indices.size(); ++k) {
        const auto [r, c] = n.indices[k];
        if (r < 0 || r >= a.rows() || c < 0 || c >= a.cols()) fail(id, "gather index out of range");
        n.value(static_cast<Index>(k), 0) = a(r, c);
      }
      return;
    }
    case OpKind::select_rows: {
      const Tensor& a = in(0);
      n.value.resize(static_cast<Index>(n.indices.size()), a.cols());
      for (std::size_t k = 0; k < n.indices.size(); ++k) {
        const Index r = n.indices[k].first;
        if (r < 0 || r >= a.rows()) fail(id, "row index out of range");
        n.value.row(static_cast<Index>(k)) = a.row(r);
      }
      return;
    }
    case OpKind::row_max_detached: {
      const Tensor& a = in(0);
      if (a.cols() == 0) fail(id, "row max of an empty row");
      n.value = a.rowwise().maxCoeff();
      return;
    }
    case OpKind::norm_guard: {
      n.value = in(0);
      if (n.value.cols() == 0) return;
      for (Index r = 0; r < n.value.rows(); ++r) {
        if (n.value.row(r).norm() < kNormGuardEpsilon) n.value(r, 0) += kNormGuardEpsilon;
      }
      return;
    }
  }
}

void Graph::propagate(std::size_t id) {
  Node& n = nodes_[id];
  const Tensor& g = n.adjoint;
  auto operand = [&](std::size_t k) -> Node& { return nodes_[n.operands[k]]; };

  switch (n.kind) {
    case OpKind::constant:
    case OpKind::parameter:
    case OpKind::row_max_detached:
      return;
    case OpKind::add:
    case OpKind::subtract: {
      Node& a = operand(0);
      Node& b = operand(1);
      accumulate(a.adjoint, reduce_to(g, a.value.rows(), a.value.cols()));
      Tensor gb = reduce_to(g, b.value.rows(), b.value.cols());
      if (n.kind == OpKind::subtract) gb = -gb;
      accumulate(b.adjoint, gb);
      return;
    }
    case OpKind::multiply: {
      Node& a = operand(0);
      Node& b = operand(1);
      const Index rows = g.rows();
      const Index cols = g.cols();
      const Tensor av = expand(a.value, rows, cols);
      const Tensor bv = expand(b.value, rows, cols);
      accumulate(a.adjoint, reduce_to(g.cwiseProduct(bv), a.value.rows(), a.value.cols()));
      accumulate(b.adjoint, reduce_to(g.cwiseProduct(av), b.value.rows(), b.value.cols()));
      return;
    }
    case OpKind::matmul: {
      Node& a = operand(0);
      Node& b = operand(1);
      Tensor ga = g * b.value.transpose();
      Tensor gb = a.value.transpose() * g;
      accumulate(a.adjoint, ga);
      accumulate(b.adjoint, gb);
      return;
    }
    case OpKind::transpose:
      accumulate(operand(0).adjoint, g.transpose());
      return;
    case OpKind::relu: {
      Node& a = operand(0);
      // Derivative at exactly 0 is 0.
      Tensor mask = (a.value.array() > 0.0).cast<double>().matrix();
      accumulate(a.adjoint, g.cwiseProduct(mask));
      return;
    }
    case OpKind::exp:
      accumulate(operand(0).adjoint, g.cwiseProduct(n.value));
      return;
    case OpKind::log: {
      Node& a = operand(0);
      accumulate(a.adjoint, g.cwiseQuotient(a.value));
      return;
    }
    case OpKind::power: {
      Node& a = operand(0);
      Tensor d = (n.exponent * a.value.array().pow(n.exponent - 1.0)).matrix();
      accumulate(a.adjoint, g.cwiseProduct(d));
      return;
    }
    case OpKind::sum: {
      Node& a = operand(0);
      accumulate(a.adjoint, Tensor::Constant(a.value.rows(), a.value.cols(), g(0, 0)));
      return;
    }
    case OpKind::row_sum: {
      Node& a = operand(0);
      accumulate(a.adjoint, expand(g, a.value.rows(), a.value.cols()));
      return;
    }
    case OpKind::dot: {
      Node& a = operand(0);
      Node& b = operand(1);
      Tensor ga = g(0, 0) * b.value;
      Tensor gb = g(0, 0) * a.value;
      accumulate(a.adjoint, ga);
      accumulate(b.adjoint, gb);
      return;
    }
    case OpKind::l2norm_squared: {
      Node& a = operand(0);
      accumulate(a.adjoint, Tensor(2.0 * g(0, 0) * a.value));
      return;
    }
    case OpKind::gather: {
      Node& a = operand(0);
      Tensor ga = Tensor::Zero(a.value.rows(), a.value.cols());
      for (std::size_t k = 0; k < n.indices.size(); ++k) {
        const auto [r, c] = n.indices[k];
        ga(r, c) += g(static_cast<Index>(k), 0);
      }
      accumulate(a.adjoint, ga);
      return;
    }
    case OpKind::select_rows: {
      Node& a = operand(0);
      Tensor ga = Tensor::Zero(a.value.rows(), a.value.cols());
      for (std::size_t k = 0; k < n.indices.size(); ++k) {
        ga.row(n.indices[k].first) += g.row(static_cast<Index>(k));
      }
      accumulate(a.adjoint, ga);
      return;
    }
    case OpKind::norm_guard:
      accumulate(operand(0).adjoint, g);
      return;
  }
}

Gradients Graph::backward(const Expr& root) {
  Node& r = node(root);
  if (r.value.rows() != 1 || r.value.cols() != 1) {
    fail(root.id(), "backward requires a scalar root, got " + shape_str(r.value));
  }
  if (stale_) fail(root.id(), "backward on stale forward values; call evaluate() first");

  const auto mark = reachable(root.id());
  for (std::size_t i = 0; i < nodes_.size(); ++i) nodes_[i].adjoint.resize(0, 0);
  r.adjoint = Tensor::Ones(1, 1);
  for (std::size_t i = root.id() + 1; i-- > 0;) {
    if (!mark[i] || nodes_[i].adjoint.size() == 0) continue;
    propagate(i);
  }

  Gradients out;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    Node& n = nodes_[i];
    if (n.kind != OpKind::parameter) continue;
    if (n.adjoint.size() == 0) n.adjoint = Tensor::Zero(n.value.rows(), n.value.cols());
    out.grads_.emplace(i, n.adjoint);
  }
  return out;
}

Expr make_node(OpKind kind, std::vector<Expr> operands, double exponent, IndexPairs indices) {
  if (operands.empty()) throw AutodiffError("operator without operands");
  Graph& g = operands.front().graph();
  Graph::Node n;
  n.kind = kind;
  n.exponent = exponent;
  n.indices = std::move(indices);
  for (const Expr& e : operands) {
    if (&e.graph() != &g) throw AutodiffError(std::string(op_name(kind)) + ": operands from different graphs");
    n.operands.push_back(e.id());
  }
  return g.push(std::move(n));
}

Expr add(const Expr& a, const Expr& b) { return make_node(OpKind::add, {a, b}, 0.0, {}); }
Expr subtract(const Expr& a, const Expr& b) { return make_node(OpKind::subtract, {a, b}, 0.0, {}); }
Expr multiply(const Expr& a, const Expr& b) { return make_node(OpKind::multiply, {a, b}, 0.0, {}); }
Expr scale(const Expr& a, double factor) { return multiply(a, a.graph().constant(factor)); }
Expr matmul(const Expr& a, const Expr& b) { return make_node(OpKind::matmul, {a, b}, 0.0, {}); }
Expr transpose(const Expr& a) { return make_node(OpKind::transpose, {a}, 0.0, {}); }
Expr relu(const Expr& a) { return make_node(OpKind::relu, {a}, 0.0, {}); }
Expr exp(const Expr& a) { return make_node(OpKind::exp, {a}, 0.0, {}); }
Expr log(const Expr& a) { return make_node(OpKind::log, {a}, 0.0, {}); }
Expr power(const Expr& a, double exponent) { return make_node(OpKind::power, {a}, exponent, {}); }
Expr sum(const Expr& a) { return make_node(OpKind::sum, {a}, 0.0, {}); }
Expr row_sum(const Expr& a) { return make_node(OpKind::row_sum, {a}, 0.0, {}); }
Expr dot(const Expr& a, const Expr& b) { return make_node(OpKind::dot, {a, b}, 0.0, {}); }
Expr l2norm_squared(const Expr& a) { return make_node(OpKind::l2norm_squared, {a}, 0.0, {}); }

Expr gather(const Expr& a, IndexPairs at) { return make_node(OpKind::gather, {a}, 0.0, std::move(at)); }

Expr select_rows(const Expr& a, const std::vector<Index>& rows) {
  IndexPairs at;
  at.reserve(rows.size());
  for (Index r : rows) at.emplace_back(r, 0);
  return make_node(OpKind::select_rows, {a}, 0.0, std::move(at));
}

Expr row_max_detached(const Expr& a) { return make_node(OpKind::row_max_detached, {a}, 0.0, {}); }
Expr norm_guard(const Expr& a) { return make_node(OpKind::norm_guard, {a}, 0.0, {}); }

GradReport check_gradient(Graph& graph, const Expr& root, double step) {
  if (!(step > 0.0)) throw AutodiffError("check_gradient: step must be positive");
  graph.evaluate(root);
  const Gradients analytic = graph.backward(root);

  GradReport report;
  report.step = step;
  for (const Expr& leaf : graph.parameters()) {
    const Tensor original = leaf.value();
    const Tensor& a = analytic[leaf];
    double worst = 0.0;
    Tensor probe = original;
    for (Index i = 0; i < original.size(); ++i) {
      probe.data()[i] = original.data()[i] + step;
      graph.set_value(leaf, probe);
      const double up = graph.evaluate(root)(0, 0);
      probe.data()[i] = original.data()[i] - step;
      graph.set_value(leaf, probe);
      const double down = graph.evaluate(root)(0, 0);
      probe.data()[i] = original.data()[i];

      const double fd = (up - down) / (2.0 * step);
      const double an = a.data()[i];
      const double denom = std::max({std::abs(an), std::abs(fd), 1e-8});
      worst = std::max(worst, std::abs(an - fd) / denom);
    }
    graph.set_value(leaf, original);
    const std::string& name = graph.name_of(leaf);
    const std::string key = name.empty() ? "node" + std::to_string(leaf.id()) : name;
    report.max_relative_error[key] = std::max(report.max_relative_error[key], worst);
    report.max_error = std::max(report.max_error, worst);
  }
  graph.evaluate(root);
  return report;
}

}  // namespace fcad
