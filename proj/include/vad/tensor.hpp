#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "vad/errors.hpp"

// Minimal dense-tensor engine with a reverse-mode tape. Tensors are
// row-major, rank <= 2, f64. A Tape is built per optimization step;
// parameters are re-registered as leaves each step.

namespace vad {

enum class Activation { kTanh, kSigmoid, kRelu, kIdentity };
enum class EwKind { kAdd, kSub, kMul };
enum class ReduceKind { kSum, kMean };
enum class Axis { kAll, kRows };

struct Tensor {
  std::vector<std::size_t> shape;  // empty shape = scalar
  std::vector<double> data;
  bool requires_grad = false;
  std::vector<double> grad;  // same length as data iff requires_grad

  std::size_t numel() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }
  std::size_t rows() const { return rank() == 2 ? shape[0] : (rank() == 1 ? shape[0] : 1); }
  std::size_t cols() const { return rank() == 2 ? shape[1] : 1; }
  double& at(std::size_t i, std::size_t j) { return data[i * cols() + j]; }
  double at(std::size_t i, std::size_t j) const { return data[i * cols() + j]; }
};

inline std::size_t shape_numel(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

inline std::string shape_str(const std::vector<std::size_t>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

inline Tensor new_tensor(std::vector<std::size_t> shape, std::vector<double> data,
                         bool requires_grad = false) {
  if (shape.size() > 2)
    throw DimensionError("new_tensor: unsupported rank " + std::to_string(shape.size()));
  if (shape_numel(shape) != data.size())
    throw DimensionError("new_tensor: shape " + shape_str(shape) + " does not match data length " +
                         std::to_string(data.size()));
  Tensor t;
  t.shape = std::move(shape);
  t.data = std::move(data);
  t.requires_grad = requires_grad;
  if (requires_grad) t.grad.assign(t.data.size(), 0.0);
  return t;
}

inline Tensor zeros(std::vector<std::size_t> shape, bool requires_grad = false) {
  std::vector<double> data(shape_numel(shape), 0.0);
  return new_tensor(std::move(shape), std::move(data), requires_grad);
}

inline Tensor scalar_tensor(double v) { return new_tensor({}, {v}); }

class Tape;

struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;
};

class Tape {
 public:
  Var leaf(Tensor t) {
    if (t.rank() > 2) throw DimensionError("leaf: unsupported rank " + std::to_string(t.rank()));
    if (t.requires_grad && t.grad.size() != t.data.size()) t.grad.assign(t.data.size(), 0.0);
    check_finite(t.data, "leaf");
    Node n;
    n.op = Op::kLeaf;
    n.value = std::move(t);
    n.needs_grad = n.value.requires_grad;
    return push(std::move(n));
  }

  Var constant(Tensor t) {
    t.requires_grad = false;
    t.grad.clear();
    return leaf(std::move(t));
  }

  Var elementwise(EwKind kind, Var a, Var b) {
    const Tensor& ta = value(a);
    const Tensor& tb = value(b);
    const bool same = ta.shape == tb.shape;
    const bool bcast = ta.rank() == 2 && tb.rank() == 1 && ta.shape[1] == tb.shape[0];
    if (!same && !bcast)
      throw DimensionError("elementwise: incompatible shapes " + shape_str(ta.shape) + " vs " +
                           shape_str(tb.shape));
    Node n;
    n.op = kind == EwKind::kAdd ? Op::kAdd : (kind == EwKind::kSub ? Op::kSub : Op::kMul);
    n.a = a.id;
    n.b = b.id;
    n.value.shape = ta.shape;
    n.value.data.resize(ta.numel());
    const std::size_t rows = ta.rows(), cols = ta.cols();
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < cols; ++j) {
        const double x = ta.data[i * cols + j];
        const double y = same ? tb.data[i * cols + j] : tb.data[j];
        double r = 0;
        switch (n.op) {
          case Op::kAdd: r = x + y; break;
          case Op::kSub: r = x - y; break;
          default: r = x * y; break;
        }
        n.value.data[i * cols + j] = r;
      }
    return finish(std::move(n), "elementwise");
  }

  Var add(Var a, Var b) { return elementwise(EwKind::kAdd, a, b); }
  Var sub(Var a, Var b) { return elementwise(EwKind::kSub, a, b); }
  Var mul(Var a, Var b) { return elementwise(EwKind::kMul, a, b); }

  Var matmul(Var a, Var b) {
    const Tensor& ta = value(a);
    const Tensor& tb = value(b);
    if (ta.rank() != 2 || tb.rank() != 2)
      throw DimensionError("matmul: both operands must be rank 2");
    if (ta.shape[1] != tb.shape[0])
      throw DimensionError("matmul: inner extents differ, " + shape_str(ta.shape) + " vs " +
                           shape_str(tb.shape));
    const std::size_t nr = ta.shape[0], nk = ta.shape[1], nm = tb.shape[1];
    Node n;
    n.op = Op::kMatMul;
    n.a = a.id;
    n.b = b.id;
    n.value.shape = {nr, nm};
    n.value.data.assign(nr * nm, 0.0);
    const double* pa = ta.data.data();
    const double* pb = tb.data.data();
    double* pc = n.value.data.data();
    for (std::size_t i = 0; i < nr; ++i)
      for (std::size_t k = 0; k < nk; ++k) {
        const double aik = pa[i * nk + k];
        const double* brow = pb + k * nm;
        double* crow = pc + i * nm;
        for (std::size_t j = 0; j < nm; ++j) crow[j] += aik * brow[j];
      }
    return finish(std::move(n), "matmul");
  }

  Var activation(Activation kind, Var x) {
    if (kind == Activation::kIdentity) return x;
    const Tensor& tx = value(x);
    Node n;
    n.op = kind == Activation::kTanh ? Op::kTanh
                                     : (kind == Activation::kSigmoid ? Op::kSigmoid : Op::kRelu);
    n.a = x.id;
    n.value.shape = tx.shape;
    n.value.data.resize(tx.numel());
    for (std::size_t i = 0; i < tx.numel(); ++i) {
      const double v = tx.data[i];
      switch (n.op) {
        case Op::kTanh: n.value.data[i] = std::tanh(v); break;
        case Op::kSigmoid: n.value.data[i] = 1.0 / (1.0 + std::exp(-v)); break;
        default: n.value.data[i] = v > 0.0 ? v : 0.0; break;
      }
    }
    return finish(std::move(n), "activation");
  }

  Var exp(Var x) {
    const Tensor& tx = value(x);
    Node n;
    n.op = Op::kExp;
    n.a = x.id;
    n.value.shape = tx.shape;
    n.value.data.resize(tx.numel());
    for (std::size_t i = 0; i < tx.numel(); ++i) n.value.data[i] = std::exp(tx.data[i]);
    return finish(std::move(n), "exp");
  }

  Var scale(Var x, double c) {
    const Tensor& tx = value(x);
    Node n;
    n.op = Op::kScale;
    n.a = x.id;
    n.c = c;
    n.value.shape = tx.shape;
    n.value.data.resize(tx.numel());
    for (std::size_t i = 0; i < tx.numel(); ++i) n.value.data[i] = c * tx.data[i];
    return finish(std::move(n), "scale");
  }

  Var add_scalar(Var x, double c) {
    const Tensor& tx = value(x);
    Node n;
    n.op = Op::kAddScalar;
    n.a = x.id;
    n.c = c;
    n.value.shape = tx.shape;
    n.value.data.resize(tx.numel());
    for (std::size_t i = 0; i < tx.numel(); ++i) n.value.data[i] = tx.data[i] + c;
    return finish(std::move(n), "add_scalar");
  }

  Var reduce(ReduceKind kind, Var x, Axis axis) {
    const Tensor& tx = value(x);
    Node n;
    n.a = x.id;
    if (axis == Axis::kAll) {
      if (kind == ReduceKind::kMean && tx.numel() == 0)
        throw NumericError("reduce: mean over zero elements");
      n.op = kind == ReduceKind::kSum ? Op::kSumAll : Op::kMeanAll;
      double s = 0;
      for (double v : tx.data) s += v;
      if (kind == ReduceKind::kMean) s /= static_cast<double>(tx.numel());
      n.value.shape = {};
      n.value.data = {s};
    } else {
      if (tx.rank() != 2) throw DimensionError("reduce: row reduction needs a rank-2 tensor");
      const std::size_t rows = tx.shape[0], cols = tx.shape[1];
      if (kind == ReduceKind::kMean && cols == 0)
        throw NumericError("reduce: mean over zero elements");
      n.op = kind == ReduceKind::kSum ? Op::kSumRows : Op::kMeanRows;
      n.value.shape = {rows};
      n.value.data.assign(rows, 0.0);
      for (std::size_t i = 0; i < rows; ++i) {
        double s = 0;
        for (std::size_t j = 0; j < cols; ++j) s += tx.data[i * cols + j];
        n.value.data[i] = kind == ReduceKind::kMean ? s / static_cast<double>(cols) : s;
      }
    }
    return finish(std::move(n), "reduce");
  }

  Var sum_all(Var x) { return reduce(ReduceKind::kSum, x, Axis::kAll); }
  Var mean_all(Var x) { return reduce(ReduceKind::kMean, x, Axis::kAll); }
  Var sum_rows(Var x) { return reduce(ReduceKind::kSum, x, Axis::kRows); }

  // Accumulates d(loss)/d(node) into every requires_grad leaf reachable from
  // loss. Traverses nodes in strict reverse insertion order exactly once.
  void backward(Var loss) {
    Tensor& lt = nodes_[loss.id].value;
    if (lt.numel() != 1)
      throw NumericError("backward: loss must be scalar, got shape " + shape_str(lt.shape));
    for (Node& n : nodes_)
      if (n.needs_grad) n.value.grad.assign(n.value.data.size(), 0.0);
    if (!nodes_[loss.id].needs_grad) return;  // no differentiable leaf feeds the loss
    nodes_[loss.id].value.grad[0] = 1.0;
    for (std::size_t idx = loss.id + 1; idx-- > 0;) {
      Node& n = nodes_[idx];
      if (!n.needs_grad || n.op == Op::kLeaf) continue;
      backprop_node(n);
    }
  }

  const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
  std::span<const double> grad(Var v) const {
    const Tensor& t = nodes_.at(v.id).value;
    return {t.grad.data(), t.grad.size()};
  }
  std::size_t size() const { return nodes_.size(); }

 private:
  enum class Op {
    kLeaf,
    kAdd,
    kSub,
    kMul,
    kMatMul,
    kTanh,
    kSigmoid,
    kRelu,
    kExp,
    kScale,
    kAddScalar,
    kSumAll,
    kMeanAll,
    kSumRows,
    kMeanRows,
  };

  struct Node {
    Op op = Op::kLeaf;
    std::size_t a = 0, b = 0;  // input node ids
    double c = 0.0;            // saved scalar for kScale / kAddScalar
    Tensor value;
    bool needs_grad = false;
  };

  std::vector<Node> nodes_;

  Var push(Node n) {
    nodes_.push_back(std::move(n));
    return Var{this, nodes_.size() - 1};
  }

  Var finish(Node n, const char* opname) {
    n.needs_grad = inputs_need_grad(n);
    n.value.requires_grad = n.needs_grad;
    check_finite(n.value.data, opname);
    return push(std::move(n));
  }

  bool inputs_need_grad(const Node& n) const {
    switch (n.op) {
      case Op::kAdd:
      case Op::kSub:
      case Op::kMul:
      case Op::kMatMul:
        return nodes_[n.a].needs_grad || nodes_[n.b].needs_grad;
      case Op::kLeaf:
        return n.value.requires_grad;
      default:
        return nodes_[n.a].needs_grad;
    }
  }

  static void check_finite(const std::vector<double>& data, const char* opname) {
    for (double v : data)
      if (!std::isfinite(v))
        throw NumericError(std::string(opname) + ": non-finite value produced");
  }

  void accum(std::size_t id, std::size_t flat, double g) {
    Node& n = nodes_[id];
    if (n.needs_grad) n.value.grad[flat] += g;
  }

  void backprop_node(Node& n) {
    const std::vector<double>& g = n.value.grad;
    Node& na = nodes_[n.a];
    switch (n.op) {
      case Op::kAdd:
      case Op::kSub:
      case Op::kMul: {
        Node& nb = nodes_[n.b];
        const bool bcast = nb.value.rank() == 1 && na.value.rank() == 2;
        const std::size_t rows = na.value.rows(), cols = na.value.cols();
        for (std::size_t i = 0; i < rows; ++i)
          for (std::size_t j = 0; j < cols; ++j) {
            const std::size_t fa = i * cols + j;
            const std::size_t fb = bcast ? j : fa;
            const double gi = g[fa];
            switch (n.op) {
              case Op::kAdd:
                accum(n.a, fa, gi);
                accum(n.b, fb, gi);
                break;
              case Op::kSub:
                accum(n.a, fa, gi);
                accum(n.b, fb, -gi);
                break;
              default:
                accum(n.a, fa, gi * nb.value.data[fb]);
                accum(n.b, fb, gi * na.value.data[fa]);
                break;
            }
          }
        break;
      }
      case Op::kMatMul: {
        Node& nb = nodes_[n.b];
        const std::size_t nr = na.value.shape[0], nk = na.value.shape[1],
                          nm = nb.value.shape[1];
        if (na.needs_grad) {
          // dA = G * B^T
          for (std::size_t i = 0; i < nr; ++i)
            for (std::size_t k = 0; k < nk; ++k) {
              double s = 0;
              for (std::size_t j = 0; j < nm; ++j) s += g[i * nm + j] * nb.value.data[k * nm + j];
              na.value.grad[i * nk + k] += s;
            }
        }
        if (nb.needs_grad) {
          // dB = A^T * G
          for (std::size_t k = 0; k < nk; ++k)
            for (std::size_t i = 0; i < nr; ++i) {
              const double aik = na.value.data[i * nk + k];
              const double* grow = g.data() + i * nm;
              double* brow = nb.value.grad.data() + k * nm;
              for (std::size_t j = 0; j < nm; ++j) brow[j] += aik * grow[j];
            }
        }
        break;
      }
      case Op::kTanh:
        for (std::size_t i = 0; i < g.size(); ++i) {
          const double y = n.value.data[i];
          accum(n.a, i, g[i] * (1.0 - y * y));
        }
        break;
      case Op::kSigmoid:
        for (std::size_t i = 0; i < g.size(); ++i) {
          const double y = n.value.data[i];
          accum(n.a, i, g[i] * y * (1.0 - y));
        }
        break;
      case Op::kRelu:
        for (std::size_t i = 0; i < g.size(); ++i)
          accum(n.a, i, na.value.data[i] > 0.0 ? g[i] : 0.0);
        break;
      case Op::kExp:
        for (std::size_t i = 0; i < g.size(); ++i) accum(n.a, i, g[i] * n.value.data[i]);
        break;
      case Op::kScale:
        for (std::size_t i = 0; i < g.size(); ++i) accum(n.a, i, g[i] * n.c);
        break;
      case Op::kAddScalar:
        for (std::size_t i = 0; i < g.size(); ++i) accum(n.a, i, g[i]);
        break;
      case Op::kSumAll:
        for (std::size_t i = 0; i < na.value.numel(); ++i) accum(n.a, i, g[0]);
        break;
      case Op::kMeanAll: {
        const double w = g[0] / static_cast<double>(na.value.numel());
        for (std::size_t i = 0; i < na.value.numel(); ++i) accum(n.a, i, w);
        break;
      }
      case Op::kSumRows: {
        const std::size_t rows = na.value.shape[0], cols = na.value.shape[1];
        for (std::size_t i = 0; i < rows; ++i)
          for (std::size_t j = 0; j < cols; ++j) accum(n.a, i * cols + j, g[i]);
        break;
      }
      case Op::kMeanRows: {
        const std::size_t rows = na.value.shape[0], cols = na.value.shape[1];
        for (std::size_t i = 0; i < rows; ++i) {
          const double w = g[i] / static_cast<double>(cols);
          for (std::size_t j = 0; j < cols; ++j) accum(n.a, i * cols + j, w);
        }
        break;
      }
      case Op::kLeaf:
        break;
    }
  }
};

// Max relative disagreement between the tape gradient of f at x and a
// central finite difference. f builds a scalar-valued graph from one leaf.
template <typename F>
double finite_diff_check(F&& f, const Tensor& x, double eps) {
  if (eps <= 0) throw ConfigError("finite_diff_check: eps must be positive");
  std::vector<double> analytic;
  {
    Tape tape;
    Tensor leaf = x;
    leaf.requires_grad = true;
    Var xv = tape.leaf(std::move(leaf));
    Var loss = f(tape, xv);
    tape.backward(loss);
    auto g = tape.grad(xv);
    analytic.assign(g.begin(), g.end());
  }
  auto eval = [&](const std::vector<double>& pt) {
    Tape tape;
    Tensor leaf = x;
    leaf.data = pt;
    leaf.requires_grad = false;
    leaf.grad.clear();
    Var xv = tape.leaf(std::move(leaf));
    Var loss = f(tape, xv);
    return tape.value(loss).data[0];
  };
  double worst = 0.0;
  std::vector<double> pt = x.data;
  for (std::size_t i = 0; i < pt.size(); ++i) {
    const double orig = pt[i];
    pt[i] = orig + eps;
    const double fp = eval(pt);
    pt[i] = orig - eps;
    const double fm = eval(pt);
    pt[i] = orig;
    const double numeric = (fp - fm) / (2.0 * eps);
    const double denom = std::max(1e-8, std::abs(analytic[i]) + std::abs(numeric));
    worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
  }
  return worst;
}

}  // namespace vad
