#pragma once

// Minimal reverse-mode differentiation over batched tensors.
//
// A Graph is an append-only list of operation records; node ids are
// positions in that list, so the list is always topologically ordered.
// Graphs never hold computed values: evaluate() returns a Forward that owns
// every intermediate, and backpropagate() reads only that Forward. One graph
// can therefore be evaluated from several threads at once.

#include <algorithm>
#include <cmath>
#include <compare>
#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "tsconceal/error.hpp"
#include "tsconceal/tensor.hpp"

namespace tsconceal::diff {

struct NodeId {
  std::size_t index = 0;
  friend auto operator<=>(NodeId, NodeId) = default;
};

enum class Op {
  leaf,
  constant,
  matmul,        // [N,D] x [D,H] -> [N,H]
  bias_add,      // [N,H] + [H]  or  [N,C,L] + [C]
  conv1d,        // [N,Ci,L] * [Co,Ci,K], zero padding -> [N,Co,L+2p-K+1]
  relu,
  sigmoid,
  tanh,
  log,
  add,
  sub,
  mul,
  div,
  scale,         // c * x
  add_scalar,    // x + c
  clamp,         // min(max(x, lo), hi)
  mean_time,     // [N,C,L] -> [N,C]
  reshape_rows,  // [N,...] -> [N,tail...]
  softmax,       // row-wise over [N,K]
  softmax_xent,  // -sum_k t_k log softmax(z)_k per row: [N,K],[N,K] -> [N]
  sum,           // all elements -> [1]
  time_diff,     // [N,L] -> [N,L-1], x[t+1] - x[t]
  smooth_abs,    // sqrt(x^2 + knee^2)
  column,        // [N,L] -> [N,1], column j
};

constexpr std::string_view op_name(Op op) noexcept {
  switch (op) {
    case Op::leaf: return "leaf";
    case Op::constant: return "constant";
    case Op::matmul: return "matmul";
    case Op::bias_add: return "bias_add";
    case Op::conv1d: return "conv1d";
    case Op::relu: return "relu";
    case Op::sigmoid: return "sigmoid";
    case Op::tanh: return "tanh";
    case Op::log: return "log";
    case Op::add: return "add";
    case Op::sub: return "sub";
    case Op::mul: return "mul";
    case Op::div: return "div";
    case Op::scale: return "scale";
    case Op::add_scalar: return "add_scalar";
    case Op::clamp: return "clamp";
    case Op::mean_time: return "mean_time";
    case Op::reshape_rows: return "reshape_rows";
    case Op::softmax: return "softmax";
    case Op::softmax_xent: return "softmax_xent";
    case Op::sum: return "sum";
    case Op::time_diff: return "time_diff";
    case Op::smooth_abs: return "smooth_abs";
    case Op::column: return "column";
  }
  return "?";
}

struct Node {
  Op op = Op::leaf;
  std::vector<NodeId> inputs;
  double param0 = 0.0;  // scale factor, scalar offset, clamp low, knee
  double param1 = 0.0;  // clamp high
  std::size_t padding = 0;
  std::size_t column = 0;
  Shape tail;           // reshape_rows target
  bool differentiable = false;
  bool requires_grad = false;
  std::string name;
  Tensor value;         // constants only
};

class Graph {
 public:
  /// An input slot filled at evaluate() time.
  NodeId leaf(std::string name, bool differentiable = true) {
    Node n;
    n.op = Op::leaf;
    n.differentiable = differentiable;
    n.requires_grad = differentiable;
    n.name = std::move(name);
    return push(std::move(n));
  }

  NodeId constant(Tensor value) {
    Node n;
    n.op = Op::constant;
    n.value = std::move(value);
    return push(std::move(n));
  }

  NodeId matmul(NodeId a, NodeId b) { return binary(Op::matmul, a, b); }
  NodeId bias_add(NodeId x, NodeId bias) { return binary(Op::bias_add, x, bias); }

  NodeId conv1d(NodeId x, NodeId weight, std::size_t padding) {
    Node n = make(Op::conv1d, {x, weight});
    n.padding = padding;
    return push(std::move(n));
  }

  NodeId relu(NodeId x) { return unary(Op::relu, x); }
  NodeId sigmoid(NodeId x) { return unary(Op::sigmoid, x); }
  NodeId tanh(NodeId x) { return unary(Op::tanh, x); }
  NodeId log(NodeId x) { return unary(Op::log, x); }
  NodeId add(NodeId a, NodeId b) { return binary(Op::add, a, b); }
  NodeId sub(NodeId a, NodeId b) { return binary(Op::sub, a, b); }
  NodeId mul(NodeId a, NodeId b) { return binary(Op::mul, a, b); }
  NodeId div(NodeId a, NodeId b) { return binary(Op::div, a, b); }

  NodeId scale(NodeId x, double factor) {
    Node n = make(Op::scale, {x});
    n.param0 = factor;
    return push(std::move(n));
  }

  NodeId add_scalar(NodeId x, double offset) {
    Node n = make(Op::add_scalar, {x});
    n.param0 = offset;
    return push(std::move(n));
  }

  NodeId clamp(NodeId x, double lo, double hi) {
    if (!(lo <= hi)) throw InvalidArgument("clamp requires lo <= hi");
    Node n = make(Op::clamp, {x});
    n.param0 = lo;
    n.param1 = hi;
    return push(std::move(n));
  }

  NodeId mean_time(NodeId x) { return unary(Op::mean_time, x); }

  NodeId reshape_rows(NodeId x, Shape tail) {
    Node n = make(Op::reshape_rows, {x});
    n.tail = std::move(tail);
    return push(std::move(n));
  }

  NodeId softmax(NodeId logits) { return unary(Op::softmax, logits); }
  NodeId softmax_xent(NodeId logits, NodeId targets) {
    return binary(Op::softmax_xent, logits, targets);
  }
  NodeId sum(NodeId x) { return unary(Op::sum, x); }
  NodeId time_diff(NodeId x) { return unary(Op::time_diff, x); }

  NodeId smooth_abs(NodeId x, double knee) {
    if (!(knee > 0.0)) throw InvalidArgument("smooth_abs knee must be positive");
    Node n = make(Op::smooth_abs, {x});
    n.param0 = knee;
    return push(std::move(n));
  }

  NodeId column(NodeId x, std::size_t index) {
    Node n = make(Op::column, {x});
    n.column = index;
    return push(std::move(n));
  }

  void set_output(NodeId id) {
    check_id(id);
    output_ = id;
  }

  /// Defaults to the most recently added node.
  NodeId output() const {
    if (output_) return *output_;
    if (nodes_.empty()) throw InvalidArgument("empty graph has no output");
    return NodeId{nodes_.size() - 1};
  }

  std::size_t size() const noexcept { return nodes_.size(); }
  const Node& node(NodeId id) const {
    check_id(id);
    return nodes_[id.index];
  }

  std::vector<NodeId> differentiable_leaves() const {
    std::vector<NodeId> out;
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      if (nodes_[i].op == Op::leaf && nodes_[i].differentiable) out.push_back(NodeId{i});
    }
    return out;
  }

 private:
  void check_id(NodeId id) const {
    if (id.index >= nodes_.size()) {
      throw InvalidArgument("node id " + std::to_string(id.index) + " not in graph");
    }
  }

  Node make(Op op, std::vector<NodeId> inputs) const {
    Node n;
    n.op = op;
    for (NodeId in : inputs) {
      check_id(in);
      n.requires_grad = n.requires_grad || nodes_[in.index].requires_grad;
    }
    n.inputs = std::move(inputs);
    return n;
  }

  NodeId unary(Op op, NodeId x) { return push(make(op, {x})); }
  NodeId binary(Op op, NodeId a, NodeId b) { return push(make(op, {a, b})); }

  NodeId push(Node n) {
    nodes_.push_back(std::move(n));
    return NodeId{nodes_.size() - 1};
  }

  std::vector<Node> nodes_;
  std::optional<NodeId> output_;
};

using Bindings = std::map<NodeId, Tensor>;
using Gradients = std::map<NodeId, Tensor>;

/// Forward values of one evaluate() call.
class Forward {
 public:
  Forward() = default;

  const Tensor& value(NodeId id) const {
    if (id.index >= values_.size()) throw InvalidArgument("node id outside forward cache");
    return values_[id.index];
  }
  const Tensor& output() const { return value(output_); }
  NodeId output_id() const noexcept { return output_; }
  std::size_t size() const noexcept { return values_.size(); }
  const std::vector<Tensor>& values() const noexcept { return values_; }

 private:
  friend Forward evaluate(const Graph&, const Bindings&);
  std::vector<Tensor> values_;
  NodeId output_;
};

namespace detail {

[[noreturn]] inline void shape_fail(const Node& n, const std::string& what) {
  throw ShapeError(std::string(op_name(n.op)) + ": " + what);
}

inline void require_same(const Node& n, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    shape_fail(n, "operand shapes " + shape_string(a.shape()) + " and " + shape_string(b.shape()) +
                      " differ");
  }
}

inline void require_rank(const Node& n, const Tensor& t, std::size_t rank) {
  if (t.rank() != rank) {
    shape_fail(n, "expected rank " + std::to_string(rank) + ", got " + shape_string(t.shape()));
  }
}

inline std::size_t conv_out_length(const Node& n, std::size_t length, std::size_t kernel) {
  const std::size_t padded = length + 2 * n.padding;
  if (padded < kernel) shape_fail(n, "kernel longer than padded input");
  return padded - kernel + 1;
}

template <class F>
Tensor map_unary(const Tensor& x, F f) {
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  return y;
}

inline double stable_sigmoid(double v) {
  if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

inline Tensor forward_node(const Node& n, const std::vector<Tensor>& vals, const Bindings& bindings,
                           std::size_t self) {
  auto in = [&](std::size_t k) -> const Tensor& { return vals[n.inputs[k].index]; };
  switch (n.op) {
    case Op::leaf: {
      auto it = bindings.find(NodeId{self});
      if (it == bindings.end()) {
        throw UnboundLeafError("leaf '" + n.name + "' (node " + std::to_string(self) + ") is unbound");
      }
      return it->second;
    }
    case Op::constant:
      return n.value;
    case Op::matmul: {
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      require_rank(n, a, 2);
      require_rank(n, b, 2);
      if (a.dim(1) != b.dim(0)) {
        shape_fail(n, shape_string(a.shape()) + " x " + shape_string(b.shape()));
      }
      const std::size_t rows = a.dim(0), inner = a.dim(1), cols = b.dim(1);
      Tensor c({rows, cols});
      for (std::size_t r = 0; r < rows; ++r) {
        double* out = c.data() + r * cols;
        for (std::size_t k = 0; k < inner; ++k) {
          const double av = a[r * inner + k];
          const double* brow = b.data() + k * cols;
          for (std::size_t j = 0; j < cols; ++j) out[j] += av * brow[j];
        }
      }
      return c;
    }
    case Op::bias_add: {
      const Tensor& x = in(0);
      const Tensor& b = in(1);
      require_rank(n, b, 1);
      if (x.rank() < 2 || x.rank() > 3 || x.dim(1) != b.dim(0)) {
        shape_fail(n, shape_string(x.shape()) + " + " + shape_string(b.shape()));
      }
      Tensor y = x;
      const std::size_t channels = x.dim(1);
      const std::size_t inner = x.rank() == 3 ? x.dim(2) : 1;
      for (std::size_t r = 0; r < x.dim(0); ++r) {
        for (std::size_t c = 0; c < channels; ++c) {
          double* p = y.data() + (r * channels + c) * inner;
          for (std::size_t t = 0; t < inner; ++t) p[t] += b[c];
        }
      }
      return y;
    }
    case Op::conv1d: {
      const Tensor& x = in(0);
      const Tensor& w = in(1);
      require_rank(n, x, 3);
      require_rank(n, w, 3);
      if (x.dim(1) != w.dim(1)) {
        shape_fail(n, "input channels " + shape_string(x.shape()) + " vs weight " +
                          shape_string(w.shape()));
      }
      const std::size_t batch = x.dim(0), cin = x.dim(1), len = x.dim(2);
      const std::size_t cout = w.dim(0), kernel = w.dim(2);
      const std::size_t lout = conv_out_length(n, len, kernel);
      const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(n.padding);
      Tensor y({batch, cout, lout});
      for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t co = 0; co < cout; ++co) {
          double* out = y.data() + (b * cout + co) * lout;
          for (std::size_t ci = 0; ci < cin; ++ci) {
            const double* src = x.data() + (b * cin + ci) * len;
            for (std::size_t k = 0; k < kernel; ++k) {
              const double wv = w[(co * cin + ci) * kernel + k];
              const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(k) - pad;
              const std::ptrdiff_t t0 = std::max<std::ptrdiff_t>(0, -shift);
              const std::ptrdiff_t t1 = std::min<std::ptrdiff_t>(
                  static_cast<std::ptrdiff_t>(lout), static_cast<std::ptrdiff_t>(len) - shift);
              for (std::ptrdiff_t t = t0; t < t1; ++t) out[t] += wv * src[t + shift];
            }
          }
        }
      }
      return y;
    }
    case Op::relu:
      return map_unary(in(0), [](double v) { return v > 0.0 ? v : 0.0; });
    case Op::sigmoid:
      return map_unary(in(0), stable_sigmoid);
    case Op::tanh:
      return map_unary(in(0), [](double v) { return std::tanh(v); });
    case Op::log:
      return map_unary(in(0), [](double v) { return std::log(v); });
    case Op::add:
    case Op::sub:
    case Op::mul:
    case Op::div: {
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      require_same(n, a, b);
      Tensor y(a.shape());
      for (std::size_t i = 0; i < a.size(); ++i) {
        switch (n.op) {
          case Op::add: y[i] = a[i] + b[i]; break;
          case Op::sub: y[i] = a[i] - b[i]; break;
          case Op::mul: y[i] = a[i] * b[i]; break;
          default: y[i] = a[i] / b[i]; break;
        }
      }
      return y;
    }
    case Op::scale:
      return map_unary(in(0), [c = n.param0](double v) { return c * v; });
    case Op::add_scalar:
      return map_unary(in(0), [c = n.param0](double v) { return v + c; });
    case Op::clamp:
      return map_unary(in(0), [lo = n.param0, hi = n.param1](double v) {
        return std::min(std::max(v, lo), hi);
      });
    case Op::mean_time: {
      const Tensor& x = in(0);
      require_rank(n, x, 3);
      const std::size_t rows = x.dim(0) * x.dim(1), len = x.dim(2);
      Tensor y({x.dim(0), x.dim(1)});
      for (std::size_t r = 0; r < rows; ++r) {
        double acc = 0.0;
        for (std::size_t t = 0; t < len; ++t) acc += x[r * len + t];
        y[r] = acc / static_cast<double>(len);
      }
      return y;
    }
    case Op::reshape_rows: {
      const Tensor& x = in(0);
      Shape shape{x.dim(0)};
      shape.insert(shape.end(), n.tail.begin(), n.tail.end());
      if (shape_size(shape) != x.size()) {
        shape_fail(n, "cannot view " + shape_string(x.shape()) + " as " + shape_string(shape));
      }
      return Tensor(std::move(shape), std::vector<double>(x.values().begin(), x.values().end()));
    }
    case Op::softmax: {
      const Tensor& z = in(0);
      require_rank(n, z, 2);
      Tensor y(z.shape());
      const std::size_t k = z.dim(1);
      for (std::size_t r = 0; r < z.dim(0); ++r) {
        const double* zr = z.data() + r * k;
        double* yr = y.data() + r * k;
        const double m = *std::max_element(zr, zr + k);
        double total = 0.0;
        for (std::size_t j = 0; j < k; ++j) total += (yr[j] = std::exp(zr[j] - m));
        for (std::size_t j = 0; j < k; ++j) yr[j] /= total;
      }
      return y;
    }
    case Op::softmax_xent: {
      const Tensor& z = in(0);
      const Tensor& t = in(1);
      require_rank(n, z, 2);
      require_same(n, z, t);
      const std::size_t k = z.dim(1);
      Tensor y({z.dim(0)});
      for (std::size_t r = 0; r < z.dim(0); ++r) {
        const double* zr = z.data() + r * k;
        const double* tr = t.data() + r * k;
        const double m = *std::max_element(zr, zr + k);
        double total = 0.0;
        for (std::size_t j = 0; j < k; ++j) total += std::exp(zr[j] - m);
        const double lse = m + std::log(total);
        double loss = 0.0;
        for (std::size_t j = 0; j < k; ++j) {
          if (tr[j] != 0.0) loss -= tr[j] * (zr[j] - lse);
        }
        y[r] = loss;
      }
      return y;
    }
    case Op::sum: {
      const Tensor& x = in(0);
      double acc = 0.0;
      for (double v : x.values()) acc += v;
      return Tensor::scalar(acc);
    }
    case Op::time_diff: {
      const Tensor& x = in(0);
      require_rank(n, x, 2);
      if (x.dim(1) < 2) shape_fail(n, "needs at least two time steps");
      const std::size_t len = x.dim(1);
      Tensor y({x.dim(0), len - 1});
      for (std::size_t r = 0; r < x.dim(0); ++r) {
        for (std::size_t t = 0; t + 1 < len; ++t) {
          y[r * (len - 1) + t] = x[r * len + t + 1] - x[r * len + t];
        }
      }
      return y;
    }
    case Op::smooth_abs:
      return map_unary(in(0), [k2 = n.param0 * n.param0](double v) { return std::sqrt(v * v + k2); });
    case Op::column: {
      const Tensor& x = in(0);
      require_rank(n, x, 2);
      if (n.column >= x.dim(1)) shape_fail(n, "column index outside " + shape_string(x.shape()));
      Tensor y({x.dim(0), 1});
      for (std::size_t r = 0; r < x.dim(0); ++r) y[r] = x[r * x.dim(1) + n.column];
      return y;
    }
  }
  throw InvalidArgument("unknown op");
}

inline void accumulate(std::vector<Tensor>& grads, NodeId id, const Tensor& contribution) {
  Tensor& g = grads[id.index];
  if (g.empty()) {
    g = contribution;
    return;
  }
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += contribution[i];
}

inline Tensor& grad_slot(std::vector<Tensor>& grads, NodeId id, const Shape& shape) {
  Tensor& g = grads[id.index];
  if (g.empty()) g = Tensor(shape);
  return g;
}

inline void backward_node(const Graph& graph, const Node& n, const std::vector<Tensor>& vals,
                          const Tensor& y, const Tensor& dy, std::vector<Tensor>& grads) {
  auto in = [&](std::size_t k) -> const Tensor& { return vals[n.inputs[k].index]; };
  auto wants = [&](std::size_t k) { return graph.node(n.inputs[k]).requires_grad; };
  switch (n.op) {
    case Op::leaf:
    case Op::constant:
      return;
    case Op::matmul: {
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      const std::size_t rows = a.dim(0), inner = a.dim(1), cols = b.dim(1);
      if (wants(0)) {
        Tensor& da = grad_slot(grads, n.inputs[0], a.shape());
        for (std::size_t r = 0; r < rows; ++r) {
          const double* g = dy.data() + r * cols;
          for (std::size_t k = 0; k < inner; ++k) {
            const double* brow = b.data() + k * cols;
            double acc = 0.0;
            for (std::size_t j = 0; j < cols; ++j) acc += g[j] * brow[j];
            da[r * inner + k] += acc;
          }
        }
      }
      if (wants(1)) {
        Tensor& db = grad_slot(grads, n.inputs[1], b.shape());
        for (std::size_t r = 0; r < rows; ++r) {
          const double* g = dy.data() + r * cols;
          for (std::size_t k = 0; k < inner; ++k) {
            const double av = a[r * inner + k];
            double* drow = db.data() + k * cols;
            for (std::size_t j = 0; j < cols; ++j) drow[j] += av * g[j];
          }
        }
      }
      return;
    }
    case Op::bias_add: {
      if (wants(0)) accumulate(grads, n.inputs[0], dy);
      if (wants(1)) {
        const Tensor& x = in(0);
        Tensor& db = grad_slot(grads, n.inputs[1], in(1).shape());
        const std::size_t channels = x.dim(1);
        const std::size_t inner = x.rank() == 3 ? x.dim(2) : 1;
        for (std::size_t r = 0; r < x.dim(0); ++r) {
          for (std::size_t c = 0; c < channels; ++c) {
            const double* p = dy.data() + (r * channels + c) * inner;
            double acc = 0.0;
            for (std::size_t t = 0; t < inner; ++t) acc += p[t];
            db[c] += acc;
          }
        }
      }
      return;
    }
    case Op::conv1d: {
      const Tensor& x = in(0);
      const Tensor& w = in(1);
      const std::size_t batch = x.dim(0), cin = x.dim(1), len = x.dim(2);
      const std::size_t cout = w.dim(0), kernel = w.dim(2);
      const std::size_t lout = y.dim(2);
      const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(n.padding);
      Tensor* dx = wants(0) ? &grad_slot(grads, n.inputs[0], x.shape()) : nullptr;
      Tensor* dw = wants(1) ? &grad_slot(grads, n.inputs[1], w.shape()) : nullptr;
      for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t co = 0; co < cout; ++co) {
          const double* g = dy.data() + (b * cout + co) * lout;
          for (std::size_t ci = 0; ci < cin; ++ci) {
            const std::size_t xoff = (b * cin + ci) * len;
            for (std::size_t k = 0; k < kernel; ++k) {
              const std::size_t widx = (co * cin + ci) * kernel + k;
              const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(k) - pad;
              const std::ptrdiff_t t0 = std::max<std::ptrdiff_t>(0, -shift);
              const std::ptrdiff_t t1 = std::min<std::ptrdiff_t>(
                  static_cast<std::ptrdiff_t>(lout), static_cast<std::ptrdiff_t>(len) - shift);
              if (dx) {
                const double wv = w[widx];
                double* dst = dx->data() + xoff;
                for (std::ptrdiff_t t = t0; t < t1; ++t) dst[t + shift] += wv * g[t];
              }
              if (dw) {
                const double* src = x.data() + xoff;
                double acc = 0.0;
                for (std::ptrdiff_t t = t0; t < t1; ++t) acc += g[t] * src[t + shift];
                (*dw)[widx] += acc;
              }
            }
          }
        }
      }
      return;
    }
    case Op::relu: {
      const Tensor& x = in(0);
      Tensor& dx = grad_slot(grads, n.inputs[0], x.shape());
      for (std::size_t i = 0; i < x.size(); ++i) {
        if (x[i] > 0.0) dx[i] += dy[i];
      }
      return;
    }
    case Op::sigmoid: {
      Tensor& dx = grad_slot(grads, n.inputs[0], y.shape());
      for (std::size_t i = 0; i < y.size(); ++i) dx[i] += dy[i] * y[i] * (1.0 - y[i]);
      return;
    }
    case Op::tanh: {
      Tensor& dx = grad_slot(grads, n.inputs[0], y.shape());
      for (std::size_t i = 0; i < y.size(); ++i) dx[i] += dy[i] * (1.0 - y[i] * y[i]);
      return;
    }
    case Op::log: {
      const Tensor& x = in(0);
      Tensor& dx = grad_slot(grads, n.inputs[0], x.shape());
      for (std::size_t i = 0; i < x.size(); ++i) dx[i] += dy[i] / x[i];
      return;
    }
    case Op::add:
    case Op::sub: {
      if (wants(0)) accumulate(grads, n.inputs[0], dy);
      if (wants(1)) {
        Tensor& db = grad_slot(grads, n.inputs[1], dy.shape());
        const double sign = n.op == Op::add ? 1.0 : -1.0;
        for (std::size_t i = 0; i < dy.size(); ++i) db[i] += sign * dy[i];
      }
      return;
    }
    case Op::mul: {
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      if (wants(0)) {
        Tensor& da = grad_slot(grads, n.inputs[0], a.shape());
        for (std::size_t i = 0; i < a.size(); ++i) da[i] += dy[i] * b[i];
      }
      if (wants(1)) {
        Tensor& db = grad_slot(grads, n.inputs[1], b.shape());
        for (std::size_t i = 0; i < b.size(); ++i) db[i] += dy[i] * a[i];
      }
      return;
    }
    case Op::div: {
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      if (wants(0)) {
        Tensor& da = grad_slot(grads, n.inputs[0], a.shape());
        for (std::size_t i = 0; i < a.size(); ++i) da[i] += dy[i] / b[i];
      }
      if (wants(1)) {
        Tensor& db = grad_slot(grads, n.inputs[1], b.shape());
        for (std::size_t i = 0; i < b.size(); ++i) db[i] -= dy[i] * a[i] / (b[i] * b[i]);
      }
      return;
    }
    case Op::scale: {
      Tensor& dx = grad_slot(grads, n.inputs[0], dy.shape());
      for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += n.param0 * dy[i];
      return;
    }
    case Op::add_scalar:
      accumulate(grads, n.inputs[0], dy);
      return;
    case Op::clamp: {
      const Tensor& x = in(0);
      Tensor& dx = grad_slot(grads, n.inputs[0], x.shape());
      for (std::size_t i = 0; i < x.size(); ++i) {
        if (x[i] >= n.param0 && x[i] <= n.param1) dx[i] += dy[i];
      }
      return;
    }
    case Op::mean_time: {
      const Tensor& x = in(0);
      Tensor& dx = grad_slot(grads, n.inputs[0], x.shape());
      const std::size_t len = x.dim(2);
      const double inv = 1.0 / static_cast<double>(len);
      for (std::size_t r = 0; r < dy.size(); ++r) {
        for (std::size_t t = 0; t < len; ++t) dx[r * len + t] += dy[r] * inv;
      }
      return;
    }
    case Op::reshape_rows: {
      Tensor& dx = grad_slot(grads, n.inputs[0], in(0).shape());
      for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i];
      return;
    }
    case Op::softmax: {
      Tensor& dx = grad_slot(grads, n.inputs[0], y.shape());
      const std::size_t k = y.dim(1);
      for (std::size_t r = 0; r < y.dim(0); ++r) {
        double dot = 0.0;
        for (std::size_t j = 0; j < k; ++j) dot += dy[r * k + j] * y[r * k + j];
        for (std::size_t j = 0; j < k; ++j) {
          dx[r * k + j] += y[r * k + j] * (dy[r * k + j] - dot);
        }
      }
      return;
    }
    case Op::softmax_xent: {
      const Tensor& z = in(0);
      const Tensor& t = in(1);
      const std::size_t k = z.dim(1);
      Tensor* dz = wants(0) ? &grad_slot(grads, n.inputs[0], z.shape()) : nullptr;
      Tensor* dt = wants(1) ? &grad_slot(grads, n.inputs[1], t.shape()) : nullptr;
      std::vector<double> prob(k);
      for (std::size_t r = 0; r < z.dim(0); ++r) {
        const double* zr = z.data() + r * k;
        const double* tr = t.data() + r * k;
        const double m = *std::max_element(zr, zr + k);
        double total = 0.0;
        for (std::size_t j = 0; j < k; ++j) total += (prob[j] = std::exp(zr[j] - m));
        const double lse = m + std::log(total);
        double mass = 0.0;
        for (std::size_t j = 0; j < k; ++j) mass += tr[j];
        for (std::size_t j = 0; j < k; ++j) {
          if (dz) (*dz)[r * k + j] += dy[r] * (prob[j] / total * mass - tr[j]);
          if (dt) (*dt)[r * k + j] -= dy[r] * (zr[j] - lse);
        }
      }
      return;
    }
    case Op::sum: {
      Tensor& dx = grad_slot(grads, n.inputs[0], in(0).shape());
      const double g = dy[0];
      for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += g;
      return;
    }
    case Op::time_diff: {
      const Tensor& x = in(0);
      Tensor& dx = grad_slot(grads, n.inputs[0], x.shape());
      const std::size_t len = x.dim(1);
      for (std::size_t r = 0; r < x.dim(0); ++r) {
        for (std::size_t t = 0; t + 1 < len; ++t) {
          const double g = dy[r * (len - 1) + t];
          dx[r * len + t + 1] += g;
          dx[r * len + t] -= g;
        }
      }
      return;
    }
    case Op::smooth_abs: {
      const Tensor& x = in(0);
      Tensor& dx = grad_slot(grads, n.inputs[0], x.shape());
      for (std::size_t i = 0; i < x.size(); ++i) dx[i] += dy[i] * x[i] / y[i];
      return;
    }
    case Op::column: {
      const Tensor& x = in(0);
      Tensor& dx = grad_slot(grads, n.inputs[0], x.shape());
      for (std::size_t r = 0; r < x.dim(0); ++r) dx[r * x.dim(1) + n.column] += dy[r];
      return;
    }
  }
}

}  // namespace detail

/// Runs every node in order. Throws ShapeError, UnboundLeafError, or
/// NumericalError (naming the op) when a value leaves the finite range.
inline Forward evaluate(const Graph& graph, const Bindings& bindings) {
  for (const auto& [id, tensor] : bindings) {
    if (id.index >= graph.size() || graph.node(id).op != Op::leaf) {
      throw InvalidArgument("binding for node " + std::to_string(id.index) + " which is not a leaf");
    }
  }
  Forward fwd;
  fwd.output_ = graph.output();
  fwd.values_.reserve(graph.size());
  for (std::size_t i = 0; i < graph.size(); ++i) {
    const Node& n = graph.node(NodeId{i});
    fwd.values_.push_back(detail::forward_node(n, fwd.values_, bindings, i));
    if (!fwd.values_.back().all_finite()) {
      throw NumericalError(std::string("non-finite value produced by ") +
                           std::string(op_name(n.op)) + " (node " + std::to_string(i) + ")");
    }
  }
  return fwd;
}

/// d(output)/d(leaf) for every differentiable leaf. The output must be a
/// single element. Leaves the output does not depend on get zero tensors.
inline Gradients backpropagate(const Graph& graph, const Forward& fwd) {
  if (fwd.size() != graph.size()) {
    throw InvalidArgument("missing forward cache: evaluate() this graph before backpropagate()");
  }
  const NodeId out = fwd.output_id();
  const Tensor& y = fwd.output();
  if (y.size() != 1) {
    throw ShapeError("backpropagate needs a scalar output, got " + shape_string(y.shape()));
  }
  std::vector<Tensor> grads(graph.size());
  grads[out.index] = Tensor(y.shape(), 1.0);
  for (std::size_t i = out.index + 1; i-- > 0;) {
    const Node& n = graph.node(NodeId{i});
    if (!n.requires_grad || grads[i].empty()) continue;
    detail::backward_node(graph, n, fwd.values(), fwd.values()[i], grads[i], grads);
  }
  Gradients result;
  for (NodeId leaf : graph.differentiable_leaves()) {
    Tensor g = std::move(grads[leaf.index]);
    if (g.empty()) g = Tensor(fwd.value(leaf).shape());
    result.emplace(leaf, std::move(g));
  }
  return result;
}

/// Central-difference estimate of d(output)/d(leaf), one coordinate at a
/// time: (f(x + h e_i) - f(x - h e_i)) / 2h.
inline Tensor finite_difference_gradient(const Graph& graph, const Bindings& bindings, NodeId leaf,
                                         double h) {
  if (!(h > 0.0)) throw InvalidArgument("finite difference step h must be positive");
  if (graph.node(leaf).op != Op::leaf) throw InvalidArgument("finite difference target is not a leaf");
  auto it = bindings.find(leaf);
  if (it == bindings.end()) {
    throw UnboundLeafError("leaf '" + graph.node(leaf).name + "' is unbound");
  }
  Bindings probe = bindings;
  Tensor& x = probe.at(leaf);
  Tensor grad(x.shape());
  auto f = [&] {
    Forward fwd = evaluate(graph, probe);
    if (fwd.output().size() != 1) {
      throw ShapeError("finite difference needs a scalar output, got " +
                       shape_string(fwd.output().shape()));
    }
    return fwd.output()[0];
  };
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double original = x[i];
    x[i] = original + h;
    const double up = f();
    x[i] = original - h;
    const double down = f();
    x[i] = original;
    grad[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

}  // namespace tsconceal::diff
