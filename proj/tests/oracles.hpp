#pragma once

// Reference computations the library is checked against. Nothing here
// calls the code under test for the quantity being verified.

#include <cmath>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "tsconceal.hpp"

namespace oracle {

using tsconceal::Tensor;
namespace diff = tsconceal::diff;

/// Central differences of the graph output w.r.t. one leaf.
inline Tensor central_difference(const diff::Graph& g, diff::Bindings b, diff::NodeId leaf, double h) {
  Tensor base = b.at(leaf);
  Tensor out(base.shape());
  for (std::size_t i = 0; i < base.size(); ++i) {
    Tensor plus = base, minus = base;
    plus[i] += h;
    minus[i] -= h;
    b[leaf] = plus;
    const double fp = diff::evaluate(g, b).output()[0];
    b[leaf] = minus;
    const double fm = diff::evaluate(g, b).output()[0];
    out[i] = (fp - fm) / (2.0 * h);
  }
  return out;
}

/// Largest discrepancy, relative where |fd| >= 1e-6 and absolute below.
inline double gradient_error(const Tensor& analytic, const Tensor& fd) {
  double worst = 0.0;
  for (std::size_t i = 0; i < fd.size(); ++i) {
    const double diffv = std::abs(analytic[i] - fd[i]);
    const double scale = std::max(std::abs(analytic[i]), std::abs(fd[i]));
    worst = std::max(worst, std::abs(fd[i]) < 1e-6 ? diffv : diffv / scale);
  }
  return worst;
}

/// Per-class F1 from an explicit confusion matrix.
inline double f1_brute(const std::vector<int>& y_true, const std::vector<int>& y_pred, bool macro) {
  std::map<std::pair<int, int>, long> cm;
  std::set<int> classes;
  for (std::size_t i = 0; i < y_true.size(); ++i) {
    ++cm[{y_true[i], y_pred[i]}];
    classes.insert(y_true[i]);
    classes.insert(y_pred[i]);
  }
  auto score = [&](int c) {
    long tp = 0, fp = 0, fn = 0;
    for (const auto& [k, n] : cm) {
      if (k.first == c && k.second == c) tp += n;
      else if (k.second == c) fp += n;
      else if (k.first == c) fn += n;
    }
    if (tp == 0) return 0.0;
    // harmonic mean of tp/(tp+fp) and tp/(tp+fn), reduced over the integers
    return static_cast<double>(2 * tp) / static_cast<double>(2 * tp + fp + fn);
  };
  if (!macro) return score(1);
  double total = 0.0;
  for (int c : classes) total += score(c);
  return total / static_cast<double>(classes.size());
}

struct RandomGraph {
  std::string name;
  diff::Graph graph;
  diff::Bindings bindings;
  std::set<diff::Op> ops;
};

inline Tensor random_tensor(tsconceal::Rng& rng, tsconceal::Shape shape, double lo = -2.0, double hi = 2.0) {
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

inline Tensor random_simplex_rows(tsconceal::Rng& rng, std::size_t rows, std::size_t k) {
  Tensor t({rows, k});
  for (std::size_t r = 0; r < rows; ++r) {
    double total = 0.0;
    for (std::size_t j = 0; j < k; ++j) total += (t[r * k + j] = rng.uniform(0.1, 1.0));
    for (std::size_t j = 0; j < k; ++j) t[r * k + j] /= total;
  }
  return t;
}

/// One of eight graph templates, shapes and values drawn from `seed`.
inline RandomGraph random_graph(std::size_t variant, std::uint64_t seed) {
  tsconceal::Rng rng(seed);
  RandomGraph rg;
  diff::Graph& g = rg.graph;
  diff::Bindings& b = rg.bindings;
  const std::size_t n = 2 + rng.below(2);
  auto leaf = [&](const std::string& name, tsconceal::Shape shape, double lo = -2.0, double hi = 2.0) {
    const diff::NodeId id = g.leaf(name);
    b[id] = random_tensor(rng, std::move(shape), lo, hi);
    return id;
  };
  switch (variant % 8) {
    case 0: {  // two dense layers into cross-entropy against soft targets
      rg.name = "dense";
      const std::size_t d = 3 + rng.below(3), h = 4, k = 3;
      const auto x = leaf("x", {n, d});
      const auto w1 = leaf("w1", {d, h}), b1 = leaf("b1", {h});
      const auto w2 = leaf("w2", {h, k}), b2 = leaf("b2", {k});
      const auto t = g.constant(random_simplex_rows(rng, n, k));
      const auto z = g.bias_add(g.matmul(g.relu(g.bias_add(g.matmul(x, w1), b1)), w2), b2);
      g.sum(g.softmax_xent(z, t));
      break;
    }
    case 1: {  // conv blocks with a residual skip and pooling
      rg.name = "conv";
      const std::size_t len = 6 + rng.below(4), c = 3, k = 3;
      const auto x = leaf("x", {n, len});
      const auto w1 = leaf("w1", {c, 1, k}), b1 = leaf("b1", {c});
      const auto w2 = leaf("w2", {c, c, 3});
      const auto wh = leaf("wh", {c, 2});
      const auto h1 = g.relu(g.bias_add(g.conv1d(g.reshape_rows(x, {1, len}), w1, k / 2), b1));
      const auto h2 = g.relu(g.add(g.conv1d(h1, w2, 1), h1));
      const auto labels = g.constant(tsconceal::detail::one_hot(std::vector<int>(n, 1), 2));
      g.sum(g.softmax_xent(g.matmul(g.mean_time(h2), wh), labels));
      break;
    }
    case 2: {  // elementwise algebra
      rg.name = "elementwise";
      const std::size_t d = 4;
      const auto x = leaf("x", {n, d}), y = leaf("y", {n, d});
      const auto a = g.mul(g.sigmoid(x), g.tanh(y));
      const auto s = g.sub(g.scale(a, 1.7), g.add_scalar(g.mul(x, y), 0.3));
      g.sum(g.add(s, x));
      break;
    }
    case 3: {  // log and division on positive domains
      rg.name = "log-div";
      const std::size_t d = 5;
      const auto x = leaf("x", {n, d}), y = leaf("y", {n, d});
      const auto lg = g.log(g.add_scalar(g.mul(x, x), 0.5));
      const auto q = g.div(x, g.add_scalar(g.mul(y, y), 1.0));
      g.sum(g.add(lg, q));
      break;
    }
    case 4: {  // smoothness and l2 penalties of a perturbation
      rg.name = "penalty";
      const std::size_t len = 8;
      const auto x = leaf("x", {n, len});
      const auto origin = g.leaf("origin", false);
      b[origin] = random_tensor(rng, {n, len});
      const auto delta = g.sub(x, origin);
      const auto tv = g.sum(g.smooth_abs(g.time_diff(delta), 0.05));
      const auto l2 = g.sum(g.mul(delta, delta));
      g.sub(g.scale(l2, 0.5), tv);
      break;
    }
    case 5: {  // clamped probabilities
      rg.name = "softmax-clamp";
      const std::size_t d = 4, k = 3;
      const auto x = leaf("x", {n, d});
      const auto w = leaf("w", {d, k});
      const auto weights = g.constant(random_tensor(rng, {n, k}));
      const auto p = g.clamp(g.softmax(g.matmul(x, w)), 0.2, 0.7);
      g.sum(g.mul(g.log(p), weights));
      break;
    }
    case 6: {  // a two-step gated recurrence over columns
      rg.name = "recurrent";
      const std::size_t len = 3, h = 3;
      const auto x = leaf("x", {n, len});
      const auto wi = leaf("wi", {1, h}), u = leaf("u", {h, h}, -1.0, 1.0), bias = leaf("bias", {h});
      auto state = g.tanh(g.bias_add(g.matmul(g.column(x, 0), wi), bias));
      for (std::size_t t = 1; t < len; ++t) {
        const auto f = g.sigmoid(g.add(g.matmul(g.column(x, t), wi), g.matmul(state, u)));
        state = g.add(state, g.mul(f, g.sub(g.tanh(g.matmul(g.column(x, t), wi)), state)));
      }
      g.sum(state);
      break;
    }
    default: {  // regularised attack objective through two small networks
      rg.name = "objective";
      const std::size_t len = 8;
      tsconceal::ModelSpec spec;
      spec.family = tsconceal::ModelFamily::rescnn;
      spec.widths = {3, 3};
      spec.kernel_sizes = {3, 3};
      spec.input_length = len;
      const auto x = leaf("x", {n, len});
      const auto net = tsconceal::append_network(g, spec, x, false, true, "t.");
      tsconceal::ModelSpec dspec = spec;
      dspec.family = tsconceal::ModelFamily::mlp;
      dspec.widths = {4};
      dspec.kernel_sizes.clear();
      const auto dnet = tsconceal::append_network(g, dspec, x, false, true, "d.");
      const auto tl = tsconceal::parameter_layout(spec), dl = tsconceal::parameter_layout(dspec);
      for (const auto& [name, id] : net.params) b[id] = random_tensor(rng, tl.at(name).shape, -1.0, 1.0);
      for (const auto& [name, id] : dnet.params) b[id] = random_tensor(rng, dl.at(name).shape, -1.0, 1.0);
      const auto y = g.constant(tsconceal::detail::one_hot(std::vector<int>(n, 0), 2));
      const auto ones = g.constant(tsconceal::detail::one_hot(std::vector<int>(n, 1), 2));
      const auto a = g.softmax_xent(net.logits, y);
      const auto d = g.softmax_xent(dnet.logits, ones);
      tsconceal::AggregationSpec agg;
      agg.kind = tsconceal::AggregationKind::harmonic;
      agg.gamma = 0.1;
      g.sum(tsconceal::append_aggregation(g, agg, a, d));
      break;
    }
  }
  for (std::size_t i = 0; i < g.size(); ++i) rg.ops.insert(g.node(diff::NodeId{i}).op);
  return rg;
}

}  // namespace oracle
