#pragma once

// Desk-scale classifiers: an MLP, a small residual 1-D CNN and a single
// gated recurrent layer, all built on diffcore graphs. Trained with Adam on
// cross-entropy; parameters persist as JSON {name: {shape, values}}.

#include <cmath>
#include <limits>
#include <cstdint>
#include <fstream>
#include <map>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "tsconceal/data.hpp"
#include "tsconceal/diffcore.hpp"
#include "tsconceal/error.hpp"
#include "tsconceal/random.hpp"
#include "tsconceal/scores.hpp"
#include "tsconceal/tensor.hpp"

namespace tsconceal {

enum class ModelFamily { mlp, rescnn, recurrent };

inline std::string to_string(ModelFamily f) {
  switch (f) {
    case ModelFamily::mlp: return "mlp";
    case ModelFamily::rescnn: return "rescnn";
    case ModelFamily::recurrent: return "recurrent";
  }
  return "?";
}

inline ModelFamily parse_model_family(const std::string& s) {
  if (s == "mlp") return ModelFamily::mlp;
  if (s == "rescnn") return ModelFamily::rescnn;
  if (s == "recurrent") return ModelFamily::recurrent;
  throw ConfigError("unknown model family '" + s + "' (expected mlp, rescnn or recurrent)");
}

struct ModelSpec {
  ModelFamily family = ModelFamily::mlp;
  /// Hidden widths (mlp), conv channels (rescnn) or the hidden size (recurrent).
  std::vector<std::size_t> widths{32};
  /// One odd kernel per conv block (rescnn only).
  std::vector<std::size_t> kernel_sizes;
  std::size_t n_classes = 2;
  std::size_t input_length = 64;
  double dropout = 0.0;

  void validate() const {
    if (n_classes < 2) throw InvalidArgument("n_classes must be at least 2");
    if (input_length == 0) throw InvalidArgument("input length must be positive");
    if (widths.empty()) throw InvalidArgument("at least one hidden layer is required");
    for (std::size_t w : widths) {
      if (w == 0) throw InvalidArgument("layer widths must be positive");
    }
    if (!(dropout >= 0.0 && dropout < 1.0)) throw InvalidArgument("dropout must lie in [0, 1)");
    if (family == ModelFamily::rescnn) {
      if (kernel_sizes.size() != widths.size()) {
        throw InvalidArgument("rescnn needs one kernel size per conv block");
      }
      for (std::size_t k : kernel_sizes) {
        if (k % 2 == 0) throw InvalidArgument("kernel sizes must be odd");
      }
    } else if (!kernel_sizes.empty()) {
      throw InvalidArgument("kernel sizes apply to rescnn only");
    }
    if (family == ModelFamily::recurrent && widths.size() != 1) {
      throw InvalidArgument("recurrent family has exactly one gated layer");
    }
  }

  /// Channels 16/32/32 with an identity skip around the last block.
  static ModelSpec mini_rescnn(std::size_t input_length, std::size_t n_classes = 2) {
    ModelSpec s;
    s.family = ModelFamily::rescnn;
    s.widths = {16, 32, 32};
    s.kernel_sizes = {7, 5, 3};
    s.n_classes = n_classes;
    s.input_length = input_length;
    return s;
  }

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

using ParameterMap = std::map<std::string, Tensor>;

struct ParameterInfo {
  Shape shape;
  std::size_t fan_in = 1;
  bool head = false;
};

/// Every parameter the spec implies, by name.
inline std::map<std::string, ParameterInfo> parameter_layout(const ModelSpec& spec) {
  spec.validate();
  std::map<std::string, ParameterInfo> out;
  std::size_t features = 0;
  switch (spec.family) {
    case ModelFamily::mlp: {
      std::size_t in = spec.input_length;
      for (std::size_t i = 0; i < spec.widths.size(); ++i) {
        const std::string p = "dense" + std::to_string(i);
        out[p + ".weight"] = {{in, spec.widths[i]}, in, false};
        out[p + ".bias"] = {{spec.widths[i]}, in, false};
        in = spec.widths[i];
      }
      features = in;
      break;
    }
    case ModelFamily::rescnn: {
      std::size_t in = 1;
      for (std::size_t i = 0; i < spec.widths.size(); ++i) {
        const std::string p = "conv" + std::to_string(i);
        const std::size_t fan = in * spec.kernel_sizes[i];
        out[p + ".weight"] = {{spec.widths[i], in, spec.kernel_sizes[i]}, fan, false};
        out[p + ".bias"] = {{spec.widths[i]}, fan, false};
        in = spec.widths[i];
      }
      features = in;
      break;
    }
    case ModelFamily::recurrent: {
      const std::size_t h = spec.widths[0];
      out["gru.input_gate"] = {{1, h}, 1 + h, false};
      out["gru.input_cand"] = {{1, h}, 1 + h, false};
      out["gru.recur_gate"] = {{h, h}, 1 + h, false};
      out["gru.recur_cand"] = {{h, h}, 1 + h, false};
      out["gru.bias_gate"] = {{h}, 1 + h, false};
      out["gru.bias_cand"] = {{h}, 1 + h, false};
      features = h;
      break;
    }
  }
  out["head.weight"] = {{features, spec.n_classes}, features, true};
  out["head.bias"] = {{spec.n_classes}, features, true};
  return out;
}

/// Graph nodes of one network instance.
struct NetworkNodes {
  diff::NodeId input;
  diff::NodeId logits;
  std::map<std::string, diff::NodeId> params;
  /// Dropout mask leaves with their feature width; bound per batch.
  std::vector<std::pair<diff::NodeId, std::size_t>> dropout_masks;
};

/// Appends the network for `spec` reading from `input` ([N, L]). Parameter
/// leaves are named prefix + parameter name.
inline NetworkNodes append_network(diff::Graph& g, const ModelSpec& spec, diff::NodeId input,
                                   bool training, bool params_differentiable,
                                   const std::string& prefix = "") {
  const auto layout = parameter_layout(spec);
  NetworkNodes net;
  net.input = input;
  for (const auto& [name, info] : layout) {
    net.params[name] = g.leaf(prefix + name, params_differentiable);
  }
  auto p = [&](const std::string& name) { return net.params.at(name); };
  const bool use_dropout = training && spec.dropout > 0.0;
  auto dropout = [&](diff::NodeId x, std::size_t width) {
    if (!use_dropout) return x;
    const diff::NodeId mask = g.leaf(prefix + "dropout" + std::to_string(net.dropout_masks.size()), false);
    net.dropout_masks.emplace_back(mask, width);
    return g.mul(x, mask);
  };

  diff::NodeId h = input;
  std::size_t width = spec.input_length;
  switch (spec.family) {
    case ModelFamily::mlp:
      for (std::size_t i = 0; i < spec.widths.size(); ++i) {
        const std::string l = "dense" + std::to_string(i);
        h = g.relu(g.bias_add(g.matmul(h, p(l + ".weight")), p(l + ".bias")));
        width = spec.widths[i];
        h = dropout(h, width);
      }
      break;
    case ModelFamily::rescnn: {
      h = g.reshape_rows(h, {1, spec.input_length});
      std::size_t channels = 1;
      for (std::size_t i = 0; i < spec.widths.size(); ++i) {
        const std::string l = "conv" + std::to_string(i);
        diff::NodeId z = g.bias_add(g.conv1d(h, p(l + ".weight"), spec.kernel_sizes[i] / 2),
                                    p(l + ".bias"));
        if (i > 0 && channels == spec.widths[i]) z = g.add(z, h);
        h = g.relu(z);
        channels = spec.widths[i];
      }
      h = g.mean_time(h);
      width = channels;
      h = dropout(h, width);
      break;
    }
    case ModelFamily::recurrent: {
      // Minimal gated unit: f = sig(x Wf + h Uf + bf),
      // c = tanh(x Wc + (f*h) Uc + bc), h' = h + f * (c - h), h0 = 0.
      for (std::size_t t = 0; t < spec.input_length; ++t) {
        const diff::NodeId xt = g.column(input, t);
        diff::NodeId gate = g.matmul(xt, p("gru.input_gate"));
        diff::NodeId cand = g.matmul(xt, p("gru.input_cand"));
        if (t > 0) gate = g.add(gate, g.matmul(h, p("gru.recur_gate")));
        const diff::NodeId f = g.sigmoid(g.bias_add(gate, p("gru.bias_gate")));
        if (t > 0) cand = g.add(cand, g.matmul(g.mul(f, h), p("gru.recur_cand")));
        const diff::NodeId c = g.tanh(g.bias_add(cand, p("gru.bias_cand")));
        h = t == 0 ? g.mul(f, c) : g.add(h, g.mul(f, g.sub(c, h)));
      }
      width = spec.widths[0];
      h = dropout(h, width);
      break;
    }
  }
  net.logits = g.bias_add(g.matmul(h, p("head.weight")), p("head.bias"));
  return net;
}

struct TrainingHistory {
  std::vector<double> loss;  // mean per-sample cross-entropy of each epoch
  std::vector<double> f1;    // macro F1 of the epoch's training predictions
};

struct TrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 32;
  double learning_rate = 1e-2;
  double weight_decay = 0.0;
  std::uint64_t seed = 0;
  /// Stop after this many epochs without a loss improvement; 0 disables.
  std::size_t patience = 0;

  void validate() const {
    if (epochs < 1) throw InvalidArgument("epochs must be at least 1");
    if (batch_size < 1) throw InvalidArgument("batch size must be at least 1");
    if (!(learning_rate >= 0.0)) throw InvalidArgument("learning rate must be non-negative");
    if (!(weight_decay >= 0.0)) throw InvalidArgument("weight decay must be non-negative");
  }
};

namespace detail {

struct InferenceGraph {
  diff::Graph graph;
  NetworkNodes net;
  diff::NodeId probs;
};

inline std::shared_ptr<const InferenceGraph> make_inference_graph(const ModelSpec& spec) {
  auto ig = std::make_shared<InferenceGraph>();
  const diff::NodeId x = ig->graph.leaf("x", false);
  ig->net = append_network(ig->graph, spec, x, false, false);
  ig->probs = ig->graph.softmax(ig->net.logits);
  ig->graph.set_output(ig->probs);
  return ig;
}

inline std::vector<int> argmax_rows(const Tensor& probs) {
  std::vector<int> out(probs.dim(0));
  const std::size_t k = probs.dim(1);
  for (std::size_t r = 0; r < probs.dim(0); ++r) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < k; ++j) {
      if (probs[r * k + j] > probs[r * k + best]) best = j;
    }
    out[r] = static_cast<int>(best);
  }
  return out;
}

inline Tensor one_hot(std::span<const int> labels, std::size_t n_classes) {
  Tensor t({labels.size(), n_classes});
  for (std::size_t r = 0; r < labels.size(); ++r) {
    t[r * n_classes + static_cast<std::size_t>(labels[r])] = 1.0;
  }
  return t;
}

}  // namespace detail

/// A target classifier or a discriminator. Immutable once built; copies
/// share the cached inference graph.
class Classifier {
 public:
  Classifier(ModelSpec spec, ParameterMap params, std::uint64_t seed, TrainingHistory history = {})
      : spec_(std::move(spec)), params_(std::move(params)), history_(std::move(history)), seed_(seed) {
    const auto layout = parameter_layout(spec_);
    if (layout.size() != params_.size()) {
      throw ShapeError("parameter set has " + std::to_string(params_.size()) + " entries, spec needs " +
                       std::to_string(layout.size()));
    }
    for (const auto& [name, info] : layout) {
      auto it = params_.find(name);
      if (it == params_.end()) throw ShapeError("missing parameter " + name);
      if (it->second.shape() != info.shape) {
        throw ShapeError("parameter " + name + " has shape " + shape_string(it->second.shape()) +
                         ", spec needs " + shape_string(info.shape));
      }
    }
    inference_ = detail::make_inference_graph(spec_);
  }

  /// Fan-in scaled uniform init, U(-sqrt(6/fan_in), sqrt(6/fan_in)) for
  /// weights; biases and the whole output layer start at zero.
  static Classifier build(const ModelSpec& spec, std::uint64_t seed) {
    const auto layout = parameter_layout(spec);
    Rng rng(seed);
    ParameterMap params;
    for (const auto& [name, info] : layout) {
      Tensor t(info.shape);
      const bool is_bias = name.size() >= 5 && name.compare(name.size() - 5, 5, ".bias") == 0;
      if (!info.head && !is_bias && name.rfind("gru.bias", 0) != 0) {
        const double bound = std::sqrt(6.0 / static_cast<double>(info.fan_in));
        for (double& v : t.values()) v = rng.uniform(-bound, bound);
      }
      params.emplace(name, std::move(t));
    }
    return Classifier(spec, std::move(params), seed);
  }

  const ModelSpec& spec() const noexcept { return spec_; }
  const ParameterMap& parameters() const noexcept { return params_; }
  const TrainingHistory& history() const noexcept { return history_; }
  std::uint64_t seed() const noexcept { return seed_; }

  Classifier with_parameters(ParameterMap params, TrainingHistory history) const {
    return Classifier(spec_, std::move(params), seed_, std::move(history));
  }

  /// Binds this model's parameters to the matching leaves of `net`.
  void bind(diff::Bindings& b, const NetworkNodes& net) const {
    for (const auto& [name, id] : net.params) b[id] = params_.at(name);
  }

  /// Rows of class probabilities for X of shape [n, input_length].
  Tensor predict_proba(const Tensor& X) const {
    check_input(X);
    diff::Bindings b;
    bind(b, inference_->net);
    b[inference_->net.input] = X;
    return diff::evaluate(inference_->graph, b).output();
  }

  std::vector<int> predict(const Tensor& X) const { return detail::argmax_rows(predict_proba(X)); }

  void check_input(const Tensor& X) const {
    if (X.rank() != 2 || X.dim(1) != spec_.input_length) {
      throw ShapeError("model expects series of length " + std::to_string(spec_.input_length) +
                       ", got " + shape_string(X.shape()));
    }
  }

 private:
  ModelSpec spec_;
  ParameterMap params_;
  TrainingHistory history_;
  std::uint64_t seed_ = 0;
  std::shared_ptr<const detail::InferenceGraph> inference_;
};

/// Mini-batch Adam (beta1 0.9, beta2 0.999, eps 1e-8) on mean cross-entropy,
/// with L2 weight decay added to the gradient. Continues from the model's
/// current parameters; shuffling is derived from cfg.seed.
inline Classifier fit(const Classifier& model, const LabeledSeriesSet& train, const TrainConfig& cfg) {
  cfg.validate();
  const ModelSpec& spec = model.spec();
  if (train.size() == 0) throw InvalidArgument("cannot fit on an empty dataset");
  model.check_input(train.features);
  for (int l : train.labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= spec.n_classes) {
      throw InvalidArgument("label " + std::to_string(l) + " outside [0, " +
                            std::to_string(spec.n_classes) + ")");
    }
  }

  diff::Graph g;
  const diff::NodeId x = g.leaf("x", false);
  const diff::NodeId targets = g.leaf("targets", false);
  const NetworkNodes net = append_network(g, spec, x, true, true);
  const diff::NodeId per_sample = g.softmax_xent(net.logits, targets);
  g.set_output(g.sum(per_sample));

  ParameterMap params = model.parameters();
  ParameterMap m1, m2;
  for (const auto& [name, t] : params) {
    m1.emplace(name, Tensor(t.shape()));
    m2.emplace(name, Tensor(t.shape()));
  }
  constexpr double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
  double beta1_t = 1.0, beta2_t = 1.0;

  TrainingHistory history = model.history();
  Rng rng(cfg.seed);
  const std::size_t n = train.size(), len = spec.input_length;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  double best_loss = std::numeric_limits<double>::infinity();
  std::size_t stale = 0;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    double loss_total = 0.0;
    std::vector<int> y_seen, y_hat;
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::size_t stop = std::min(n, start + cfg.batch_size);
      const std::size_t bsz = stop - start;
      Tensor xb({bsz, len});
      std::vector<int> yb(bsz);
      for (std::size_t i = 0; i < bsz; ++i) {
        const std::size_t r = order[start + i];
        auto src = train.features.row(r);
        std::copy(src.begin(), src.end(), xb.row(i).begin());
        yb[i] = train.labels[r];
      }
      diff::Bindings b;
      b[x] = std::move(xb);
      b[targets] = detail::one_hot(yb, spec.n_classes);
      for (const auto& [name, id] : net.params) b[id] = params.at(name);
      const double keep = 1.0 - spec.dropout;
      for (const auto& [mask, width] : net.dropout_masks) {
        Tensor m({bsz, width});
        for (double& v : m.values()) v = rng.uniform() < keep ? 1.0 / keep : 0.0;
        b[mask] = std::move(m);
      }
      const diff::Forward fwd = diff::evaluate(g, b);
      loss_total += fwd.output()[0];
      const auto pred = detail::argmax_rows(fwd.value(net.logits));
      y_seen.insert(y_seen.end(), yb.begin(), yb.end());
      y_hat.insert(y_hat.end(), pred.begin(), pred.end());

      const diff::Gradients grads = diff::backpropagate(g, fwd);
      beta1_t *= beta1;
      beta2_t *= beta2;
      const double inv_b = 1.0 / static_cast<double>(bsz);
      for (auto& [name, p] : params) {
        const Tensor& grad = grads.at(net.params.at(name));
        Tensor& m = m1.at(name);
        Tensor& v = m2.at(name);
        for (std::size_t i = 0; i < p.size(); ++i) {
          const double gi = grad[i] * inv_b + cfg.weight_decay * p[i];
          m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
          v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
          const double mhat = m[i] / (1.0 - beta1_t);
          const double vhat = v[i] / (1.0 - beta2_t);
          p[i] -= cfg.learning_rate * mhat / (std::sqrt(vhat) + adam_eps);
        }
      }
    }
    const double epoch_loss = loss_total / static_cast<double>(n);
    history.loss.push_back(epoch_loss);
    history.f1.push_back(f1(y_seen, y_hat, Averaging::macro));
    if (cfg.patience > 0) {
      if (epoch_loss < best_loss - 1e-9) {
        best_loss = epoch_loss;
        stale = 0;
      } else if (++stale >= cfg.patience) {
        break;
      }
    }
  }
  return model.with_parameters(std::move(params), std::move(history));
}

/// Writes {name: {"shape": [...], "values": [...]}}. Doubles are printed in
/// shortest round-trip form, so load_parameters restores them exactly.
inline void save_parameters(const Classifier& model, const std::string& path) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [name, t] : model.parameters()) {
    j[name] = {{"shape", t.shape()}, {"values", std::vector<double>(t.values().begin(), t.values().end())}};
  }
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << j.dump(1) << '\n';
  if (!out) throw IoError("write failed for " + path);
}

inline Classifier load_parameters(const ModelSpec& spec, const std::string& path,
                                  std::uint64_t seed = 0) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  ParameterMap params;
  try {
    const nlohmann::json j = nlohmann::json::parse(in);
    if (!j.is_object()) throw ParseError(path + ": parameter file must hold a JSON object");
    for (const auto& [name, entry] : j.items()) {
      auto shape = entry.at("shape").get<Shape>();
      auto values = entry.at("values").get<std::vector<double>>();
      params.emplace(name, Tensor(std::move(shape), std::move(values)));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
  return Classifier(spec, std::move(params), seed);
}

}  // namespace tsconceal
