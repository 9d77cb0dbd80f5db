#pragma once

// Untargeted attacks on a trained classifier, optionally regularised by a
// frozen discriminator through an AggregationSpec. Every attack returns the
// full trajectory x^0 = x, x^1, ..., so metric curves can be computed per
// iteration.

#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "tsconceal/aggregation.hpp"
#include "tsconceal/diffcore.hpp"
#include "tsconceal/error.hpp"
#include "tsconceal/models.hpp"
#include "tsconceal/random.hpp"

namespace tsconceal {

enum class AttackKind { ifgsm, pgd, simba, sgm };

inline std::string to_string(AttackKind k) {
  switch (k) {
    case AttackKind::ifgsm: return "ifgsm";
    case AttackKind::pgd: return "pgd";
    case AttackKind::simba: return "simba";
    case AttackKind::sgm: return "sgm";
  }
  return "?";
}

inline AttackKind parse_attack_kind(const std::string& s) {
  if (s == "ifgsm") return AttackKind::ifgsm;
  if (s == "pgd") return AttackKind::pgd;
  if (s == "simba") return AttackKind::simba;
  if (s == "sgm") return AttackKind::sgm;
  throw ConfigError("unknown attack '" + s + "' (expected ifgsm, pgd, simba or sgm)");
}

struct AttackConfig {
  AttackKind kind = AttackKind::ifgsm;
  double eps = 0.03;                 // step (ifgsm, simba) or clip radius (sgm)
  std::size_t steps = 10;            // T (ifgsm, pgd, sgm)
  double eta = 0.1;                  // l-inf radius (pgd)
  std::size_t max_queries = 500;     // T_max (simba)
  double sgm_l2 = 0.0;
  double sgm_smooth = 0.0;
  AggregationSpec aggregation;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(eps >= 0.0) || !std::isfinite(eps)) throw ConfigError("attack eps must be a non-negative real");
    if (kind != AttackKind::simba && steps < 1) throw ConfigError("attack needs at least one step");
    if (kind == AttackKind::pgd && !(eta > 0.0)) throw ConfigError("pgd eta must be positive");
    if (!(sgm_l2 >= 0.0) || !(sgm_smooth >= 0.0)) {
      throw ConfigError("sgm coefficients must be non-negative");
    }
    aggregation.validate();
    if (aggregation.kind == AggregationKind::hypercone &&
        (kind == AttackKind::simba || kind == AttackKind::sgm)) {
      throw ConfigError("hypercone aggregation needs gradients; use it with ifgsm or pgd");
    }
  }

  /// The quantity the discriminator curriculum shrinks.
  double strength() const noexcept { return kind == AttackKind::pgd ? eta : eps; }

  AttackConfig with_strength(double s) const {
    AttackConfig c = *this;
    (kind == AttackKind::pgd ? c.eta : c.eps) = s;
    return c;
  }
};

struct AttackTrajectory {
  /// snapshots[0] is the clean input; snapshots[t] is x^t.
  std::vector<Tensor> snapshots;
  /// Model probes issued (simba only).
  std::size_t queries = 0;
  std::vector<std::size_t> series_queries;
  AttackConfig config;

  std::size_t iterations() const noexcept { return snapshots.empty() ? 0 : snapshots.size() - 1; }
  const Tensor& final() const { return snapshots.back(); }
};

namespace detail {

inline double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

inline void check_attack_inputs(const Classifier& target, const Classifier* disc, const Tensor& X,
                                std::span<const int> y, const AttackConfig& cfg) {
  cfg.validate();
  target.check_input(X);
  if (X.dim(0) != y.size()) {
    throw ShapeError("attack: " + std::to_string(X.dim(0)) + " series but " + std::to_string(y.size()) +
                     " labels");
  }
  for (int l : y) {
    if (l < 0 || static_cast<std::size_t>(l) >= target.spec().n_classes) {
      throw InvalidArgument("attack: label outside the target's classes");
    }
  }
  if (cfg.aggregation.uses_discriminator()) {
    if (disc == nullptr) {
      throw InvalidArgument("attack: aggregation '" + to_string(cfg.aggregation.kind) +
                            "' needs a discriminator");
    }
    disc->check_input(X);
    if (disc->spec().n_classes != 2) throw InvalidArgument("discriminator must be binary");
  }
}

/// Loss graph for gradient attacks. The output is the summed objective, so
/// row i of d/dx is the gradient of series i's own objective.
class ObjectiveGraph {
 public:
  enum class Part { aggregated, target_only, disc_only };

  ObjectiveGraph(const Classifier& target, const Classifier* disc, const AttackConfig& cfg, Part part)
      : target_(target), disc_(disc) {
    x_ = g_.leaf("x", true);
    const bool sgm = cfg.kind == AttackKind::sgm;
    if (part != Part::disc_only) {
      labels_ = g_.leaf("labels", false);
      target_net_ = append_network(g_, target.spec(), x_, false, false, "target.");
      a_ = g_.softmax_xent(target_net_.logits, *labels_);
      if (sgm) {
        // KL(p0 || f(x)) = cross-entropy against p0 minus the entropy of p0.
        entropy_ = g_.leaf("entropy", false);
        a_ = g_.sub(a_, *entropy_);
      }
    }
    const bool with_disc = part == Part::disc_only ||
                           (part == Part::aggregated && cfg.aggregation.uses_discriminator());
    if (with_disc) {
      disc_net_ = append_network(g_, disc->spec(), x_, false, false, "disc.");
      perturbed_ = g_.leaf("perturbed", false);
      d_ = g_.clamp(g_.softmax_xent(disc_net_.logits, *perturbed_), -std::log(disc_score_ceil),
                    -std::log(disc_score_floor));
    }
    diff::NodeId per_sample{};
    switch (part) {
      case Part::target_only: per_sample = a_; break;
      case Part::disc_only: per_sample = d_; break;
      case Part::aggregated:
        per_sample = with_disc ? append_aggregation(g_, cfg.aggregation, a_, d_) : a_;
        break;
    }
    diff::NodeId total = g_.sum(per_sample);
    if (sgm && part != Part::disc_only && (cfg.sgm_l2 > 0.0 || cfg.sgm_smooth > 0.0)) {
      origin_ = g_.leaf("origin", false);
      const diff::NodeId delta = g_.sub(x_, *origin_);
      if (cfg.sgm_l2 > 0.0) total = g_.sub(total, g_.scale(g_.sum(g_.mul(delta, delta)), cfg.sgm_l2));
      if (cfg.sgm_smooth > 0.0) {
        const diff::NodeId tv = g_.sum(g_.smooth_abs(g_.time_diff(delta), 1e-6));
        total = g_.sub(total, g_.scale(tv, cfg.sgm_smooth));
      }
    }
    g_.set_output(total);
  }

  /// d(objective)/dx at x. `targets` are one-hot labels (or p0 for sgm).
  Tensor gradient(const Tensor& x, const Tensor* targets, const Tensor* entropy,
                  const Tensor* origin) const {
    diff::Bindings b;
    b[x_] = x;
    if (labels_) {
      b[*labels_] = *targets;
      target_.bind(b, target_net_);
    }
    if (entropy_) b[*entropy_] = *entropy;
    if (origin_) b[*origin_] = *origin;
    if (perturbed_) {
      Tensor ones({x.dim(0), 2});
      for (std::size_t r = 0; r < x.dim(0); ++r) ones[2 * r + 1] = 1.0;
      b[*perturbed_] = std::move(ones);
      disc_->bind(b, disc_net_);
    }
    const diff::Forward fwd = diff::evaluate(g_, b);
    return diff::backpropagate(g_, fwd).at(x_);
  }

 private:
  const Classifier& target_;
  const Classifier* disc_;
  diff::Graph g_;
  diff::NodeId x_;
  std::optional<diff::NodeId> labels_, entropy_, origin_, perturbed_;
  NetworkNodes target_net_, disc_net_;
  diff::NodeId a_{}, d_{};
};

/// Ascent direction of the configured objective, row by row.
class AscentDirection {
 public:
  AscentDirection(const Classifier& target, const Classifier* disc, const AttackConfig& cfg)
      : hypercone_(cfg.aggregation.kind == AggregationKind::hypercone), delta_(cfg.aggregation.delta) {
    using Part = ObjectiveGraph::Part;
    if (hypercone_) {
      target_part_.emplace(target, disc, cfg, Part::target_only);
      disc_part_.emplace(target, disc, cfg, Part::disc_only);
    } else {
      target_part_.emplace(target, disc, cfg, Part::aggregated);
    }
  }

  Tensor operator()(const Tensor& x, const Tensor& targets, const Tensor* entropy = nullptr,
                    const Tensor* origin = nullptr) const {
    Tensor gt = target_part_->gradient(x, &targets, entropy, origin);
    if (!hypercone_) return gt;
    const Tensor gd = disc_part_->gradient(x, nullptr, nullptr, nullptr);
    for (std::size_t r = 0; r < x.dim(0); ++r) {
      try {
        const auto mixed = hypercone_gradient(gt.row(r), gd.row(r), delta_);
        std::copy(mixed.begin(), mixed.end(), gt.row(r).begin());
      } catch (const DegenerateGradient&) {
        // keep the target gradient for this row
      }
    }
    return gt;
  }

 private:
  bool hypercone_;
  double delta_;
  std::optional<ObjectiveGraph> target_part_, disc_part_;
};

/// Shared loop of the sign-gradient attacks.
template <class Project>
AttackTrajectory sign_gradient_attack(const Classifier& target, const Classifier* disc, const Tensor& X,
                                      std::span<const int> y, const AttackConfig& cfg, double step,
                                      Project project) {
  const AscentDirection direction(target, disc, cfg);
  const Tensor targets = one_hot(y, target.spec().n_classes);
  AttackTrajectory traj;
  traj.config = cfg;
  traj.snapshots.reserve(cfg.steps + 1);
  traj.snapshots.push_back(X);
  Tensor x = X;
  for (std::size_t t = 0; t < cfg.steps; ++t) {
    const Tensor grad = direction(x, targets);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] += step * sign(grad[i]);
    project(x);
    traj.snapshots.push_back(x);
  }
  return traj;
}

}  // namespace detail

/// x^{t+1} = x^t + eps * sign(grad_x g(L_target, -log D)).
inline AttackTrajectory ifgsm_attack(const Classifier& target, const Classifier* disc, const Tensor& X,
                                     std::span<const int> y, const AttackConfig& cfg) {
  if (cfg.kind != AttackKind::ifgsm) throw ConfigError("ifgsm_attack called with a " + to_string(cfg.kind) + " config");
  detail::check_attack_inputs(target, disc, X, y, cfg);
  return detail::sign_gradient_attack(target, disc, X, y, cfg, cfg.eps, [](Tensor&) {});
}

/// Sign steps of size 2.5 eta / T, each followed by clipping into the
/// l-inf ball of radius eta around the clean series.
inline AttackTrajectory pgd_attack(const Classifier& target, const Classifier* disc, const Tensor& X,
                                   std::span<const int> y, const AttackConfig& cfg) {
  if (cfg.kind != AttackKind::pgd) throw ConfigError("pgd_attack called with a " + to_string(cfg.kind) + " config");
  detail::check_attack_inputs(target, disc, X, y, cfg);
  const double step = 2.5 * cfg.eta / static_cast<double>(cfg.steps);
  const double eta = cfg.eta;
  return detail::sign_gradient_attack(target, disc, X, y, cfg, step, [&X, eta](Tensor& x) {
    for (std::size_t i = 0; i < x.size(); ++i) {
      x[i] = std::min(std::max(x[i], X[i] - eta), X[i] + eta);
    }
  });
}

/// Smooth perturbation baseline: sign ascent (step eps/10) on
///   KL(f(x) || f(x + delta)) - l2 |delta|^2 - smooth sum_t |delta_{t+1} - delta_t|
/// with delta clipped to [-eps, eps]. The KL term has a zero gradient at
/// delta = 0, so the search starts from seeded noise of magnitude <= 1e-3 eps
/// (snapshot 0 is still the clean input).
inline AttackTrajectory sgm_attack(const Classifier& target, const Classifier* disc, const Tensor& X,
                                   std::span<const int> y, const AttackConfig& cfg) {
  if (cfg.kind != AttackKind::sgm) throw ConfigError("sgm_attack called with a " + to_string(cfg.kind) + " config");
  detail::check_attack_inputs(target, disc, X, y, cfg);
  const detail::AscentDirection direction(target, disc, cfg);
  const Tensor p0 = target.predict_proba(X);
  Tensor entropy({X.dim(0)});
  for (std::size_t r = 0; r < X.dim(0); ++r) {
    double h = 0.0;
    for (double p : p0.row(r)) {
      if (p > 0.0) h -= p * std::log(p);
    }
    entropy[r] = h;
  }
  Rng rng(cfg.seed);
  Tensor delta(X.shape());
  for (double& v : delta.values()) v = rng.uniform(-1e-3, 1e-3) * cfg.eps;
  const double step = cfg.eps / 10.0;

  AttackTrajectory traj;
  traj.config = cfg;
  traj.snapshots.push_back(X);
  Tensor x(X.shape());
  for (std::size_t t = 0; t < cfg.steps; ++t) {
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = X[i] + delta[i];
    const Tensor grad = direction(x, p0, &entropy, &X);
    for (std::size_t i = 0; i < delta.size(); ++i) {
      delta[i] = std::min(std::max(delta[i] + step * detail::sign(grad[i]), -cfg.eps), cfg.eps);
      x[i] = X[i] + delta[i];
    }
    traj.snapshots.push_back(x);
  }
  return traj;
}

/// Simple black-box attack over the Cartesian basis. For every series, pick
/// an unused time index, try +eps then -eps, and keep the first probe that
/// strictly improves the objective (lower p_f(y|x) when unregularised).
/// A series stops once its prediction flips or after max_queries
/// iterations; the index pool refills once exhausted. Iteration t of the
/// trajectory is the state after every live series took its t-th step.
inline AttackTrajectory simba_attack(const Classifier& target, const Classifier* disc, const Tensor& X,
                                     std::span<const int> y, const AttackConfig& cfg) {
  if (cfg.kind != AttackKind::simba) throw ConfigError("simba_attack called with a " + to_string(cfg.kind) + " config");
  detail::check_attack_inputs(target, disc, X, y, cfg);
  const std::size_t n = X.dim(0), len = X.dim(1);
  const bool regularised = cfg.aggregation.uses_discriminator();
  const AggregationSpec& agg = cfg.aggregation;

  // Higher is better for the attacker; the unregularised score is -p_y.
  auto scores = [&](const Tensor& xs, std::span<const std::size_t> rows, std::vector<int>& pred) {
    const Tensor probs = target.predict_proba(xs);
    std::vector<double> out(rows.size());
    std::optional<Tensor> dprobs;
    if (regularised) dprobs = disc->predict_proba(xs);
    pred = detail::argmax_rows(probs);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const double py = probs.at(i, static_cast<std::size_t>(y[rows[i]]));
      if (!regularised) {
        out[i] = -py;
        continue;
      }
      const double a = -std::log(std::max(py, 1e-300));
      const double d = neg_log_disc(dprobs->at(i, 1));
      out[i] = agg.kind == AggregationKind::sum ? sum_objective(a, d, agg.alpha)
                                                : harmonic_objective(a, d, agg.gamma);
    }
    return out;
  };

  Tensor x = X;
  std::vector<std::size_t> all(n);
  std::iota(all.begin(), all.end(), std::size_t{0});
  std::vector<int> pred;
  std::vector<double> best = scores(X, all, pred);
  std::vector<bool> live(n);
  for (std::size_t r = 0; r < n; ++r) live[r] = pred[r] == y[r];

  std::vector<Rng> rngs;
  std::vector<std::vector<std::size_t>> pools(n);
  std::vector<std::size_t> cursor(n, len);
  rngs.reserve(n);
  for (std::size_t r = 0; r < n; ++r) rngs.emplace_back(mix_seed(cfg.seed, r));

  AttackTrajectory traj;
  traj.config = cfg;
  traj.series_queries.assign(n, 0);
  traj.snapshots.push_back(X);

  for (std::size_t t = 0; t < cfg.max_queries; ++t) {
    std::vector<std::size_t> rows;
    for (std::size_t r = 0; r < n; ++r) {
      if (live[r]) rows.push_back(r);
    }
    if (rows.empty()) break;
    std::vector<std::size_t> coord(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const std::size_t r = rows[i];
      if (cursor[r] == len) {
        pools[r].resize(len);
        std::iota(pools[r].begin(), pools[r].end(), std::size_t{0});
        rngs[r].shuffle(pools[r]);
        cursor[r] = 0;
      }
      coord[i] = pools[r][cursor[r]++];
    }
    std::vector<std::size_t> pending(rows.size());
    std::iota(pending.begin(), pending.end(), std::size_t{0});
    for (double alpha : {cfg.eps, -cfg.eps}) {
      if (pending.empty()) break;
      Tensor probe({pending.size(), len});
      std::vector<std::size_t> probe_rows(pending.size());
      for (std::size_t k = 0; k < pending.size(); ++k) {
        const std::size_t r = rows[pending[k]];
        probe_rows[k] = r;
        auto src = x.row(r);
        auto dst = probe.row(k);
        std::copy(src.begin(), src.end(), dst.begin());
        dst[coord[pending[k]]] += alpha;
        ++traj.series_queries[r];
      }
      const std::vector<double> s = scores(probe, probe_rows, pred);
      std::vector<std::size_t> still;
      for (std::size_t k = 0; k < pending.size(); ++k) {
        const std::size_t r = probe_rows[k];
        if (s[k] > best[r]) {
          best[r] = s[k];
          auto src = probe.row(k);
          std::copy(src.begin(), src.end(), x.row(r).begin());
          if (pred[k] != y[r]) live[r] = false;
        } else {
          still.push_back(pending[k]);
        }
      }
      pending = std::move(still);
    }
    traj.snapshots.push_back(x);
  }
  traj.queries = std::accumulate(traj.series_queries.begin(), traj.series_queries.end(), std::size_t{0});
  return traj;
}

inline AttackTrajectory run_attack(const Classifier& target, const Classifier* disc, const Tensor& X,
                                   std::span<const int> y, const AttackConfig& cfg) {
  switch (cfg.kind) {
    case AttackKind::ifgsm: return ifgsm_attack(target, disc, X, y, cfg);
    case AttackKind::pgd: return pgd_attack(target, disc, X, y, cfg);
    case AttackKind::simba: return simba_attack(target, disc, X, y, cfg);
    case AttackKind::sgm: return sgm_attack(target, disc, X, y, cfg);
  }
  throw ConfigError("unknown attack kind");
}

}  // namespace tsconceal
