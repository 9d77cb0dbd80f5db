#pragma once

// Ways of folding the target loss a(x) and the concealment term
// d(x) = -log D(x) into one attack objective.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "tsconceal/diffcore.hpp"
#include "tsconceal/error.hpp"

namespace tsconceal {

enum class AggregationKind { none, sum, harmonic, hypercone };

inline std::string to_string(AggregationKind k) {
  switch (k) {
    case AggregationKind::none: return "none";
    case AggregationKind::sum: return "sum";
    case AggregationKind::harmonic: return "harmonic";
    case AggregationKind::hypercone: return "hypercone";
  }
  return "?";
}

inline AggregationKind parse_aggregation_kind(const std::string& s) {
  if (s == "none" || s == "vanilla") return AggregationKind::none;
  if (s == "sum") return AggregationKind::sum;
  if (s == "harmonic") return AggregationKind::harmonic;
  if (s == "hypercone") return AggregationKind::hypercone;
  throw ConfigError("unknown aggregation '" + s + "' (expected none, sum, harmonic or hypercone)");
}

/// Discriminator scores are clamped to this range before any log.
inline constexpr double disc_score_floor = 1e-7;
inline constexpr double disc_score_ceil = 1.0 - 1e-7;

struct AggregationSpec {
  AggregationKind kind = AggregationKind::none;
  double alpha = 1.0;   // sum weight
  double gamma = 1e-8;  // harmonic stabiliser
  double delta = 0.0;   // hypercone angle offset, radians

  void validate() const {
    if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw ConfigError("alpha must be a non-negative real");
    if (!(gamma > 0.0)) throw ConfigError("gamma must be positive");
    if (kind == AggregationKind::hypercone &&
        !(delta > -std::numbers::pi / 2 && delta < std::numbers::pi / 2)) {
      throw ConfigError("hypercone delta must lie in (-pi/2, pi/2)");
    }
  }

  bool uses_discriminator() const noexcept { return kind != AggregationKind::none; }
};

/// Thrown when a gradient has zero norm; callers fall back to the target
/// gradient.
class DegenerateGradient : public InvalidArgument {
 public:
  using InvalidArgument::InvalidArgument;
};

inline double sum_objective(double l_target, double neg_log_d, double alpha) {
  if (!std::isfinite(l_target) || !std::isfinite(neg_log_d) || !std::isfinite(alpha)) {
    throw InvalidArgument("sum_objective: non-finite input");
  }
  return l_target + alpha * neg_log_d;
}

/// 2 a d / (a + d + gamma).
inline double harmonic_objective(double a, double d, double gamma) {
  if (!(a >= 0.0) || !(d >= 0.0) || !(gamma >= 0.0)) {
    throw InvalidArgument("harmonic_objective: inputs must be non-negative");
  }
  const double denom = a + d + gamma;
  return denom == 0.0 ? 0.0 : 2.0 * a * d / denom;
}

/// -log of a discriminator score after clamping it into
/// [disc_score_floor, disc_score_ceil].
inline double neg_log_disc(double score) {
  const double s = std::min(std::max(score, disc_score_floor), disc_score_ceil);
  return -std::log(s);
}

/// Combines the two loss gradients in gradient space:
///   (cos D / sin phi) sin(D + phi) (g_t + g_d |g_t|/|g_d| (sin phi tan D - cos phi))
/// with phi the angle between g_t and g_d. When the two are collinear
/// (phi within 1e-6 of 0 or pi) the formula is singular and g_t is returned.
inline std::vector<double> hypercone_gradient(std::span<const double> grad_target,
                                              std::span<const double> grad_disc, double delta) {
  if (grad_target.size() != grad_disc.size()) {
    throw ShapeError("hypercone_gradient: gradient sizes differ");
  }
  double tt = 0.0, dd = 0.0, td = 0.0;
  for (std::size_t i = 0; i < grad_target.size(); ++i) {
    tt += grad_target[i] * grad_target[i];
    dd += grad_disc[i] * grad_disc[i];
    td += grad_target[i] * grad_disc[i];
  }
  const double nt = std::sqrt(tt), nd = std::sqrt(dd);
  if (nt == 0.0 || nd == 0.0) throw DegenerateGradient("hypercone_gradient: zero-norm gradient");
  std::vector<double> out(grad_target.begin(), grad_target.end());
  const double cos_raw = std::clamp(td / (nt * nd), -1.0, 1.0);
  const double phi = std::acos(cos_raw);
  constexpr double edge = 1e-6;
  if (phi < edge || phi > std::numbers::pi - edge) return out;
  const double sin_phi = std::sin(phi), cos_phi = std::cos(phi);
  const double lead = std::cos(delta) / sin_phi * std::sin(delta + phi);
  const double mix = nt / nd * (sin_phi * std::tan(delta) - cos_phi);
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = lead * (grad_target[i] + grad_disc[i] * mix);
  }
  return out;
}

/// Per-sample aggregated objective inside a graph. `target_loss` and
/// `neg_log_d` are [N] vectors; hypercone has no loss-space form.
inline diff::NodeId append_aggregation(diff::Graph& g, const AggregationSpec& spec,
                                       diff::NodeId target_loss, diff::NodeId neg_log_d) {
  switch (spec.kind) {
    case AggregationKind::none:
      return target_loss;
    case AggregationKind::sum:
      return g.add(target_loss, g.scale(neg_log_d, spec.alpha));
    case AggregationKind::harmonic: {
      const diff::NodeId num = g.scale(g.mul(target_loss, neg_log_d), 2.0);
      const diff::NodeId den = g.add_scalar(g.add(target_loss, neg_log_d), spec.gamma);
      return g.div(num, den);
    }
    case AggregationKind::hypercone:
      break;
  }
  throw ConfigError("hypercone aggregation combines gradients, not losses");
}

}  // namespace tsconceal
