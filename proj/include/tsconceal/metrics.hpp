#pragma once

#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tsconceal/attacks.hpp"
#include "tsconceal/discriminator.hpp"
#include "tsconceal/models.hpp"
#include "tsconceal/scores.hpp"

namespace tsconceal {

/// E = 1 - macro F1 of the target on the attacked series.
inline double efficiency(const Classifier& target, const Tensor& X_adv, std::span<const int> y_true) {
  if (X_adv.rank() != 2 || X_adv.dim(0) != y_true.size()) {
    throw ShapeError("efficiency: " + shape_string(X_adv.shape()) + " series for " +
                     std::to_string(y_true.size()) + " labels");
  }
  return 1.0 - f1(y_true, target.predict(X_adv), Averaging::macro);
}

namespace detail {

inline double concealability_from_scores(std::span<const double> clean, std::span<const double> adv) {
  if (clean.size() != adv.size() || clean.empty()) {
    throw ShapeError("concealability: clean and adversarial sets must be equal and non-empty");
  }
  std::vector<int> truth(2 * clean.size(), 0), pred(2 * clean.size(), 0);
  for (std::size_t i = 0; i < clean.size(); ++i) {
    truth[clean.size() + i] = 1;
    pred[i] = clean[i] > 0.5 ? 1 : 0;
    pred[clean.size() + i] = adv[i] > 0.5 ? 1 : 0;
  }
  return 1.0 - f1(truth, pred, Averaging::binary_pos1);
}

}  // namespace detail

/// C = 1 - F1 of class "perturbed" on the balanced set clean (0) + adv (1).
inline double concealability(const Classifier& disc, const Tensor& X_clean, const Tensor& X_adv) {
  if (X_clean.shape() != X_adv.shape()) {
    throw ShapeError("concealability: clean " + shape_string(X_clean.shape()) + " vs adversarial " +
                     shape_string(X_adv.shape()));
  }
  const auto c = disc_score(disc, X_clean);
  const auto a = disc_score(disc, X_adv);
  return detail::concealability_from_scores(c, a);
}

/// S = 2CE / (C + E), 0 when both are 0.
inline double successfulness(double C, double E) {
  if (!(C >= 0.0 && C <= 1.0) || !(E >= 0.0 && E <= 1.0)) {
    throw InvalidArgument("successfulness needs C and E in [0, 1]");
  }
  const double s = C + E;
  return s == 0.0 ? 0.0 : 2.0 * C * E / s;
}

struct MetricsRow {
  std::size_t iteration = 0;
  double efficiency = 0.0;
  double concealability = 0.0;
  double successfulness = 0.0;
};

enum class SelectionReason { iteration_floor, efficiency_escape, floor_unmet };

inline std::string to_string(SelectionReason r) {
  switch (r) {
    case SelectionReason::iteration_floor: return "iteration-floor";
    case SelectionReason::efficiency_escape: return "efficiency-escape";
    case SelectionReason::floor_unmet: return "floor-unmet";
  }
  return "?";
}

struct Selection {
  std::size_t index = 0;
  SelectionReason reason = SelectionReason::iteration_floor;
  bool floor_unmet() const noexcept { return reason == SelectionReason::floor_unmet; }
};

struct MetricsReport {
  std::vector<MetricsRow> rows;
  Selection selection;

  const MetricsRow& selected() const { return rows.at(selection.index); }
};

/// Minimum iteration a row needs before it can be selected, unless its
/// Efficiency exceeds `efficiency_escape`.
struct SelectionFloors {
  std::size_t ifgsm = 40;
  std::size_t pgd = 40;
  std::size_t simba = 1300;
  std::size_t sgm = 400;
  double efficiency_escape = 0.9;

  std::size_t floor(AttackKind k) const noexcept {
    switch (k) {
      case AttackKind::ifgsm: return ifgsm;
      case AttackKind::pgd: return pgd;
      case AttackKind::simba: return simba;
      case AttackKind::sgm: return sgm;
    }
    return 0;
  }

  static SelectionFloors disabled() { return {0, 0, 0, 0, 0.9}; }
};

/// Argmax of S over qualifying rows, ties to the earliest. Rows with
/// iteration >= floor qualify, as do rows with E above the escape level.
/// With no qualifying row the last one is returned and flagged.
inline Selection select_best_iteration(std::span<const MetricsRow> rows, AttackKind kind,
                                       const SelectionFloors& floors = {}) {
  if (rows.empty()) throw InvalidArgument("select_best_iteration: empty report");
  const std::size_t floor = floors.floor(kind);
  std::optional<Selection> best;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const bool by_floor = rows[i].iteration >= floor;
    const bool by_escape = rows[i].efficiency > floors.efficiency_escape;
    if (!by_floor && !by_escape) continue;
    if (!best || rows[i].successfulness > rows[best->index].successfulness) {
      best = Selection{i, by_floor ? SelectionReason::iteration_floor : SelectionReason::efficiency_escape};
    }
  }
  if (!best) return Selection{rows.size() - 1, SelectionReason::floor_unmet};
  return *best;
}

/// E, C and S for iterations 1..T of a trajectory.
inline MetricsReport evaluate_trajectory(const Classifier& target, const Classifier& disc,
                                         const AttackTrajectory& traj, std::span<const int> y_true,
                                         const SelectionFloors& floors = {}) {
  if (traj.snapshots.size() < 2) throw InvalidArgument("trajectory has no attack iterations");
  const Tensor& clean = traj.snapshots.front();
  const auto clean_scores = disc_score(disc, clean);
  MetricsReport report;
  for (std::size_t t = 1; t < traj.snapshots.size(); ++t) {
    const Tensor& adv = traj.snapshots[t];
    MetricsRow row;
    row.iteration = t;
    row.efficiency = efficiency(target, adv, y_true);
    row.concealability = detail::concealability_from_scores(clean_scores, disc_score(disc, adv));
    row.successfulness = successfulness(row.concealability, row.efficiency);
    report.rows.push_back(row);
  }
  report.selection = select_best_iteration(report.rows, traj.config.kind, floors);
  return report;
}

}  // namespace tsconceal
