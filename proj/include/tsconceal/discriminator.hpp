#pragma once

// Original-vs-perturbed datasets and the curriculum that trains a
// discriminator on progressively weaker attacks.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "tsconceal/attacks.hpp"
#include "tsconceal/data.hpp"
#include "tsconceal/models.hpp"
#include "tsconceal/scores.hpp"

namespace tsconceal {

/// Rows [0, n) are the originals (label 0); row n + i is original i after
/// the attack (label 1).
struct AdversarialDataset {
  LabeledSeriesSet set;
  AttackConfig attack;

  std::size_t pairs() const noexcept { return set.size() / 2; }
};

inline AdversarialDataset build_adversarial_dataset(const Classifier& target, const AttackConfig& attack,
                                                    const LabeledSeriesSet& originals) {
  if (attack.aggregation.uses_discriminator()) {
    throw ConfigError("discriminator data must come from the unregularised attack");
  }
  if (originals.size() == 0) throw InvalidArgument("no originals to perturb");
  const AttackTrajectory traj = run_attack(target, nullptr, originals.features, originals.labels, attack);
  const Tensor& adv = traj.final();
  const std::size_t n = originals.size(), len = originals.length();
  std::vector<double> values(originals.features.values().begin(), originals.features.values().end());
  values.insert(values.end(), adv.values().begin(), adv.values().end());
  AdversarialDataset out;
  out.attack = attack;
  out.set.features = Tensor({2 * n, len}, std::move(values));
  out.set.labels.assign(2 * n, 0);
  std::fill(out.set.labels.begin() + static_cast<std::ptrdiff_t>(n), out.set.labels.end(), 1);
  out.set.name = originals.name + "+" + to_string(attack.kind);
  out.set.stats = originals.stats;
  out.set.label_names = {"original", "perturbed"};
  return out;
}

/// Probability of "perturbed" per row, clamped to
/// [disc_score_floor, disc_score_ceil].
inline std::vector<double> disc_score(const Classifier& disc, const Tensor& X) {
  if (disc.spec().n_classes != 2) throw InvalidArgument("discriminator must be binary");
  const Tensor p = disc.predict_proba(X);
  std::vector<double> out(X.dim(0));
  for (std::size_t r = 0; r < out.size(); ++r) {
    out[r] = std::min(std::max(p.at(r, 1), disc_score_floor), disc_score_ceil);
  }
  return out;
}

/// Hard labels at threshold 0.5; a score of exactly 0.5 counts as original.
inline std::vector<int> disc_predict(const Classifier& disc, const Tensor& X) {
  const auto s = disc_score(disc, X);
  std::vector<int> out(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) out[i] = s[i] > 0.5 ? 1 : 0;
  return out;
}

struct CurriculumConfig {
  /// Vanilla attack used to generate the perturbed half; its strength is
  /// replaced by the schedule.
  AttackConfig attack;
  double eps_init = 0.03;
  double decay = 0.8;
  double threshold = 0.9;
  std::size_t max_rounds = 8;
  TrainConfig train;     // round 0
  TrainConfig finetune;  // later rounds
  double holdout_fraction = 0.2;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(eps_init > 0.0)) throw ConfigError("curriculum eps_init must be positive");
    if (!(decay > 0.0 && decay < 1.0)) throw ConfigError("curriculum decay must lie in (0, 1)");
    if (!(threshold > 0.5 && threshold <= 1.0)) throw ConfigError("curriculum threshold must lie in (0.5, 1]");
    if (max_rounds < 1) throw ConfigError("curriculum needs at least one round");
    if (!(holdout_fraction > 0.0 && holdout_fraction < 1.0)) {
      throw ConfigError("holdout fraction must lie in (0, 1)");
    }
    if (attack.aggregation.uses_discriminator()) {
      throw ConfigError("curriculum attack must be unregularised");
    }
    train.validate();
    finetune.validate();
  }

  /// eps_init scaled by `decay` once per round, multiplied out in order.
  double level(std::size_t round) const {
    double eps = eps_init;
    for (std::size_t k = 0; k < round; ++k) eps = decay * eps;
    return eps;
  }
};

struct CurriculumResult {
  Classifier disc;
  /// Strength of every round that was trained, in order.
  std::vector<double> schedule;
  /// Held-out accuracy after each trained round.
  std::vector<double> accuracies;
  /// Rounds whose accuracy cleared the threshold; disc is from the last one.
  std::size_t passed_rounds = 0;
  std::optional<double> first_failed_eps;
  /// Round 0 already missed the threshold.
  bool warning = false;

  std::size_t rounds_run() const noexcept { return schedule.size(); }
  double last_trained_eps() const { return schedule.at(passed_rounds == 0 ? 0 : passed_rounds - 1); }
  double final_accuracy() const { return accuracies.at(passed_rounds == 0 ? 0 : passed_rounds - 1); }
};

namespace detail {

/// Pair indices split once: a held-out original and its perturbed copy stay
/// on the same side.
struct PairSplit {
  std::vector<std::size_t> train_rows, eval_rows;
};

inline PairSplit split_pairs(std::size_t n, double holdout, std::uint64_t seed) {
  if (n < 2) throw InvalidArgument("curriculum needs at least two originals");
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng(seed);
  rng.shuffle(idx);
  std::size_t n_eval = static_cast<std::size_t>(std::llround(holdout * static_cast<double>(n)));
  n_eval = std::clamp<std::size_t>(n_eval, 1, n - 1);
  PairSplit s;
  for (std::size_t k = 0; k < n; ++k) {
    auto& side = k < n_eval ? s.eval_rows : s.train_rows;
    side.push_back(idx[k]);
    side.push_back(idx[k] + n);
  }
  std::sort(s.train_rows.begin(), s.train_rows.end());
  std::sort(s.eval_rows.begin(), s.eval_rows.end());
  return s;
}

}  // namespace detail

/// Train on B0 and B1 at eps_init; while held-out accuracy stays above the
/// threshold and rounds remain, shrink the strength by `decay`, regenerate
/// B1 and finetune. A round that misses the threshold ends the loop and its
/// discriminator is discarded in favour of the previous one.
inline CurriculumResult curriculum_train(const ModelSpec& disc_spec, const LabeledSeriesSet& originals,
                                         const Classifier& target, const CurriculumConfig& cfg) {
  cfg.validate();
  if (disc_spec.n_classes != 2) throw InvalidArgument("discriminator spec must have two classes");
  if (disc_spec.input_length != target.spec().input_length) {
    throw ShapeError("discriminator and target disagree on series length");
  }
  const detail::PairSplit split = detail::split_pairs(originals.size(), cfg.holdout_fraction, cfg.seed);

  std::optional<Classifier> current;
  std::vector<double> schedule, accuracies;
  for (std::size_t round = 0; round < cfg.max_rounds; ++round) {
    const double eps = cfg.level(round);
    AttackConfig attack = cfg.attack.with_strength(eps);
    attack.seed = mix_seed(cfg.seed, 1000 + round);
    const AdversarialDataset data = build_adversarial_dataset(target, attack, originals);
    const LabeledSeriesSet train = data.set.subset(split.train_rows);
    const LabeledSeriesSet eval = data.set.subset(split.eval_rows);

    TrainConfig tc = round == 0 ? cfg.train : cfg.finetune;
    tc.seed = mix_seed(cfg.seed, round);
    const Classifier start = round == 0 ? Classifier::build(disc_spec, mix_seed(cfg.seed, 999)) : *current;
    const Classifier trained = fit(start, train, tc);
    const double acc = accuracy(eval.labels, disc_predict(trained, eval.features));
    schedule.push_back(eps);
    accuracies.push_back(acc);

    if (acc > cfg.threshold) {
      current = trained;
      continue;
    }
    if (round == 0) {
      CurriculumResult r{trained, schedule, accuracies, 0, eps, true};
      return r;
    }
    CurriculumResult r{*current, schedule, accuracies, round, eps, false};
    return r;
  }
  return CurriculumResult{*current, schedule, accuracies, cfg.max_rounds, std::nullopt, false};
}

}  // namespace tsconceal
