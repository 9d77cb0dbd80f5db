#include <gtest/gtest.h>

#include <numeric>

#include "oracles.hpp"

using namespace tsconceal;

namespace {

constexpr std::size_t kLen = 16;

LabeledSeriesSet data(std::size_t n, std::uint64_t seed) {
  SyntheticSpec spec;
  spec.n_per_class = n;
  spec.length = kLen;
  spec.seed = seed;
  return generate_synthetic(spec);
}

ModelSpec mlp(std::size_t classes = 2) {
  ModelSpec s;
  s.input_length = kLen;
  s.widths = {8};
  s.n_classes = classes;
  return s;
}

const Classifier& target() {
  static const Classifier c = [] {
    TrainConfig cfg;
    cfg.epochs = 20;
    cfg.seed = 1;
    return fit(Classifier::build(mlp(), 3), data(20, 1), cfg);
  }();
  return c;
}

}  // namespace

TEST(AdversarialDataset, IsBalancedAndPaired) {
  const auto originals = data(6, 2);
  AttackConfig atk;
  atk.eps = 0.05;
  atk.steps = 3;
  const auto ds = build_adversarial_dataset(target(), atk, originals);
  ASSERT_EQ(ds.set.size(), 24u);
  EXPECT_EQ(std::accumulate(ds.set.labels.begin(), ds.set.labels.end(), 0), 12);
  for (std::size_t r = 0; r < 12; ++r) {
    EXPECT_EQ(ds.set.labels[r], 0);
    EXPECT_EQ(ds.set.labels[12 + r], 1);
    for (std::size_t t = 0; t < kLen; ++t) {
      EXPECT_EQ(ds.set.features.at(r, t), originals.features.at(r, t));
      EXPECT_LE(std::abs(ds.set.features.at(12 + r, t) - originals.features.at(r, t)), 3 * 0.05 + 1e-12);
    }
  }
}

TEST(AdversarialDataset, ZeroEpsCopiesOriginals) {
  const auto originals = data(4, 3);
  AttackConfig atk;
  atk.eps = 0.0;
  const auto ds = build_adversarial_dataset(target(), atk, originals);
  for (std::size_t r = 0; r < 8; ++r) {
    for (std::size_t t = 0; t < kLen; ++t) EXPECT_EQ(ds.set.features.at(8 + r, t), ds.set.features.at(r, t));
  }
}

TEST(AdversarialDataset, RejectsRegularisedAttack) {
  AttackConfig atk;
  atk.aggregation.kind = AggregationKind::sum;
  EXPECT_THROW(build_adversarial_dataset(target(), atk, data(2, 1)), ConfigError);
}

TEST(DiscScore, ZeroHeadScoresHalfAndPredictsOriginal) {
  const Classifier disc = Classifier::build(mlp(), 4);
  const auto set = data(3, 4);
  for (double s : disc_score(disc, set.features)) EXPECT_EQ(s, 0.5);
  for (int p : disc_predict(disc, set.features)) EXPECT_EQ(p, 0);
  EXPECT_THROW(disc_score(Classifier::build(mlp(3), 1), set.features), InvalidArgument);
}

TEST(DiscScore, AlwaysInsideClampRange) {
  const auto spec = mlp();
  auto params = Classifier::build(spec, 1).parameters();
  params.at("head.bias") = Tensor::vector({-60.0, 60.0});
  const Classifier sure(spec, params, 1);
  for (double s : disc_score(sure, data(3, 5).features)) EXPECT_EQ(s, disc_score_ceil);
  params.at("head.bias") = Tensor::vector({60.0, -60.0});
  const Classifier never(spec, params, 1);
  for (double s : disc_score(never, data(3, 5).features)) EXPECT_EQ(s, disc_score_floor);
}

TEST(Curriculum, ScheduleIsGeometric) {
  CurriculumConfig cfg;
  EXPECT_EQ(cfg.level(0), 0.03);
  EXPECT_NEAR(cfg.level(2), 0.0192, 1e-15);
  for (std::size_t k = 1; k < 10; ++k) EXPECT_EQ(cfg.level(k), cfg.level(k - 1) * 0.8);
}

TEST(Curriculum, PairSplitKeepsPairsTogether) {
  const auto s = detail::split_pairs(10, 0.2, 3);
  EXPECT_EQ(s.eval_rows.size(), 4u);
  EXPECT_EQ(s.train_rows.size(), 16u);
  for (std::size_t r : s.eval_rows) {
    const std::size_t mate = r < 10 ? r + 10 : r - 10;
    EXPECT_NE(std::find(s.eval_rows.begin(), s.eval_rows.end(), mate), s.eval_rows.end());
  }
  EXPECT_THROW(detail::split_pairs(1, 0.2, 3), InvalidArgument);
}

TEST(Curriculum, RunsAndRecordsRounds) {
  CurriculumConfig cfg;
  cfg.attack.steps = 10;
  cfg.eps_init = 0.3;
  cfg.max_rounds = 3;
  cfg.threshold = 0.6;
  cfg.train.epochs = 20;
  cfg.finetune.epochs = 10;
  cfg.seed = 5;
  const auto result = curriculum_train(mlp(), data(20, 6), target(), cfg);
  ASSERT_GE(result.rounds_run(), 1u);
  EXPECT_LE(result.rounds_run(), 3u);
  EXPECT_EQ(result.schedule.size(), result.accuracies.size());
  for (std::size_t k = 0; k < result.rounds_run(); ++k) EXPECT_EQ(result.schedule[k], cfg.level(k));
  if (result.first_failed_eps) {
    EXPECT_EQ(*result.first_failed_eps, result.schedule.back());
    EXPECT_LE(result.accuracies.back(), cfg.threshold);
  } else {
    EXPECT_EQ(result.passed_rounds, 3u);
  }
  for (std::size_t k = 0; k < result.passed_rounds; ++k) EXPECT_GT(result.accuracies[k], cfg.threshold);
  const auto again = curriculum_train(mlp(), data(20, 6), target(), cfg);
  EXPECT_EQ(again.disc.parameters(), result.disc.parameters());
  EXPECT_EQ(again.accuracies, result.accuracies);
}

TEST(Curriculum, ImpossibleTaskWarnsAtRoundZero) {
  CurriculumConfig cfg;
  cfg.attack.steps = 1;
  cfg.eps_init = 1e-12;
  cfg.max_rounds = 4;
  cfg.train.epochs = 2;
  const auto result = curriculum_train(mlp(), data(10, 7), target(), cfg);
  EXPECT_TRUE(result.warning);
  EXPECT_EQ(result.rounds_run(), 1u);
  EXPECT_EQ(result.passed_rounds, 0u);
}

TEST(Curriculum, Validation) {
  CurriculumConfig cfg;
  cfg.decay = 1.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  cfg.threshold = 0.4;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  cfg.max_rounds = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  cfg.attack.aggregation.kind = AggregationKind::harmonic;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  ModelSpec wrong = mlp();
  wrong.input_length = 8;
  EXPECT_THROW(curriculum_train(wrong, data(4, 1), target(), cfg), ShapeError);
}
