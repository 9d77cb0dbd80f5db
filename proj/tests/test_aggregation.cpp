#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "oracles.hpp"

using namespace tsconceal;

namespace {

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

std::vector<double> random_vector(Rng& rng, std::size_t n) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(-1.0, 1.0);
  return v;
}

}  // namespace

TEST(Sum, Examples) {
  EXPECT_EQ(sum_objective(1.0, 2.0, 0.5), 2.0);
  EXPECT_EQ(sum_objective(0.7, 123.0, 0.0), 0.7);
  EXPECT_THROW(sum_objective(std::nan(""), 1.0, 1.0), InvalidArgument);
}

TEST(Harmonic, Examples) {
  EXPECT_EQ(harmonic_objective(0.0, 5.0, 1e-8), 0.0);
  EXPECT_NEAR(harmonic_objective(1.0, 1.0, 1e-12), 1.0, 1e-12);
  EXPECT_EQ(harmonic_objective(1.0, 3.0, 0.0), 1.5);
  EXPECT_EQ(harmonic_objective(0.0, 0.0, 0.0), 0.0);
  EXPECT_THROW(harmonic_objective(-1.0, 1.0, 0.1), InvalidArgument);
}

TEST(Harmonic, SymmetricAndBelowTheSmallerTwice) {
  Rng rng(2);
  for (int i = 0; i < 200; ++i) {
    const double a = rng.uniform(0, 5), d = rng.uniform(0, 5), gamma = rng.uniform(0, 0.1);
    EXPECT_EQ(harmonic_objective(a, d, gamma), harmonic_objective(d, a, gamma));
    EXPECT_LE(harmonic_objective(a, d, gamma), 2.0 * std::min(a, d) + 1e-15);
  }
}

TEST(NegLogDisc, ClampsScores) {
  EXPECT_EQ(neg_log_disc(0.0), -std::log(1e-7));
  EXPECT_EQ(neg_log_disc(1.0), -std::log(1.0 - 1e-7));
  EXPECT_DOUBLE_EQ(neg_log_disc(0.5), std::log(2.0));
}

TEST(Hypercone, OrthogonalPairAtZeroOffsetReturnsTarget) {
  const std::vector<double> gt{1.0, 2.0, 0.0}, gd{-2.0, 1.0, 0.5};
  const auto out = hypercone_gradient(gt, gd, 0.0);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(out[i], gt[i], 1e-12);
}

TEST(Hypercone, ZeroOffsetIsOrthogonalToDiscGradient) {
  Rng rng(3);
  for (int i = 0; i < 200; ++i) {
    const auto gt = random_vector(rng, 6), gd = random_vector(rng, 6);
    const auto out = hypercone_gradient(gt, gd, 0.0);
    EXPECT_LE(std::abs(dot(out, gd)) / (norm(out) * norm(gd)), 1e-9);
  }
}

TEST(Hypercone, OffsetSetsAngleToDiscGradient) {
  // With offset D the output leans D radians away from the plane orthogonal
  // to g_d, towards g_t's side.
  Rng rng(4);
  for (int i = 0; i < 100; ++i) {
    const auto gt = random_vector(rng, 5), gd = random_vector(rng, 5);
    const double delta = rng.uniform(-1.2, 1.2);
    const auto out = hypercone_gradient(gt, gd, delta);
    const double cos_out = dot(out, gd) / (norm(out) * norm(gd));
    EXPECT_NEAR(std::abs(cos_out), std::sin(std::abs(delta)), 1e-9);
  }
}

TEST(Hypercone, ScalesWithTargetGradient) {
  Rng rng(5);
  const auto gt = random_vector(rng, 4), gd = random_vector(rng, 4);
  auto gt2 = gt;
  for (double& v : gt2) v *= 3.0;
  const auto a = hypercone_gradient(gt, gd, 0.3), b = hypercone_gradient(gt2, gd, 0.3);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(b[i], 3.0 * a[i], 1e-12);
  auto gd2 = gd;
  for (double& v : gd2) v *= 7.0;
  const auto c = hypercone_gradient(gt, gd2, 0.3);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(c[i], a[i], 1e-12);
}

TEST(Hypercone, DegenerateInputs) {
  const std::vector<double> zero{0.0, 0.0}, v{1.0, 2.0}, w{-2.0, -4.0};
  EXPECT_THROW(hypercone_gradient(zero, v, 0.0), DegenerateGradient);
  EXPECT_THROW(hypercone_gradient(v, zero, 0.0), DegenerateGradient);
  EXPECT_THROW(hypercone_gradient(v, std::vector<double>{1.0}, 0.0), ShapeError);
  EXPECT_EQ(hypercone_gradient(v, w, 0.2), v);
  EXPECT_EQ(hypercone_gradient(v, v, 0.2), v);
}

TEST(AggregationSpec, Validation) {
  AggregationSpec s;
  s.alpha = -1.0;
  EXPECT_THROW(s.validate(), ConfigError);
  s = {};
  s.gamma = 0.0;
  EXPECT_THROW(s.validate(), ConfigError);
  s = {};
  s.kind = AggregationKind::hypercone;
  s.delta = std::numbers::pi / 2;
  EXPECT_THROW(s.validate(), ConfigError);
  s.delta = 0.5;
  EXPECT_NO_THROW(s.validate());
  EXPECT_EQ(parse_aggregation_kind("vanilla"), AggregationKind::none);
  EXPECT_THROW(parse_aggregation_kind("product"), ConfigError);
}

TEST(AppendAggregation, MatchesScalarFunctions) {
  Rng rng(6);
  const Tensor a = oracle::random_tensor(rng, {5}, 0.0, 3.0), d = oracle::random_tensor(rng, {5}, 0.0, 3.0);
  for (AggregationKind kind : {AggregationKind::none, AggregationKind::sum, AggregationKind::harmonic}) {
    diff::Graph g;
    const auto an = g.leaf("a"), dn = g.leaf("d");
    AggregationSpec spec;
    spec.kind = kind;
    spec.alpha = 0.7;
    spec.gamma = 0.01;
    g.set_output(append_aggregation(g, spec, an, dn));
    const Tensor out = diff::evaluate(g, {{an, a}, {dn, d}}).output();
    for (std::size_t i = 0; i < 5; ++i) {
      const double expect = kind == AggregationKind::none ? a[i]
                            : kind == AggregationKind::sum ? sum_objective(a[i], d[i], 0.7)
                                                           : harmonic_objective(a[i], d[i], 0.01);
      EXPECT_NEAR(out[i], expect, 1e-14);
    }
  }
  diff::Graph g;
  AggregationSpec hc;
  hc.kind = AggregationKind::hypercone;
  EXPECT_THROW(append_aggregation(g, hc, g.leaf("a"), g.leaf("d")), ConfigError);
}
