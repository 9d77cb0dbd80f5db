// Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
// criterion fails.

#include <chrono>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "oracles.hpp"

using namespace tsconceal;

namespace {

int failures = 0;

void report(int n, bool ok, const std::string& what, const std::string& detail) {
  std::printf("%s criterion %d: %s (%s)\n", ok ? "PASS" : "FAIL", n, what.c_str(), detail.c_str());
  std::fflush(stdout);
  if (!ok) ++failures;
}

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c);
  return buf;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Classifier random_model(const ModelSpec& spec, Rng& rng) {
  ParameterMap params;
  for (const auto& [name, info] : parameter_layout(spec)) {
    params.emplace(name, oracle::random_tensor(rng, info.shape, -1.0, 1.0));
  }
  return Classifier(spec, std::move(params), 0);
}

void gradients() {
  double worst = 0.0;
  std::set<diff::Op> ops;
  for (int i = 0; i < 24; ++i) {
    const auto rg = oracle::random_graph(static_cast<std::size_t>(i), 5000 + static_cast<std::uint64_t>(i));
    ops.insert(rg.ops.begin(), rg.ops.end());
    const auto grads = diff::backpropagate(rg.graph, diff::evaluate(rg.graph, rg.bindings));
    for (const diff::NodeId leaf : rg.graph.differentiable_leaves()) {
      worst = std::max(worst, oracle::gradient_error(grads.at(leaf), oracle::central_difference(rg.graph, rg.bindings, leaf, 1e-5)));
    }
  }
  bool all_ops = true;
  for (int op = 0; op <= static_cast<int>(diff::Op::column); ++op) all_ops = all_ops && ops.count(static_cast<diff::Op>(op));
  report(1, all_ops && worst <= 1e-4, "backprop matches central differences on 24 random graphs",
         fmt("max error %.3g, every op covered: ", worst) + (all_ops ? "yes" : "no"));
}

void pgd_ball() {
  const double etas[] = {0.05, 0.1, 0.25, 0.5, 1.0};
  const double alphas[] = {0.001, 0.01, 0.1, 1, 10, 100};
  Rng rng(2024);
  double worst_excess = -1.0;
  for (int run = 0; run < 1000; ++run) {
    ModelSpec spec;
    spec.input_length = 8;
    spec.widths = {4};
    const Classifier target = random_model(spec, rng);
    const Classifier disc = random_model(spec, rng);
    const Tensor x = oracle::random_tensor(rng, {3, 8});
    std::vector<int> y(3);
    for (int& v : y) v = static_cast<int>(rng.below(2));
    AttackConfig cfg;
    cfg.kind = AttackKind::pgd;
    cfg.eta = etas[rng.below(5)];
    cfg.steps = 1 + rng.below(40);
    const bool reg = rng.below(3) == 0;
    if (reg) {
      cfg.aggregation.kind = AggregationKind::sum;
      cfg.aggregation.alpha = alphas[rng.below(6)];
    }
    const auto traj = pgd_attack(target, reg ? &disc : nullptr, x, y, cfg);
    for (const auto& s : traj.snapshots) {
      for (std::size_t i = 0; i < s.size(); ++i) worst_excess = std::max(worst_excess, std::abs(s[i] - x[i]) - cfg.eta);
    }
  }
  report(2, worst_excess <= 1e-9, "PGD snapshots stay in the eta ball over 1000 random runs",
         fmt("max |x^t - x| - eta = %.3g", worst_excess));
}

void ifgsm_closed_form() {
  ModelSpec spec;
  spec.input_length = 1;
  spec.widths = {1};
  ParameterMap p;
  p.emplace("dense0.weight", Tensor::matrix(1, 1, {1.0}));
  p.emplace("dense0.bias", Tensor::vector({10.0}));
  p.emplace("head.weight", Tensor::matrix(1, 2, {0.0, 0.75}));
  p.emplace("head.bias", Tensor::vector({0.0, 0.0}));
  const Classifier logistic(spec, p, 0);
  const double x0 = 0.5;
  bool exact = true;
  double worst = 0.0;
  for (double eps : {0.03125, 0.005, 0.01, 0.03, 0.05}) {
    AttackConfig cfg;
    cfg.eps = eps;
    cfg.steps = 50;
    const auto traj = ifgsm_attack(logistic, nullptr, Tensor::matrix(1, 1, {x0}), std::vector<int>{0}, cfg);
    double sequential = x0;
    for (std::size_t t = 0; t <= cfg.steps; ++t) {
      const double got = traj.snapshots[t][0];
      if (t > 0) sequential += eps;
      exact = exact && got == sequential;
      if (eps == 0.03125) exact = exact && got == x0 + static_cast<double>(t) * eps;
      worst = std::max(worst, std::abs(got - (x0 + static_cast<double>(t) * eps)));
    }
  }
  report(3, exact && worst <= 1e-12, "iFGSM on the one-feature logistic model gives x + T eps",
         fmt("max |x^T - (x + T eps)| = %.3g", worst) + (exact ? ", bit-exact steps" : ", steps differ"));
}

void hypercone() {
  Rng rng(77);
  double worst_dot = 0.0, worst_orth = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const std::size_t n = 2 + rng.below(30);
    std::vector<double> gt(n), gd(n);
    for (double& v : gt) v = rng.uniform(-1, 1);
    for (double& v : gd) v = rng.uniform(-1, 1);
    double td = 0, dd = 0, tt = 0;
    for (std::size_t k = 0; k < n; ++k) {
      td += gt[k] * gd[k];
      dd += gd[k] * gd[k];
      tt += gt[k] * gt[k];
    }
    if (std::abs(td) / std::sqrt(tt * dd) > 1.0 - 1e-6) continue;
    const auto out = hypercone_gradient(gt, gd, 0.0);
    double od = 0, oo = 0;
    for (std::size_t k = 0; k < n; ++k) {
      od += out[k] * gd[k];
      oo += out[k] * out[k];
    }
    worst_dot = std::max(worst_dot, std::abs(od) / std::sqrt(oo * dd));
    std::vector<double> orth = gd;
    for (std::size_t k = 0; k < n; ++k) orth[k] -= td / tt * gt[k];
    const auto same = hypercone_gradient(gt, orth, 0.0);
    for (std::size_t k = 0; k < n; ++k) worst_orth = std::max(worst_orth, std::abs(same[k] - gt[k]));
  }
  report(4, worst_dot <= 1e-5 && worst_orth <= 1e-9, "hypercone algebra on 1000 random pairs",
         fmt("max |cos(out, g_d)| = %.3g, max orthogonal-pair deviation = %.3g", worst_dot, worst_orth));
}

void simba() {
  SyntheticSpec ds;
  ds.n_per_class = 10;
  ds.length = 16;
  ds.seed = 3;
  const auto set = generate_synthetic(ds);
  ModelSpec spec;
  spec.input_length = 16;
  spec.widths = {8};
  TrainConfig tc;
  tc.epochs = 20;
  const Classifier target = fit(Classifier::build(spec, 1), set, tc);
  bool decreasing = true, budget = true, deterministic = true;
  std::size_t accepted = 0;
  for (std::uint64_t seed : {1, 2, 3}) {
    for (double eps : {0.1, 0.3}) {
      AttackConfig cfg;
      cfg.kind = AttackKind::simba;
      cfg.eps = eps;
      cfg.max_queries = 80;
      cfg.seed = seed;
      const auto a = simba_attack(target, nullptr, set.features, set.labels, cfg);
      const auto b = simba_attack(target, nullptr, set.features, set.labels, cfg);
      deterministic = deterministic && a.snapshots.size() == b.snapshots.size() && a.series_queries == b.series_queries;
      for (std::size_t t = 0; deterministic && t < a.snapshots.size(); ++t) {
        deterministic = std::memcmp(a.snapshots[t].data(), b.snapshots[t].data(), a.snapshots[t].size() * sizeof(double)) == 0;
      }
      for (std::size_t q : a.series_queries) budget = budget && q <= 2 * cfg.max_queries;
      budget = budget && a.iterations() <= cfg.max_queries;
      for (std::size_t t = 1; t < a.snapshots.size(); ++t) {
        const Tensor p0 = target.predict_proba(a.snapshots[t - 1]), p1 = target.predict_proba(a.snapshots[t]);
        for (std::size_t r = 0; r < set.size(); ++r) {
          if (std::memcmp(a.snapshots[t].row(r).data(), a.snapshots[t - 1].row(r).data(), 16 * sizeof(double)) == 0) continue;
          ++accepted;
          const auto y = static_cast<std::size_t>(set.labels[r]);
          decreasing = decreasing && p1.at(r, y) < p0.at(r, y);
        }
      }
    }
  }
  report(5, decreasing && budget && deterministic && accepted > 0, "SimBA contract",
         std::to_string(accepted) + " accepted steps, p_y strictly decreasing: " + (decreasing ? "yes" : "no") +
             ", queries <= 2 T_max: " + (budget ? "yes" : "no") + ", byte-identical reruns: " +
             (deterministic ? "yes" : "no"));
}

void metric_oracles() {
  Rng rng(99);
  bool f1_exact = true;
  for (int i = 0; i < 1000; ++i) {
    const std::size_t n = 1 + rng.below(50), k = 2 + rng.below(4);
    std::vector<int> yt(n), yp(n);
    for (std::size_t j = 0; j < n; ++j) {
      yt[j] = static_cast<int>(rng.below(k));
      yp[j] = static_cast<int>(rng.below(k));
    }
    f1_exact = f1_exact && f1(yt, yp, Averaging::macro) == oracle::f1_brute(yt, yp, true) &&
               f1(yt, yp, Averaging::binary_pos1) == oracle::f1_brute(yt, yp, false);
  }
  bool identities = successfulness(1, 1) == 1;
  for (int i = 0; i < 1000; ++i) {
    const double a = rng.uniform(), b = rng.uniform();
    identities = identities && std::abs(successfulness(a, a) - a) <= 1e-15 && successfulness(0, a) == 0 &&
                 successfulness(a, b) == successfulness(b, a);
  }
  const double s = successfulness(0.861, 0.239);
  report(6, f1_exact && identities && std::abs(s - 0.3742) <= 1e-4, "metric oracles",
         std::string("f1 exact on 1000 instances: ") + (f1_exact ? "yes" : "no") +
             ", S identities: " + (identities ? "yes" : "no") + fmt(", S(0.861, 0.239) = %.6f", s));
}

const CombinationResult& best_of(const RunRecord& rec, AggregationKind kind) {
  const CombinationResult* best = nullptr;
  for (const auto& c : rec.combinations) {
    if (c.point.attack.aggregation.kind != kind) continue;
    if (!best || c.report.selected().successfulness > best->report.selected().successfulness) best = &c;
  }
  if (!best) throw InvalidArgument("grid has no " + to_string(kind) + " combination");
  return *best;
}

void end_to_end() {
  namespace fs = std::filesystem;
  const std::string cfg_path = std::string(TSCONCEAL_CONFIG_DIR) + "/acceptance.cfg";
  const std::string root = "acceptance-out";
  std::vector<RunRecord> runs;
  auto run = [&](std::uint64_t seed, const std::string& name) {
    ConfigFile file = ConfigFile::load(cfg_path);
    file.set("", "seed", std::to_string(seed));
    PipelineOptions opts;
    opts.output_dir = root + "/" + name;
    fs::remove_all(*opts.output_dir);
    RunRecord rec = grid_search(ExperimentConfig::from(file), opts);
    std::printf("  seed %llu: target test accuracy %.3f, %.0f s\n", static_cast<unsigned long long>(seed),
                rec.target_test_accuracy, rec.wall_clock_seconds);
    std::fflush(stdout);
    return rec;
  };
  for (std::uint64_t seed : {1, 2, 3}) runs.push_back(run(seed, "seed" + std::to_string(seed)));

  {
    const CurriculumResult& c = runs[0].curricula.at(AttackKind::ifgsm);
    bool geometric = true;
    double drift = 0.0;
    for (std::size_t k = 0; k < c.schedule.size(); ++k) {
      if (k > 0) geometric = geometric && c.schedule[k] == c.schedule[k - 1] * 0.8;
      drift = std::max(drift, std::abs(c.schedule[k] - 0.03 * std::pow(0.8, static_cast<double>(k))));
    }
    std::string sched;
    for (std::size_t k = 0; k < c.schedule.size(); ++k) {
      char buf[64];
      std::snprintf(buf, sizeof buf, "%s%.4g:%.3f", k ? " " : "", c.schedule[k], c.accuracies[k]);
      sched += buf;
    }
    const bool ok = c.rounds_run() >= 3 && geometric && drift <= 1e-15 && c.final_accuracy() >= 0.85;
    report(7, ok, "curriculum runs >= 3 geometric rounds and ends >= 0.85 held-out accuracy",
           std::to_string(c.rounds_run()) + " rounds [" + sched + "], last trained eps " +
               fmt("%.4g, accuracy %.3f", c.last_trained_eps(), c.final_accuracy()));
  }

  int wins8 = 0, wins9 = 0;
  std::string d8, d9;
  for (std::size_t s = 0; s < runs.size(); ++s) {
    const auto& van = best_of(runs[s], AggregationKind::none).report.selected();
    const auto& sum = best_of(runs[s], AggregationKind::sum).report.selected();
    const auto& har = best_of(runs[s], AggregationKind::harmonic).report.selected();
    const bool ok8 = sum.concealability - van.concealability >= 0.2 && sum.efficiency >= 0.6 &&
                     sum.successfulness > van.successfulness;
    const bool ok9 = har.successfulness > van.successfulness;
    wins8 += ok8;
    wins9 += ok9;
    const std::string head = (s ? "; seed " : "seed ") + std::to_string(s + 1) + ": ";
    d8 += head + fmt("sum E %.3f C %.3f S %.3f", sum.efficiency, sum.concealability, sum.successfulness) +
          fmt(" vs vanilla E %.3f C %.3f S %.3f", van.efficiency, van.concealability, van.successfulness);
    d9 += head + fmt("harmonic S %.3f vs vanilla S %.3f", har.successfulness, van.successfulness);
  }
  report(8, wins8 >= 2, "sum-regularised iFGSM beats vanilla in >= 2 of 3 seeds",
         std::to_string(wins8) + "/3; " + d8);
  report(9, wins9 >= 2, "harmonic-regularised iFGSM beats vanilla on S in >= 2 of 3 seeds",
         std::to_string(wins9) + "/3; " + d9);

  run(1, "seed1-rerun");
  const std::string a = read_file(root + "/seed1/results.csv"), b = read_file(root + "/seed1-rerun/results.csv");
  const bool same_summary = read_file(root + "/seed1/summary.json") == read_file(root + "/seed1-rerun/summary.json");
  report(10, !a.empty() && a == b, "rerunning the acceptance grid gives byte-identical results.csv",
         std::to_string(a.size()) + " bytes, summary.json identical: " + (same_summary ? "yes" : "no"));
}

}  // namespace

int main() {
  const auto t0 = std::chrono::steady_clock::now();
  try {
    gradients();
    pgd_ball();
    ifgsm_closed_form();
    hypercone();
    simba();
    metric_oracles();
    end_to_end();
  } catch (const std::exception& e) {
    std::printf("FAIL acceptance aborted: %s\n", e.what());
    return 1;
  }
  std::printf("%d criteria failed, %.0f s\n", failures,
              std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  return failures == 0 ? 0 : 1;
}
