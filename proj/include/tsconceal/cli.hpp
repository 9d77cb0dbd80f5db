#pragma once

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "tsconceal/runner.hpp"

namespace tsconceal {

namespace detail {

struct CliPaths {
  ExperimentConfig cfg;
  std::string dir;
};

inline CliPaths resolve(const std::string& config_path, const std::optional<std::uint64_t>& seed,
                        const std::optional<std::string>& out) {
  ConfigFile file = ConfigFile::load(config_path);
  if (seed) file.set("", "seed", std::to_string(*seed));
  CliPaths p{ExperimentConfig::from(file), ""};
  p.dir = resolve_output_dir(p.cfg, out);
  std::filesystem::create_directories(p.dir);
  return p;
}

inline Classifier load_target(const CliPaths& p, const ExperimentData& data) {
  const std::string path = p.dir + "/target.json";
  if (!std::filesystem::exists(path)) throw IoError("no trained target at " + path + " (run train-target first)");
  return load_parameters(target_spec_for(p.cfg, data.train), path);
}

inline Classifier load_disc(const CliPaths& p, const ModelSpec& target, AttackKind kind) {
  const std::string path = p.dir + "/disc_" + to_string(kind) + ".json";
  if (!std::filesystem::exists(path)) throw IoError("no discriminator at " + path + " (run train-disc first)");
  return load_parameters(disc_spec_for(p.cfg, target), path);
}

}  // namespace detail

/// Entry point of the tsconceal tool. Returns 0 on success, 1 on errors and
/// 2 on usage problems.
inline int run_cli(int argc, char** argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Concealed adversarial attacks on time-series classifiers"};
  app.require_subcommand(1);
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
  bool quiet = false;
  auto common = [&](CLI::App* sub, bool need_config) {
    auto* opt = sub->add_option("--config", config_path, "experiment config file");
    if (need_config) opt->required();
    sub->add_option("--seed", seed, "override the config seed");
    sub->add_option("--out", out_dir, "output directory (overrides TSCONCEAL_OUT and [output] dir)");
    sub->add_flag("-q,--quiet", quiet, "no progress notes");
  };
  auto* train_target_cmd = app.add_subcommand("train-target", "fit the target classifier");
  auto* train_disc_cmd = app.add_subcommand("train-disc", "curriculum-train a discriminator per attack kind");
  auto* attack_cmd = app.add_subcommand("attack", "run the [attack] config on the test split");
  auto* evaluate_cmd = app.add_subcommand("evaluate", "per-iteration E, C, S of the [attack] config");
  auto* grid_cmd = app.add_subcommand("grid", "full pipeline over every grid combination");
  auto* plot_cmd = app.add_subcommand("plot", "SVG overlays of original and attacked series");
  for (auto* s : {train_target_cmd, train_disc_cmd, attack_cmd, evaluate_cmd, grid_cmd}) common(s, true);
  common(plot_cmd, false);
  std::string clean_path, attacked_path;
  std::size_t truncate = 0, rows = 2;
  plot_cmd->add_option("--clean", clean_path, "clean series (UCR TSV)");
  plot_cmd->add_option("--attacked", attacked_path, "attacked series (UCR TSV)");
  plot_cmd->add_option("--truncate", truncate, "draw only the first N points");
  plot_cmd->add_option("--rows", rows, "series per file to plot");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n" << app.help();
    return 2;
  }

  auto log = [&](const std::string& s) {
    if (!quiet) err << "[tsconceal] " << s << "\n";
  };
  try {
    if (plot_cmd->parsed()) {
      namespace fs = std::filesystem;
      std::vector<std::pair<std::string, std::string>> pairs;
      std::string dir;
      if (!clean_path.empty() || !attacked_path.empty()) {
        if (clean_path.empty() || attacked_path.empty()) throw ConfigError("plot needs both --clean and --attacked");
        pairs.emplace_back(clean_path, attacked_path);
        dir = out_dir ? *out_dir : fs::path(attacked_path).parent_path().string();
        if (dir.empty()) dir = ".";
      } else {
        if (config_path.empty()) throw ConfigError("plot needs --config or --clean/--attacked");
        const auto p = detail::resolve(config_path, seed, out_dir);
        dir = p.dir;
        const std::string series = p.dir + "/series";
        if (!fs::exists(series + "/clean_test.tsv")) throw IoError("no saved series under " + series + " (run grid first)");
        std::vector<std::string> files;
        for (const auto& e : fs::directory_iterator(series)) {
          if (e.path().filename() != "clean_test.tsv" && e.path().extension() == ".tsv") files.push_back(e.path().string());
        }
        std::sort(files.begin(), files.end());
        for (const auto& f : files) pairs.emplace_back(series + "/clean_test.tsv", f);
      }
      fs::create_directories(dir + "/plots");
      std::size_t written = 0;
      for (const auto& [c, a] : pairs) {
        const auto clean = load_ucr_tsv(c);
        const auto adv = load_ucr_tsv(a);
        if (clean.features.shape() != adv.features.shape()) throw ShapeError(a + ": shape differs from " + c);
        const std::string stem = fs::path(a).stem().string();
        for (std::size_t k = 0; k < std::min(rows, clean.size()); ++k) {
          std::optional<std::size_t> t;
          if (truncate > 0) t = truncate;
          const std::string path = dir + "/plots/" + stem + "_" + std::to_string(k) + ".svg";
          emit_plot(clean.features.row(k), adv.features.row(k), path, t, stem + " series " + std::to_string(k));
          ++written;
        }
      }
      out << written << " plots in " << dir << "/plots\n";
      return 0;
    }

    const auto p = detail::resolve(config_path, seed, out_dir);
    if (grid_cmd->parsed()) {
      PipelineOptions opts;
      opts.output_dir = p.dir;
      opts.log = log;
      const RunRecord rec = grid_search(p.cfg, opts);
      log("finished in " + std::to_string(rec.wall_clock_seconds) + " s");
      for (std::size_t i : rec.ranking()) {
        const auto& r = rec.combinations[i];
        const auto& best = r.report.selected();
        char buf[160];
        std::snprintf(buf, sizeof buf, "%3zu %-12s iter %4zu  E %.3f  C %.3f  S %.3f\n", r.point.index,
                      r.point.label.c_str(), best.iteration, best.efficiency, best.concealability,
                      best.successfulness);
        out << buf;
      }
      return 0;
    }

    const ExperimentData data = load_data(p.cfg);
    if (train_target_cmd->parsed()) {
      log("training target");
      const Classifier target = train_target(p.cfg, data.train);
      save_parameters(target, p.dir + "/target.json");
      out << "test accuracy " << detail::format_real(accuracy(data.test.labels, target.predict(data.test.features)))
          << "\n";
      return 0;
    }

    const Classifier target = detail::load_target(p, data);
    if (train_disc_cmd->parsed()) {
      const ModelSpec dspec = disc_spec_for(p.cfg, target.spec());
      nlohmann::json j = nlohmann::json::object();
      for (const GridPoint& g : p.cfg.grid) {
        const std::string kind = to_string(g.attack.kind);
        if (j.contains(kind)) continue;
        log("curriculum for " + kind);
        const CurriculumResult c = curriculum_train(dspec, data.train, target, curriculum_for(p.cfg, g.attack));
        save_parameters(c.disc, p.dir + "/disc_" + kind + ".json");
        j[kind] = detail::curriculum_json(c);
        out << kind << ": " << c.rounds_run() << " rounds, last eps "
            << detail::format_real(c.last_trained_eps()) << ", accuracy "
            << detail::format_real(c.final_accuracy()) << (c.warning ? " (warning: round 0 under threshold)" : "")
            << "\n";
      }
      detail::write_text(p.dir + "/curriculum.json", j.dump(2) + "\n");
      return 0;
    }

    AttackConfig attack = p.cfg.attack;
    attack.seed = StageSeeds::combination(p.cfg.seed, 0);
    std::optional<Classifier> disc;
    if (attack.aggregation.uses_discriminator() || evaluate_cmd->parsed()) {
      disc = detail::load_disc(p, target.spec(), attack.kind);
    }
    log("running " + to_string(attack.kind));
    const AttackTrajectory traj =
        run_attack(target, disc ? &*disc : nullptr, data.test.features, data.test.labels, attack);
    if (attack_cmd->parsed()) {
      const std::string path = p.dir + "/attacked_" + to_string(attack.kind) + ".tsv";
      save_ucr_tsv(data.test.with_features(traj.final()), path);
      out << "efficiency " << detail::format_real(efficiency(target, traj.final(), data.test.labels)) << " -> "
          << path << "\n";
      return 0;
    }
    CombinationResult r;
    r.point = GridPoint{0, "attack", attack};
    r.report = evaluate_trajectory(target, *disc, traj, data.test.labels, p.cfg.floors);
    detail::write_text(p.dir + "/evaluate.csv", detail::csv_header() + detail::csv_rows(r));
    const auto& best = r.report.selected();
    out << "iteration " << best.iteration << " (" << to_string(r.report.selection.reason) << ") E "
        << detail::format_real(best.efficiency) << " C " << detail::format_real(best.concealability) << " S "
        << detail::format_real(best.successfulness) << "\n";
    return 0;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace tsconceal
