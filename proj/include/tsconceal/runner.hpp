#pragma once

// End-to-end experiments: data -> target -> curriculum discriminator ->
// attacks on the test split -> per-iteration metrics -> CSV / JSON / SVG.

#include <algorithm>
#include <chrono>
#include <condition_variable>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <numeric>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "tsconceal/attacks.hpp"
#include "tsconceal/config.hpp"
#include "tsconceal/data.hpp"
#include "tsconceal/discriminator.hpp"
#include "tsconceal/metrics.hpp"
#include "tsconceal/models.hpp"
#include "tsconceal/plot.hpp"

namespace tsconceal {

/// Raised by run_pipeline / grid_search; names the stage that failed.
class PipelineError : public Error {
 public:
  PipelineError(std::string stage, const std::string& what)
      : Error("stage '" + stage + "' failed: " + what), stage_(std::move(stage)) {}
  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

struct DataConfig {
  std::string source = "synthetic";  // synthetic | ucr
  SyntheticKind kind = SyntheticKind::two_sine;
  std::size_t n_per_class = 100;
  std::size_t test_per_class = 50;
  std::size_t length = 64;
  double noise_std = 0.3;
  std::string train_path, test_path;
  bool normalize = true;
};

struct DiscriminatorConfig {
  bool half_width = false;
  double dropout = 0.0;
  TrainConfig train;
  TrainConfig finetune;
  double eps_init = 0.03;
  double decay = 0.8;
  double threshold = 0.9;
  std::size_t max_rounds = 8;
  double holdout = 0.2;
  /// Attack iterations for the generated data; 0 halves the evaluation value.
  std::size_t attack_steps = 0;
};

struct OutputConfig {
  std::string dir = "tsconceal-out";
  bool save_series = true;
  bool plots = false;
  std::size_t plot_series = 2;
  std::size_t plot_truncate = 0;
  std::size_t threads = 0;  // 0 = hardware concurrency
};

struct GridPoint {
  std::size_t index = 0;
  std::string label;
  AttackConfig attack;
};

struct ExperimentConfig {
  ConfigFile source;
  std::uint64_t seed = 0;
  DataConfig data;
  ModelSpec target_spec;
  TrainConfig target_train;
  DiscriminatorConfig disc;
  AttackConfig attack;
  SelectionFloors floors;
  OutputConfig output;
  std::vector<GridPoint> grid;

  std::string hash() const { return source.hash(); }
  static ExperimentConfig from(const ConfigFile& file);
  static ExperimentConfig load(const std::string& path) { return from(ConfigFile::load(path)); }
};

namespace detail {

inline SyntheticKind parse_synthetic_kind(const std::string& s) {
  if (s == "two_sine") return SyntheticKind::two_sine;
  if (s == "warped_bump") return SyntheticKind::warped_bump;
  throw ConfigError("unknown synthetic kind '" + s + "' (expected two_sine or warped_bump)");
}

inline const std::vector<std::string>& attack_keys() {
  static const std::vector<std::string> keys{"kind",   "eps",        "steps",       "eta",
                                             "max_queries", "sgm_l2", "sgm_smooth", "aggregation",
                                             "alpha",  "gamma",      "delta"};
  return keys;
}

inline void apply_attack_key(AttackConfig& a, const std::string& key, const std::string& value,
                             const SectionReader& where) {
  if (key == "kind") a.kind = parse_attack_kind(value);
  else if (key == "eps") a.eps = where.to_real(value, key);
  else if (key == "steps") a.steps = where.to_count(value, key);
  else if (key == "eta") a.eta = where.to_real(value, key);
  else if (key == "max_queries") a.max_queries = where.to_count(value, key);
  else if (key == "sgm_l2") a.sgm_l2 = where.to_real(value, key);
  else if (key == "sgm_smooth") a.sgm_smooth = where.to_real(value, key);
  else if (key == "aggregation") a.aggregation.kind = parse_aggregation_kind(value);
  else if (key == "alpha") a.aggregation.alpha = where.to_real(value, key);
  else if (key == "gamma") a.aggregation.gamma = where.to_real(value, key);
  else if (key == "delta") a.aggregation.delta = where.to_real(value, key);
  else throw ConfigError("unknown key " + where.where(key));
}

inline TrainConfig read_train(SectionReader& r, const std::string& prefix, TrainConfig base) {
  base.epochs = r.count(prefix + "epochs", base.epochs);
  base.batch_size = r.count(prefix + "batch_size", base.batch_size);
  base.learning_rate = r.real(prefix + "lr", base.learning_rate);
  base.weight_decay = r.real(prefix + "weight_decay", base.weight_decay);
  base.patience = r.count(prefix + "patience", base.patience);
  base.validate();
  return base;
}

}  // namespace detail

inline ExperimentConfig ExperimentConfig::from(const ConfigFile& file) {
  ExperimentConfig cfg;
  cfg.source = file;
  for (const auto& name : file.sections()) {
    static const std::vector<std::string> known{"", "data", "target_model", "discriminator", "attack", "metrics", "output"};
    if (std::find(known.begin(), known.end(), name) == known.end() && name != "grid" && name.rfind("grid.", 0) != 0) {
      throw ConfigError("unknown section [" + name + "]");
    }
  }
  {
    SectionReader r(file, "");
    cfg.seed = r.seed("seed", 0);
    r.finish();
  }
  {
    SectionReader r(file, "data");
    DataConfig& d = cfg.data;
    d.source = r.str("source", d.source);
    if (d.source != "synthetic" && d.source != "ucr") {
      throw ConfigError("[data] source must be synthetic or ucr, got '" + d.source + "'");
    }
    d.kind = detail::parse_synthetic_kind(r.str("kind", "two_sine"));
    d.n_per_class = r.count("n_per_class", d.n_per_class);
    d.test_per_class = r.count("test_per_class", d.test_per_class);
    d.length = r.count("length", d.length);
    d.noise_std = r.real("noise", d.noise_std);
    d.train_path = r.str("train", "");
    d.test_path = r.str("test", "");
    d.normalize = r.flag("normalize", d.normalize);
    if (d.source == "ucr" && (d.train_path.empty() || d.test_path.empty())) {
      throw ConfigError("[data] source = ucr needs train and test paths");
    }
    r.finish();
  }
  {
    SectionReader r(file, "target_model");
    ModelSpec& s = cfg.target_spec;
    s.family = parse_model_family(r.str("family", "rescnn"));
    if (s.family == ModelFamily::rescnn) s = ModelSpec::mini_rescnn(cfg.data.length);
    s.widths = r.counts("widths", s.widths);
    s.kernel_sizes = r.counts("kernels", s.kernel_sizes);
    s.dropout = r.real("dropout", s.dropout);
    cfg.target_train = detail::read_train(r, "", cfg.target_train);
    r.finish();
  }
  {
    SectionReader r(file, "discriminator");
    DiscriminatorConfig& d = cfg.disc;
    d.half_width = r.flag("half_width", d.half_width);
    d.dropout = r.real("dropout", d.dropout);
    d.train = detail::read_train(r, "", d.train);
    TrainConfig ft = d.train;
    ft.epochs = std::max<std::size_t>(1, d.train.epochs / 2);
    d.finetune = detail::read_train(r, "finetune_", ft);
    d.eps_init = r.real("eps_init", d.eps_init);
    d.decay = r.real("decay", d.decay);
    d.threshold = r.real("threshold", d.threshold);
    d.max_rounds = r.count("max_rounds", d.max_rounds);
    d.holdout = r.real("holdout", d.holdout);
    d.attack_steps = r.count("attack_steps", d.attack_steps);
    r.finish();
  }
  {
    SectionReader r(file, "attack");
    for (const auto& key : detail::attack_keys()) {
      if (r.has(key)) detail::apply_attack_key(cfg.attack, key, r.str(key, ""), r);
    }
    r.finish();
    cfg.attack.validate();
  }
  {
    SectionReader r(file, "metrics");
    SelectionFloors& f = cfg.floors;
    if (!r.flag("floors", true)) f = SelectionFloors::disabled();
    f.ifgsm = r.count("floor_ifgsm", f.ifgsm);
    f.pgd = r.count("floor_pgd", f.pgd);
    f.simba = r.count("floor_simba", f.simba);
    f.sgm = r.count("floor_sgm", f.sgm);
    f.efficiency_escape = r.real("efficiency_escape", f.efficiency_escape);
    r.finish();
  }
  {
    SectionReader r(file, "output");
    OutputConfig& o = cfg.output;
    o.dir = r.str("dir", o.dir);
    o.save_series = r.flag("save_series", o.save_series);
    o.plots = r.flag("plots", o.plots);
    o.plot_series = r.count("plot_series", o.plot_series);
    o.plot_truncate = r.count("plot_truncate", o.plot_truncate);
    o.threads = r.count("threads", o.threads);
    r.finish();
  }

  // Each [grid] / [grid.NAME] section is a Cartesian product over its list
  // values applied on top of [attack]; the run covers their concatenation.
  for (const auto& name : file.sections()) {
    if (name != "grid" && name.rfind("grid.", 0) != 0) continue;
    const std::string label = name == "grid" ? "grid" : name.substr(5);
    SectionReader r(file, name);
    const auto& sec = file.section(name);
    std::vector<std::pair<std::string, std::vector<std::string>>> axes;
    for (const auto& key : detail::attack_keys()) {
      if (!r.has(key)) continue;
      auto values = ConfigFile::items(r.str(key, ""));
      if (values.empty()) throw ConfigError("empty grid list " + r.where(key));
      axes.emplace_back(key, std::move(values));
    }
    if (sec.empty()) throw ConfigError("grid section [" + name + "] is empty");
    r.finish();
    std::vector<std::size_t> pos(axes.size(), 0);
    while (true) {
      GridPoint p;
      p.label = label;
      p.attack = cfg.attack;
      for (std::size_t a = 0; a < axes.size(); ++a) {
        detail::apply_attack_key(p.attack, axes[a].first, axes[a].second[pos[a]], r);
      }
      try {
        p.attack.validate();
      } catch (const ConfigError& e) {
        throw ConfigError("grid [" + name + "]: " + e.what());
      }
      p.index = cfg.grid.size();
      cfg.grid.push_back(p);
      std::size_t a = axes.size();
      while (a > 0 && ++pos[a - 1] == axes[a - 1].second.size()) pos[--a] = 0;
      if (a == 0) break;
    }
  }
  if (cfg.grid.empty()) cfg.grid.push_back(GridPoint{0, "attack", cfg.attack});
  return cfg;
}

/// Derived seeds for the pipeline stages.
struct StageSeeds {
  static std::uint64_t train_data(std::uint64_t s) { return mix_seed(s, 0x1001); }
  static std::uint64_t test_data(std::uint64_t s) { return mix_seed(s, 0x1002); }
  static std::uint64_t target_init(std::uint64_t s) { return mix_seed(s, 0x2001); }
  static std::uint64_t target_fit(std::uint64_t s) { return mix_seed(s, 0x2002); }
  static std::uint64_t curriculum(std::uint64_t s, AttackKind k) {
    return mix_seed(s, 0x3000 + static_cast<std::uint64_t>(k));
  }
  static std::uint64_t combination(std::uint64_t s, std::size_t index) { return mix_seed(s, index); }
};

struct ExperimentData {
  LabeledSeriesSet train, test;
};

inline ExperimentData load_data(const ExperimentConfig& cfg) {
  ExperimentData d;
  if (cfg.data.source == "synthetic") {
    SyntheticSpec s;
    s.kind = cfg.data.kind;
    s.length = cfg.data.length;
    s.noise_std = cfg.data.noise_std;
    s.n_per_class = cfg.data.n_per_class;
    s.seed = StageSeeds::train_data(cfg.seed);
    d.train = generate_synthetic(s);
    s.n_per_class = cfg.data.test_per_class;
    s.seed = StageSeeds::test_data(cfg.seed);
    d.test = generate_synthetic(s);
  } else {
    d.train = load_ucr_tsv(cfg.data.train_path);
    d.test = load_ucr_tsv(cfg.data.test_path);
    if (d.train.length() != d.test.length()) throw ShapeError("train and test series lengths differ");
    // Express test labels in the train set's class indices.
    std::vector<int> remap(d.test.label_names.size());
    for (std::size_t i = 0; i < remap.size(); ++i) {
      auto it = std::find(d.train.label_names.begin(), d.train.label_names.end(), d.test.label_names[i]);
      if (it == d.train.label_names.end()) {
        throw ParseError(cfg.data.test_path + ": label '" + d.test.label_names[i] + "' absent from the train set");
      }
      remap[i] = static_cast<int>(it - d.train.label_names.begin());
    }
    for (int& l : d.test.labels) l = remap[static_cast<std::size_t>(l)];
    d.test.label_names = d.train.label_names;
  }
  if (cfg.data.normalize) {
    auto n = zscore_normalize(d.train, {d.test});
    d.train = std::move(n.train);
    d.test = std::move(n.others[0]);
  }
  return d;
}

inline ModelSpec target_spec_for(const ExperimentConfig& cfg, const LabeledSeriesSet& train) {
  ModelSpec s = cfg.target_spec;
  s.input_length = train.length();
  s.n_classes = std::max<std::size_t>(2, train.n_classes());
  s.validate();
  return s;
}

/// Same family as the target, optionally at half width, two classes.
inline ModelSpec disc_spec_for(const ExperimentConfig& cfg, const ModelSpec& target) {
  ModelSpec s = target;
  s.n_classes = 2;
  s.dropout = cfg.disc.dropout;
  if (cfg.disc.half_width) {
    for (auto& w : s.widths) w = std::max<std::size_t>(1, w / 2);
  }
  s.validate();
  return s;
}

inline Classifier train_target(const ExperimentConfig& cfg, const LabeledSeriesSet& train) {
  const ModelSpec spec = target_spec_for(cfg, train);
  TrainConfig tc = cfg.target_train;
  tc.seed = StageSeeds::target_fit(cfg.seed);
  return fit(Classifier::build(spec, StageSeeds::target_init(cfg.seed)), train, tc);
}

/// Curriculum settings for discriminators guarding attacks like `like`.
inline CurriculumConfig curriculum_for(const ExperimentConfig& cfg, const AttackConfig& like) {
  CurriculumConfig c;
  c.attack = like;
  c.attack.aggregation = AggregationSpec{};
  const auto reduce = [&](std::size_t t) {
    return cfg.disc.attack_steps > 0 ? cfg.disc.attack_steps : std::max<std::size_t>(1, t / 2);
  };
  if (like.kind == AttackKind::simba) c.attack.max_queries = reduce(like.max_queries);
  else c.attack.steps = reduce(like.steps);
  c.eps_init = cfg.disc.eps_init;
  c.decay = cfg.disc.decay;
  c.threshold = cfg.disc.threshold;
  c.max_rounds = cfg.disc.max_rounds;
  c.train = cfg.disc.train;
  c.finetune = cfg.disc.finetune;
  c.holdout_fraction = cfg.disc.holdout;
  c.seed = StageSeeds::curriculum(cfg.seed, like.kind);
  return c;
}

struct CombinationResult {
  GridPoint point;
  MetricsReport report;
  Tensor selected_series;  // attacked test set at the selected iteration
};

struct RunRecord {
  std::string config_hash;
  std::uint64_t seed = 0;
  bool complete = false;
  std::string failed_stage;
  std::string error;
  double target_test_accuracy = 0.0;
  std::map<AttackKind, CurriculumResult> curricula;
  std::vector<CombinationResult> combinations;  // grid order
  double wall_clock_seconds = 0.0;               // not persisted
  std::vector<std::string> artifacts;

  /// Combination indices ordered by selected S, best first.
  std::vector<std::size_t> ranking() const {
    std::vector<std::size_t> idx(combinations.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
      return combinations[a].report.selected().successfulness > combinations[b].report.selected().successfulness;
    });
    return idx;
  }
};

namespace detail {

inline std::string real_text(double v) { return format_real(v); }

inline std::string csv_header() {
  return "combination,label,attack,aggregation,eps,eta,steps,max_queries,alpha,gamma,delta,iteration,E,C,S\n";
}

inline std::string csv_rows(const CombinationResult& r) {
  const AttackConfig& a = r.point.attack;
  std::string prefix = std::to_string(r.point.index) + "," + r.point.label + "," + to_string(a.kind) + "," +
                       to_string(a.aggregation.kind) + "," + real_text(a.eps) + "," + real_text(a.eta) + "," +
                       std::to_string(a.steps) + "," + std::to_string(a.max_queries) + "," +
                       real_text(a.aggregation.alpha) + "," + real_text(a.aggregation.gamma) + "," +
                       real_text(a.aggregation.delta) + ",";
  std::string out;
  for (const MetricsRow& row : r.report.rows) {
    out += prefix + std::to_string(row.iteration) + "," + real_text(row.efficiency) + "," +
           real_text(row.concealability) + "," + real_text(row.successfulness) + "\n";
  }
  return out;
}

inline nlohmann::json attack_json(const AttackConfig& a) {
  return {{"kind", to_string(a.kind)},
          {"eps", a.eps},
          {"eta", a.eta},
          {"steps", a.steps},
          {"max_queries", a.max_queries},
          {"sgm_l2", a.sgm_l2},
          {"sgm_smooth", a.sgm_smooth},
          {"aggregation", to_string(a.aggregation.kind)},
          {"alpha", a.aggregation.alpha},
          {"gamma", a.aggregation.gamma},
          {"delta", a.aggregation.delta},
          {"seed", a.seed}};
}

inline nlohmann::json curriculum_json(const CurriculumResult& c) {
  nlohmann::json j{{"schedule", c.schedule},
                   {"accuracies", c.accuracies},
                   {"passed_rounds", c.passed_rounds},
                   {"warning", c.warning},
                   {"last_trained_eps", c.last_trained_eps()},
                   {"final_accuracy", c.final_accuracy()}};
  j["first_failed_eps"] = c.first_failed_eps ? nlohmann::json(*c.first_failed_eps) : nlohmann::json(nullptr);
  return j;
}

inline std::string slug(const CombinationResult& r) {
  return std::to_string(r.point.index) + "_" + r.point.label;
}

}  // namespace detail

inline nlohmann::json summary_json(const RunRecord& rec, const ConfigFile& source) {
  nlohmann::json j;
  j["config_hash"] = rec.config_hash;
  j["seed"] = rec.seed;
  j["complete"] = rec.complete;
  if (!rec.complete) {
    j["failed_stage"] = rec.failed_stage;
    j["error"] = rec.error;
  }
  nlohmann::json echo = nlohmann::json::object();
  for (const auto& name : source.sections()) {
    for (const auto& [k, v] : source.section(name)) echo[name.empty() ? k : name + "." + k] = v;
  }
  j["config"] = echo;
  j["target_test_accuracy"] = rec.target_test_accuracy;
  nlohmann::json discs = nlohmann::json::object();
  for (const auto& [kind, c] : rec.curricula) discs[to_string(kind)] = detail::curriculum_json(c);
  j["discriminators"] = discs;
  nlohmann::json combos = nlohmann::json::array();
  for (std::size_t i : rec.ranking()) {
    const CombinationResult& r = rec.combinations[i];
    const MetricsRow& best = r.report.selected();
    combos.push_back({{"combination", r.point.index},
                      {"label", r.point.label},
                      {"attack", detail::attack_json(r.point.attack)},
                      {"selected_iteration", best.iteration},
                      {"selection", to_string(r.report.selection.reason)},
                      {"E", best.efficiency},
                      {"C", best.concealability},
                      {"S", best.successfulness}});
  }
  j["combinations"] = combos;
  return j;
}

/// Resolution order for the output root: explicit override, then the
/// TSCONCEAL_OUT environment variable, then [output] dir.
inline std::string resolve_output_dir(const ExperimentConfig& cfg, const std::optional<std::string>& override_dir) {
  if (override_dir) return *override_dir;
  if (const char* env = std::getenv("TSCONCEAL_OUT"); env != nullptr && *env != '\0') return env;
  return cfg.output.dir;
}

namespace detail {

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out << text;
  if (!out) throw IoError("write failed for " + path);
}

/// Runs job(i) for i in [0, n) on up to `threads` workers and hands each
/// result to `sink` in index order from the calling thread.
template <class Result, class Job, class Sink>
void ordered_fan_out(std::size_t n, std::size_t threads, Job job, Sink sink) {
  std::vector<std::optional<Result>> slots(n);
  std::vector<std::exception_ptr> errors(n);
  std::mutex mu;
  std::condition_variable ready;
  std::size_t next = 0;
  auto work = [&] {
    while (true) {
      std::size_t i;
      {
        std::lock_guard lock(mu);
        if (next == n) return;
        i = next++;
      }
      std::optional<Result> r;
      std::exception_ptr err;
      try {
        r.emplace(job(i));
      } catch (...) {
        err = std::current_exception();
      }
      {
        std::lock_guard lock(mu);
        slots[i] = std::move(r);
        errors[i] = err;
      }
      ready.notify_all();
    }
  };
  if (threads <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) sink(i, job(i));
    return;
  }
  std::vector<std::jthread> pool;
  for (std::size_t t = 0; t < std::min(threads, n); ++t) pool.emplace_back(work);
  std::exception_ptr first;
  for (std::size_t i = 0; i < n; ++i) {
    std::unique_lock lock(mu);
    ready.wait(lock, [&] { return slots[i].has_value() || errors[i]; });
    if (errors[i]) {
      if (!first) first = errors[i];
      continue;
    }
    Result r = std::move(*slots[i]);
    slots[i].reset();
    lock.unlock();
    if (!first) sink(i, std::move(r));
  }
  pool.clear();
  if (first) std::rethrow_exception(first);
}

}  // namespace detail

struct PipelineOptions {
  std::optional<std::string> output_dir;
  bool write_outputs = true;
  /// Called with a one-line progress note per stage.
  std::function<void(const std::string&)> log;
};

/// Full pipeline over every grid combination. Targets and discriminators
/// are shared: one target, one curriculum discriminator per attack kind.
inline RunRecord grid_search(const ExperimentConfig& cfg, const PipelineOptions& opts = {}) {
  namespace fs = std::filesystem;
  const auto t0 = std::chrono::steady_clock::now();
  auto note = [&](const std::string& s) {
    if (opts.log) opts.log(s);
  };
  RunRecord rec;
  rec.config_hash = cfg.hash();
  rec.seed = cfg.seed;
  const std::string dir = resolve_output_dir(cfg, opts.output_dir);
  std::string stage = "output";
  const auto persist_summary = [&] {
    if (!opts.write_outputs) return;
    fs::create_directories(dir);
    const std::string path = dir + "/summary.json";
    detail::write_text(path, summary_json(rec, cfg.source).dump(2) + "\n");
    rec.artifacts.push_back(path);
  };

  try {
    if (opts.write_outputs) fs::create_directories(dir);
    stage = "data";
    note("loading data");
    const ExperimentData data = load_data(cfg);

    stage = "target";
    note("training target");
    const Classifier target = train_target(cfg, data.train);
    rec.target_test_accuracy = accuracy(data.test.labels, target.predict(data.test.features));
    if (opts.write_outputs) {
      save_parameters(target, dir + "/target.json");
      rec.artifacts.push_back(dir + "/target.json");
    }

    stage = "discriminator";
    const ModelSpec dspec = disc_spec_for(cfg, target.spec());
    for (const GridPoint& p : cfg.grid) {
      if (rec.curricula.count(p.attack.kind) != 0) continue;
      note("curriculum for " + to_string(p.attack.kind));
      rec.curricula.emplace(p.attack.kind,
                            curriculum_train(dspec, data.train, target, curriculum_for(cfg, p.attack)));
      if (opts.write_outputs) {
        const std::string path = dir + "/disc_" + to_string(p.attack.kind) + ".json";
        save_parameters(rec.curricula.at(p.attack.kind).disc, path);
        rec.artifacts.push_back(path);
      }
    }

    stage = "attack";
    std::string csv = detail::csv_header();
    if (opts.write_outputs && cfg.output.save_series) {
      fs::create_directories(dir + "/series");
      save_ucr_tsv(data.test, dir + "/series/clean_test.tsv");
    }
    const std::size_t threads =
        cfg.output.threads > 0 ? cfg.output.threads : std::max(1u, std::thread::hardware_concurrency());
    auto job = [&](std::size_t i) {
      GridPoint p = cfg.grid[i];
      p.attack.seed = StageSeeds::combination(cfg.seed, p.index);
      const Classifier& disc = rec.curricula.at(p.attack.kind).disc;
      const AttackTrajectory traj = run_attack(target, &disc, data.test.features, data.test.labels, p.attack);
      CombinationResult r;
      r.report = evaluate_trajectory(target, disc, traj, data.test.labels, cfg.floors);
      r.selected_series = traj.snapshots.at(r.report.selected().iteration);
      r.point = std::move(p);
      return r;
    };
    auto sink = [&](std::size_t, CombinationResult r) {
      note("combination " + std::to_string(r.point.index) + " (" + r.point.label + ") S=" +
           detail::real_text(r.report.selected().successfulness));
      csv += detail::csv_rows(r);
      if (opts.write_outputs && cfg.output.save_series) {
        save_ucr_tsv(data.test.with_features(r.selected_series), dir + "/series/" + detail::slug(r) + ".tsv");
      }
      if (opts.write_outputs && cfg.output.plots) {
        fs::create_directories(dir + "/plots");
        const std::size_t rows = std::min(cfg.output.plot_series, data.test.size());
        for (std::size_t k = 0; k < rows; ++k) {
          std::optional<std::size_t> trunc;
          if (cfg.output.plot_truncate > 0) trunc = cfg.output.plot_truncate;
          emit_plot(data.test.features.row(k), r.selected_series.row(k),
                    dir + "/plots/" + detail::slug(r) + "_" + std::to_string(k) + ".svg", trunc,
                    r.point.label + " series " + std::to_string(k));
        }
      }
      rec.combinations.push_back(std::move(r));
    };
    detail::ordered_fan_out<CombinationResult>(cfg.grid.size(), threads, job, sink);

    stage = "output";
    if (opts.write_outputs) {
      detail::write_text(dir + "/results.csv", csv);
      rec.artifacts.push_back(dir + "/results.csv");
    }
    rec.complete = true;
    persist_summary();
  } catch (const std::exception& e) {
    rec.complete = false;
    rec.failed_stage = stage;
    rec.error = e.what();
    try {
      persist_summary();
    } catch (...) {
    }
    throw PipelineError(stage, e.what());
  }
  rec.wall_clock_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rec;
}

/// The configured pipeline; identical to grid_search, which degenerates to
/// the single [attack] combination when no grid is given.
inline RunRecord run_pipeline(const ExperimentConfig& cfg, const PipelineOptions& opts = {}) {
  return grid_search(cfg, opts);
}

}  // namespace tsconceal
