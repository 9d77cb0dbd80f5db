#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "tsconceal/error.hpp"
#include "tsconceal/random.hpp"
#include "tsconceal/tensor.hpp"

namespace tsconceal {

struct NormalizationStats {
  double mean = 0.0;
  double std = 1.0;
};

/// n univariate series of equal length L with labels in [0, n_classes).
struct LabeledSeriesSet {
  Tensor features;  // [n, L]
  std::vector<int> labels;
  std::string name;
  std::optional<NormalizationStats> stats;
  /// Original label text for each contiguous class index (UCR files only).
  std::vector<std::string> label_names;

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t length() const { return features.dim(1); }
  std::size_t n_classes() const {
    if (!label_names.empty()) return label_names.size();
    int hi = -1;
    for (int l : labels) hi = std::max(hi, l);
    return static_cast<std::size_t>(hi + 1);
  }

  /// Same labels and metadata, different feature values.
  LabeledSeriesSet with_features(Tensor x) const {
    if (x.shape() != features.shape()) {
      throw ShapeError("replacement features " + shape_string(x.shape()) + " vs " +
                       shape_string(features.shape()));
    }
    LabeledSeriesSet out = *this;
    out.features = std::move(x);
    return out;
  }

  LabeledSeriesSet subset(const std::vector<std::size_t>& rows) const {
    if (rows.empty()) throw InvalidArgument("empty subset");
    const std::size_t len = length();
    std::vector<double> values;
    values.reserve(rows.size() * len);
    LabeledSeriesSet out;
    for (std::size_t r : rows) {
      auto src = features.row(r);
      values.insert(values.end(), src.begin(), src.end());
      out.labels.push_back(labels.at(r));
    }
    out.features = Tensor({rows.size(), len}, std::move(values));
    out.name = name;
    out.stats = stats;
    out.label_names = label_names;
    return out;
  }
};

namespace detail {

inline std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> cells;
  std::size_t start = 0;
  while (true) {
    const std::size_t tab = line.find('\t', start);
    cells.push_back(line.substr(start, tab == std::string_view::npos ? std::string_view::npos
                                                                     : tab - start));
    if (tab == std::string_view::npos) break;
    start = tab + 1;
  }
  return cells;
}

inline std::optional<double> parse_real(std::string_view cell) {
  while (!cell.empty() && (cell.front() == ' ' || cell.front() == '\r')) cell.remove_prefix(1);
  while (!cell.empty() && (cell.back() == ' ' || cell.back() == '\r')) cell.remove_suffix(1);
  if (cell.empty()) return std::nullopt;
  if (cell.front() == '+') cell.remove_prefix(1);
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
  if (ec != std::errc{} || ptr != cell.data() + cell.size() || !std::isfinite(v)) return std::nullopt;
  return v;
}

inline std::string trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\r')) s.remove_suffix(1);
  return std::string(s);
}

inline std::string format_real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace detail

/// Reads a UCR-archive TSV: one series per line, label first. Labels are
/// remapped to 0..k-1 in ascending order (numeric order when every label
/// parses as a number); the original text is kept in label_names.
inline LabeledSeriesSet load_ucr_tsv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::vector<std::string> raw_labels;
  std::vector<double> values;
  std::size_t width = 0;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    auto cells = detail::split_tabs(line);
    if (cells.size() < 2) {
      throw ParseError(path + ":" + std::to_string(line_no) + ": row has no series values");
    }
    const std::size_t row_width = cells.size() - 1;
    if (width == 0) {
      width = row_width;
    } else if (row_width != width) {
      throw ParseError(path + ":" + std::to_string(line_no) + ": ragged row with " +
                       std::to_string(row_width) + " values, expected " + std::to_string(width));
    }
    raw_labels.push_back(detail::trim(cells[0]));
    if (raw_labels.back().empty()) {
      throw ParseError(path + ":" + std::to_string(line_no) + ": empty label");
    }
    for (std::size_t c = 1; c < cells.size(); ++c) {
      auto v = detail::parse_real(cells[c]);
      if (!v) {
        throw ParseError(path + ":" + std::to_string(line_no) + ": non-numeric cell '" +
                         std::string(cells[c]) + "'");
      }
      values.push_back(*v);
    }
  }
  if (raw_labels.empty()) throw ParseError(path + ": empty file");

  std::vector<std::string> distinct = raw_labels;
  const bool numeric = std::all_of(distinct.begin(), distinct.end(),
                                   [](const std::string& s) { return detail::parse_real(s).has_value(); });
  std::sort(distinct.begin(), distinct.end(), [numeric](const std::string& a, const std::string& b) {
    return numeric ? *detail::parse_real(a) < *detail::parse_real(b) : a < b;
  });
  distinct.erase(std::unique(distinct.begin(), distinct.end(),
                             [numeric](const std::string& a, const std::string& b) {
                               return numeric ? *detail::parse_real(a) == *detail::parse_real(b)
                                              : a == b;
                             }),
                 distinct.end());
  LabeledSeriesSet set;
  for (const std::string& raw : raw_labels) {
    auto it = std::find_if(distinct.begin(), distinct.end(), [&](const std::string& d) {
      return numeric ? *detail::parse_real(d) == *detail::parse_real(raw) : d == raw;
    });
    set.labels.push_back(static_cast<int>(it - distinct.begin()));
  }
  set.features = Tensor({raw_labels.size(), width}, std::move(values));
  set.label_names = std::move(distinct);
  const std::size_t slash = path.find_last_of('/');
  set.name = slash == std::string::npos ? path : path.substr(slash + 1);
  return set;
}

/// Writes the set in UCR TSV form. Values use 17 significant digits, so a
/// reload reproduces them bit for bit.
inline void save_ucr_tsv(const LabeledSeriesSet& set, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  for (std::size_t r = 0; r < set.size(); ++r) {
    const int label = set.labels[r];
    if (!set.label_names.empty()) {
      out << set.label_names.at(static_cast<std::size_t>(label));
    } else {
      out << label;
    }
    for (double v : set.features.row(r)) out << '\t' << detail::format_real(v);
    out << '\n';
  }
  if (!out) throw IoError("write failed for " + path);
}

enum class SyntheticKind { two_sine, warped_bump };

struct SyntheticSpec {
  SyntheticKind kind = SyntheticKind::two_sine;
  std::size_t n_per_class = 100;
  std::size_t length = 64;
  double noise_std = 0.3;
  std::uint64_t seed = 0;
};

/// Class means:
///   two_sine    - class 0: sin(2 pi t / L), class 1: sin(4 pi t / L)
///   warped_bump - Gaussian bump near 0.3 L (class 0) or 0.7 L (class 1),
///                 centre jittered by up to 0.05 L per series
/// plus iid Gaussian noise. Rows are grouped by class.
inline LabeledSeriesSet generate_synthetic(const SyntheticSpec& spec) {
  if (spec.n_per_class < 2) throw InvalidArgument("synthetic sets need at least 2 series per class");
  if (spec.length < 2) throw InvalidArgument("synthetic series need length >= 2");
  if (!(spec.noise_std >= 0.0)) throw InvalidArgument("noise std must be non-negative");
  Rng rng(spec.seed);
  const std::size_t n = 2 * spec.n_per_class;
  const double len = static_cast<double>(spec.length);
  LabeledSeriesSet set;
  set.features = Tensor({n, spec.length});
  for (std::size_t r = 0; r < n; ++r) {
    const int cls = r < spec.n_per_class ? 0 : 1;
    set.labels.push_back(cls);
    double centre = 0.0;
    if (spec.kind == SyntheticKind::warped_bump) {
      centre = (cls == 0 ? 0.3 : 0.7) * len + rng.uniform(-0.05, 0.05) * len;
    }
    auto row = set.features.row(r);
    for (std::size_t t = 0; t < spec.length; ++t) {
      const double tt = static_cast<double>(t);
      double mean = 0.0;
      if (spec.kind == SyntheticKind::two_sine) {
        const double cycles = cls == 0 ? 2.0 : 4.0;
        mean = std::sin(cycles * std::numbers::pi * tt / len);
      } else {
        const double width = len / 10.0;
        mean = std::exp(-0.5 * (tt - centre) * (tt - centre) / (width * width));
      }
      row[t] = mean + (spec.noise_std > 0.0 ? spec.noise_std * rng.normal() : 0.0);
    }
  }
  set.name = spec.kind == SyntheticKind::two_sine ? "two_sine" : "warped_bump";
  return set;
}

/// Global mean and population std over every value in the set; std floored
/// at 1e-8.
inline NormalizationStats compute_stats(const LabeledSeriesSet& set) {
  const auto values = set.features.values();
  if (values.empty()) throw InvalidArgument("cannot normalize an empty set");
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(values.size());
  double var = 0.0;
  for (double v : values) var += (v - mean) * (v - mean);
  var /= static_cast<double>(values.size());
  return {mean, std::max(std::sqrt(var), 1e-8)};
}

inline LabeledSeriesSet apply_normalization(const LabeledSeriesSet& set, const NormalizationStats& stats) {
  Tensor x = set.features;
  for (double& v : x.values()) v = (v - stats.mean) / stats.std;
  LabeledSeriesSet out = set.with_features(std::move(x));
  out.stats = stats;
  return out;
}

struct NormalizedSets {
  LabeledSeriesSet train;
  std::vector<LabeledSeriesSet> others;
  NormalizationStats stats;
};

/// Statistics come from `train` alone and are applied to every set.
inline NormalizedSets zscore_normalize(const LabeledSeriesSet& train,
                                       const std::vector<LabeledSeriesSet>& others) {
  if (train.size() == 0) throw InvalidArgument("train set is empty");
  NormalizedSets out;
  out.stats = compute_stats(train);
  out.train = apply_normalization(train, out.stats);
  for (const auto& s : others) out.others.push_back(apply_normalization(s, out.stats));
  return out;
}

}  // namespace tsconceal
