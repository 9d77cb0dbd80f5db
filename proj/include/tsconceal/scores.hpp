#pragma once

#include <algorithm>
#include <set>
#include <span>
#include <vector>

#include "tsconceal/error.hpp"

namespace tsconceal {

enum class Averaging {
  binary_pos1,  // F1 of class 1
  macro,        // unweighted mean over classes present in y_true or y_pred
};

namespace detail {

inline double class_f1(std::span<const int> y_true, std::span<const int> y_pred, int cls) {
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < y_true.size(); ++i) {
    const bool t = y_true[i] == cls;
    const bool p = y_pred[i] == cls;
    tp += t && p;
    fp += !t && p;
    fn += t && !p;
  }
  if (tp == 0) return 0.0;
  return 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn);
}

}  // namespace detail

inline double f1(std::span<const int> y_true, std::span<const int> y_pred, Averaging averaging) {
  if (y_true.empty()) throw InvalidArgument("f1 of empty label vectors");
  if (y_true.size() != y_pred.size()) {
    throw InvalidArgument("f1: " + std::to_string(y_true.size()) + " true labels vs " +
                          std::to_string(y_pred.size()) + " predictions");
  }
  const auto negative = [](int v) { return v < 0; };
  if (std::any_of(y_true.begin(), y_true.end(), negative) ||
      std::any_of(y_pred.begin(), y_pred.end(), negative)) {
    throw InvalidArgument("f1: labels must be non-negative");
  }
  if (averaging == Averaging::binary_pos1) return detail::class_f1(y_true, y_pred, 1);
  std::set<int> classes(y_true.begin(), y_true.end());
  classes.insert(y_pred.begin(), y_pred.end());
  double total = 0.0;
  for (int c : classes) total += detail::class_f1(y_true, y_pred, c);
  return total / static_cast<double>(classes.size());
}

inline double accuracy(std::span<const int> y_true, std::span<const int> y_pred) {
  if (y_true.empty() || y_true.size() != y_pred.size()) {
    throw InvalidArgument("accuracy needs equal, non-empty label vectors");
  }
  std::size_t hits = 0;
  for (std::size_t i = 0; i < y_true.size(); ++i) hits += y_true[i] == y_pred[i];
  return static_cast<double>(hits) / static_cast<double>(y_true.size());
}

}  // namespace tsconceal
