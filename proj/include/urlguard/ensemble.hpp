#pragma once

#include <cmath>
#include <cstddef>
#include <cstdlib>
#include <span>
#include <vector>

#include "urlguard/error.hpp"
#include "urlguard/metrics.hpp"

namespace urlguard {

struct EnsembleWeights {
  double w_cnn = 0.6;
  double w_gbdt = 0.4;

  static EnsembleWeights from_cnn(double w_cnn) {
    if (!(w_cnn >= 0.0 && w_cnn <= 1.0)) {
      fail(Errc::kInvalidArgument, "ensemble weight must be in [0,1]");
    }
    return {w_cnn, 1.0 - w_cnn};
  }

  bool operator==(const EnsembleWeights&) const = default;
};

inline double combine(const EnsembleWeights& w, double p_cnn, double p_gbdt) {
  return w.w_cnn * p_cnn + w.w_gbdt * p_gbdt;
}

inline std::vector<double> combine(const EnsembleWeights& w, std::span<const double> p_cnn,
                                   std::span<const double> p_gbdt) {
  if (p_cnn.size() != p_gbdt.size()) {
    fail(Errc::kLengthMismatch, "model probability vectors differ in length");
  }
  std::vector<double> out(p_cnn.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = combine(w, p_cnn[i], p_gbdt[i]);
  return out;
}

struct GridPoint {
  double w_cnn;
  double auc;
};

struct GridSearchResult {
  EnsembleWeights weights;
  double best_auc = 0.0;
  std::vector<GridPoint> grid;
};

// Scans w_cnn over {0, step, ..., 1} and keeps the validation-AUC maximizer.
// Ties go to the candidate closest to 0.5, then the smaller weight.
inline GridSearchResult grid_search_weight(std::span<const double> p_cnn,
                                           std::span<const double> p_gbdt, Labels labels,
                                           double step = 0.01) {
  if (!(step > 0.0 && step <= 1.0)) fail(Errc::kInvalidArgument, "grid step must be in (0,1]");
  const double count = std::round(1.0 / step);
  if (std::abs(count * step - 1.0) > 1e-9) {
    fail(Errc::kInvalidArgument, "grid step must divide 1 evenly");
  }
  detail::require_both_classes(labels);
  const auto n = static_cast<long>(count);

  GridSearchResult result;
  long best_i = -1;
  for (long i = 0; i <= n; ++i) {
    const double w = static_cast<double>(i) / static_cast<double>(n);
    const EnsembleWeights weights{w, 1.0 - w};
    const double auc = roc_auc(combine(weights, p_cnn, p_gbdt), labels);
    result.grid.push_back({w, auc});
    bool take = best_i < 0 || auc > result.best_auc;
    if (!take && auc == result.best_auc) {
      // |w - 0.5| compared exactly as |2i - n|.
      take = std::labs(2 * i - n) < std::labs(2 * best_i - n);
    }
    if (take) {
      best_i = i;
      result.best_auc = auc;
      result.weights = weights;
    }
  }
  return result;
}

}  // namespace urlguard
