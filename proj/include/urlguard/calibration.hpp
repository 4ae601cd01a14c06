#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "urlguard/error.hpp"
#include "urlguard/metrics.hpp"

namespace urlguard {

// Sigmoid calibration in the increasing form p = sigmoid(a * score + b).
struct PlattParams {
  double a = 1.0;
  double b = 0.0;

  bool operator==(const PlattParams&) const = default;
};

struct PlattFitInfo {
  std::size_t iterations = 0;
  bool converged = false;
  double objective = 0.0;
};

namespace detail {

inline double platt_sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

// -sum t*log(p) + (1-t)*log(1-p) with p = sigmoid(z), written stably.
inline double platt_objective(std::span<const double> s, std::span<const double> t,
                              double a, double b) {
  double f = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const double z = a * s[i] + b;
    f += std::log1p(std::exp(-std::abs(z))) + std::max(z, 0.0) - t[i] * z;
  }
  return f;
}

}  // namespace detail

// Newton's method with backtracking on Platt's smoothed targets
// t+ = (N+ + 1) / (N+ + 2), t- = 1 / (N- + 2).
inline PlattParams fit_platt(std::span<const double> scores, Labels labels,
                             PlattFitInfo* info = nullptr) {
  detail::check_lengths(scores.size(), labels.size());
  const auto [npos, nneg] = detail::class_counts(labels);
  if (npos < 2 || nneg < 2) {
    fail(Errc::kDegenerateLabels, "calibration needs at least two examples of each class");
  }
  for (double s : scores) {
    if (!std::isfinite(s)) fail(Errc::kInvalidArgument, "non-finite calibration score");
  }
  const double hi = (static_cast<double>(npos) + 1.0) / (static_cast<double>(npos) + 2.0);
  const double lo = 1.0 / (static_cast<double>(nneg) + 2.0);
  std::vector<double> t(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) t[i] = labels[i] ? hi : lo;

  constexpr std::size_t kMaxIter = 100;
  constexpr double kMinStep = 1e-10;
  constexpr double kSigma = 1e-12;
  constexpr double kTol = 1e-8;

  double a = 0.0;
  double b = std::log((static_cast<double>(npos) + 1.0) / (static_cast<double>(nneg) + 1.0));
  double f = detail::platt_objective(scores, t, a, b);
  PlattFitInfo local;
  for (std::size_t it = 1; it <= kMaxIter; ++it) {
    local.iterations = it;
    double h11 = kSigma, h22 = kSigma, h21 = 0.0, g1 = 0.0, g2 = 0.0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
      const double p = detail::platt_sigmoid(a * scores[i] + b);
      const double w = p * (1.0 - p);
      const double d = p - t[i];
      h11 += scores[i] * scores[i] * w;
      h22 += w;
      h21 += scores[i] * w;
      g1 += scores[i] * d;
      g2 += d;
    }
    const double det = h11 * h22 - h21 * h21;
    const double da = -(h22 * g1 - h21 * g2) / det;
    const double db = -(-h21 * g1 + h11 * g2) / det;
    const double gd = g1 * da + g2 * db;

    double step = 1.0;
    bool accepted = false;
    while (step >= kMinStep) {
      const double na = a + step * da;
      const double nb = b + step * db;
      const double nf = detail::platt_objective(scores, t, na, nb);
      if (nf < f + 1e-4 * step * gd) {
        accepted = true;
        a = na;
        b = nb;
        f = nf;
        break;
      }
      step /= 2.0;
    }
    if (!accepted || std::max(std::abs(step * da), std::abs(step * db)) < kTol) {
      local.converged = true;
      break;
    }
  }
  local.objective = f;
  if (info) *info = local;
  return {a, b};
}

inline double apply_platt(const PlattParams& p, double score) {
  return detail::platt_sigmoid(p.a * score + p.b);
}

inline std::vector<double> apply_platt(const PlattParams& p, std::span<const double> scores) {
  std::vector<double> out(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) out[i] = apply_platt(p, scores[i]);
  return out;
}

}  // namespace urlguard
