#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "urlguard/error.hpp"

namespace urlguard {

using Labels = std::span<const std::uint8_t>;

struct ConfusionMatrix {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;

  std::size_t total() const { return tp + fp + tn + fn; }
  bool operator==(const ConfusionMatrix&) const = default;
};

namespace detail {

inline void check_lengths(std::size_t a, std::size_t b) {
  if (a != b) {
    fail(Errc::kLengthMismatch, "length mismatch: " + std::to_string(a) +
                                    " scores vs " + std::to_string(b) + " labels");
  }
}

inline std::pair<std::size_t, std::size_t> class_counts(Labels labels) {
  std::size_t pos = 0;
  for (auto y : labels) pos += y ? 1 : 0;
  return {pos, labels.size() - pos};
}

inline void require_both_classes(Labels labels) {
  const auto [pos, neg] = class_counts(labels);
  if (pos == 0 || neg == 0) {
    fail(Errc::kDegenerateLabels, "both classes must be present");
  }
}

}  // namespace detail

// Predicts positive iff prob >= threshold.
inline ConfusionMatrix confusion_at(std::span<const double> probs, Labels labels,
                                    double threshold) {
  detail::check_lengths(probs.size(), labels.size());
  ConfusionMatrix cm;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const bool predicted = probs[i] >= threshold;
    if (labels[i]) {
      predicted ? ++cm.tp : ++cm.fn;
    } else {
      predicted ? ++cm.fp : ++cm.tn;
    }
  }
  return cm;
}

// Mann-Whitney AUC from average ranks; ties count one half.
inline double roc_auc(std::span<const double> scores, Labels labels) {
  detail::check_lengths(scores.size(), labels.size());
  const auto [pos, neg] = detail::class_counts(labels);
  if (pos == 0 || neg == 0) {
    fail(Errc::kDegenerateLabels, "ROC-AUC needs both classes");
  }
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) {
      if (labels[order[k]]) rank_sum += avg_rank;
    }
    i = j;
  }
  const double p = static_cast<double>(pos);
  const double n = static_cast<double>(neg);
  return (rank_sum - p * (p + 1.0) / 2.0) / (p * n);
}

struct ClassificationMetrics {
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  // Set when the denominator was zero; the metric is then reported as 1.0.
  bool precision_undefined = false;
  bool recall_undefined = false;
};

inline ClassificationMetrics classification_metrics(const ConfusionMatrix& cm) {
  ClassificationMetrics m;
  const auto n = static_cast<double>(cm.total());
  m.accuracy = n == 0 ? 0.0 : static_cast<double>(cm.tp + cm.tn) / n;
  if (cm.tp + cm.fp == 0) {
    m.precision = 1.0;
    m.precision_undefined = true;
  } else {
    m.precision = static_cast<double>(cm.tp) / static_cast<double>(cm.tp + cm.fp);
  }
  if (cm.tp + cm.fn == 0) {
    m.recall = 1.0;
    m.recall_undefined = true;
  } else {
    m.recall = static_cast<double>(cm.tp) / static_cast<double>(cm.tp + cm.fn);
  }
  const double denom = m.precision + m.recall;
  m.f1 = denom == 0.0 ? 0.0 : 2.0 * m.precision * m.recall / denom;
  return m;
}

struct RocPoint {
  double fpr, tpr, threshold;
};
struct PrPoint {
  double recall, precision, threshold;
};
struct ReliabilityBin {
  double lo, hi;
  double mean_predicted;  // NaN when empty
  double positive_rate;   // NaN when empty
  std::size_t count;
  bool defined;
};
struct Histogram {
  std::vector<double> edges;  // bins + 1
  std::vector<std::size_t> positives;
  std::vector<std::size_t> negatives;
};

struct Curves {
  std::vector<RocPoint> roc;
  std::vector<PrPoint> pr;
  std::vector<ReliabilityBin> reliability;
  Histogram histogram;
};

// ROC and PR points at every distinct threshold (descending), plus the
// reliability table (10 bins) and per-class probability histograms (20 bins).
inline Curves curves(std::span<const double> probs, Labels labels,
                     std::size_t reliability_bins = 10,
                     std::size_t histogram_bins = 20) {
  detail::check_lengths(probs.size(), labels.size());
  detail::require_both_classes(labels);
  const auto [pos, neg] = detail::class_counts(labels);
  Curves c;

  std::vector<std::size_t> order(probs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return probs[a] > probs[b]; });
  c.roc.push_back({0.0, 0.0, std::numeric_limits<double>::infinity()});
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < order.size();) {
    const double t = probs[order[i]];
    while (i < order.size() && probs[order[i]] == t) {
      labels[order[i]] ? ++tp : ++fp;
      ++i;
    }
    c.roc.push_back({static_cast<double>(fp) / static_cast<double>(neg),
                     static_cast<double>(tp) / static_cast<double>(pos), t});
    c.pr.push_back({static_cast<double>(tp) / static_cast<double>(pos),
                    static_cast<double>(tp) / static_cast<double>(tp + fp), t});
  }

  const double nan = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> sum(reliability_bins, 0.0);
  std::vector<std::size_t> count(reliability_bins, 0), hits(reliability_bins, 0);
  auto bin_of = [](double p, std::size_t bins) {
    const auto b = static_cast<std::size_t>(std::clamp(p, 0.0, 1.0) *
                                            static_cast<double>(bins));
    return std::min(b, bins - 1);
  };
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const std::size_t b = bin_of(probs[i], reliability_bins);
    sum[b] += probs[i];
    ++count[b];
    hits[b] += labels[i] ? 1 : 0;
  }
  for (std::size_t b = 0; b < reliability_bins; ++b) {
    const double lo = static_cast<double>(b) / static_cast<double>(reliability_bins);
    const double hi = static_cast<double>(b + 1) / static_cast<double>(reliability_bins);
    const bool defined = count[b] > 0;
    const auto n = static_cast<double>(count[b]);
    c.reliability.push_back({lo, hi, defined ? sum[b] / n : nan,
                             defined ? static_cast<double>(hits[b]) / n : nan,
                             count[b], defined});
  }

  c.histogram.positives.assign(histogram_bins, 0);
  c.histogram.negatives.assign(histogram_bins, 0);
  for (std::size_t b = 0; b <= histogram_bins; ++b) {
    c.histogram.edges.push_back(static_cast<double>(b) /
                                static_cast<double>(histogram_bins));
  }
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const std::size_t b = bin_of(probs[i], histogram_bins);
    labels[i] ? ++c.histogram.positives[b] : ++c.histogram.negatives[b];
  }
  return c;
}

inline double trapezoid_auc(std::span<const RocPoint> roc) {
  double area = 0.0;
  for (std::size_t i = 1; i < roc.size(); ++i) {
    area += (roc[i].fpr - roc[i - 1].fpr) * (roc[i].tpr + roc[i - 1].tpr) * 0.5;
  }
  return area;
}

struct EvalReport {
  ClassificationMetrics metrics;
  double roc_auc = 0.0;
  ConfusionMatrix confusion;
  Curves curves;
};

inline EvalReport evaluate(std::span<const double> probs, Labels labels,
                           double threshold) {
  EvalReport r;
  r.confusion = confusion_at(probs, labels, threshold);
  r.metrics = classification_metrics(r.confusion);
  r.roc_auc = roc_auc(probs, labels);
  r.curves = curves(probs, labels);
  return r;
}

}  // namespace urlguard
