#pragma once

// Gradient-boosted decision trees for binary logistic loss. Trees grow
// leaf-wise (best-gain leaf first) up to a leaf budget, using exact greedy
// split search over midpoints of sorted distinct values. Missing values
// (NaN) follow a per-split learned direction.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "urlguard/error.hpp"
#include "urlguard/metrics.hpp"

namespace urlguard::gbdt {

// Dense row-major feature matrix; NaN marks a missing value.
class FeatureMatrix {
 public:
  FeatureMatrix() = default;
  FeatureMatrix(std::size_t rows, std::size_t cols)
      : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {}
  FeatureMatrix(std::size_t cols, std::vector<double> data)
      : rows_(cols == 0 ? 0 : data.size() / cols), cols_(cols), data_(std::move(data)) {
    if (cols_ != 0 && data_.size() % cols_ != 0) {
      fail(Errc::kShapeMismatch, "matrix data is not a multiple of the column count");
    }
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  std::span<const double> row(std::size_t r) const {
    return std::span(data_).subspan(r * cols_, cols_);
  }
  void append_row(std::span<const double> values) {
    if (cols_ == 0 && rows_ == 0) cols_ = values.size();
    if (values.size() != cols_) fail(Errc::kSchemaMismatch, "row width mismatch");
    data_.insert(data_.end(), values.begin(), values.end());
    ++rows_;
  }
  const std::vector<double>& data() const { return data_; }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

struct GbdtConfig {
  double learning_rate = 0.05;
  std::size_t max_estimators = 1000;
  std::size_t num_leaves = 64;
  std::size_t min_samples_leaf = 20;
  std::size_t early_stop_rounds = 50;
  double lambda = 1.0;
  std::uint64_t seed = 0;

  bool operator==(const GbdtConfig&) const = default;

  void validate() const {
    if (!(learning_rate > 0.0)) fail(Errc::kInvalidArgument, "learning_rate must be > 0");
    if (num_leaves < 2) fail(Errc::kInvalidArgument, "num_leaves must be >= 2");
    if (max_estimators < 1) fail(Errc::kInvalidArgument, "max_estimators must be >= 1");
    if (min_samples_leaf < 1) fail(Errc::kInvalidArgument, "min_samples_leaf must be >= 1");
    if (!(lambda >= 0.0)) fail(Errc::kInvalidArgument, "lambda must be >= 0");
  }
};

// Leaf iff feature < 0. Rows with value <= threshold go left.
struct TreeNode {
  std::int32_t feature = -1;
  double threshold = 0.0;
  bool missing_goes_left = true;
  std::int32_t left = -1;
  std::int32_t right = -1;
  double value = 0.0;  // leaf output before shrinkage
  double gain = 0.0;   // split gain (internal nodes)
  std::uint32_t count = 0;

  bool is_leaf() const { return feature < 0; }
  bool operator==(const TreeNode&) const = default;
};

struct Tree {
  std::vector<TreeNode> nodes;  // nodes[0] is the root

  double predict(std::span<const double> row) const {
    std::size_t i = 0;
    while (!nodes[i].is_leaf()) {
      const TreeNode& n = nodes[i];
      const double x = row[static_cast<std::size_t>(n.feature)];
      const bool left = std::isnan(x) ? n.missing_goes_left : x <= n.threshold;
      i = static_cast<std::size_t>(left ? n.left : n.right);
    }
    return nodes[i].value;
  }

  std::size_t num_leaves() const {
    return static_cast<std::size_t>(
        std::count_if(nodes.begin(), nodes.end(), [](const TreeNode& n) { return n.is_leaf(); }));
  }

  bool operator==(const Tree&) const = default;
};

struct GbdtModel {
  std::size_t num_features = 0;
  double base_score = 0.0;  // log-odds of the training prior
  double learning_rate = 0.05;
  std::vector<Tree> trees;

  bool operator==(const GbdtModel&) const = default;
};

inline void check_columns(const GbdtModel& m, const FeatureMatrix& rows) {
  if (rows.rows() > 0 && rows.cols() != m.num_features) {
    fail(Errc::kSchemaMismatch, "expected " + std::to_string(m.num_features) +
                                    " feature columns, got " + std::to_string(rows.cols()));
  }
}

inline double predict_raw_row(const GbdtModel& m, std::span<const double> row) {
  double s = m.base_score;
  for (const Tree& t : m.trees) s += m.learning_rate * t.predict(row);
  return s;
}

inline std::vector<double> predict_raw(const GbdtModel& m, const FeatureMatrix& rows) {
  check_columns(m, rows);
  std::vector<double> out(rows.rows());
  for (std::size_t r = 0; r < rows.rows(); ++r) out[r] = predict_raw_row(m, rows.row(r));
  return out;
}

inline double logistic(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

inline std::vector<double> predict_proba(const GbdtModel& m, const FeatureMatrix& rows) {
  std::vector<double> out = predict_raw(m, rows);
  for (double& v : out) v = logistic(v);
  return out;
}

// Total split gain per feature, normalized to sum to one (all zeros when the
// model has no splits).
inline std::vector<double> feature_importance(const GbdtModel& m) {
  std::vector<double> imp(m.num_features, 0.0);
  for (const Tree& t : m.trees) {
    for (const TreeNode& n : t.nodes) {
      if (!n.is_leaf()) imp[static_cast<std::size_t>(n.feature)] += n.gain;
    }
  }
  const double total = std::accumulate(imp.begin(), imp.end(), 0.0);
  if (total > 0.0) {
    for (double& v : imp) v /= total;
  }
  return imp;
}

// Feature indices sorted by importance descending, ties by index.
inline std::vector<std::size_t> importance_ranking(std::span<const double> importance) {
  std::vector<std::size_t> idx(importance.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return importance[a] > importance[b];
  });
  return idx;
}

struct SplitCandidate {
  std::size_t feature = 0;
  double threshold = 0.0;
  bool missing_goes_left = true;
  double gain = 0.0;
};

// Gains within this relative distance count as ties, so the result does not
// hinge on summation order.
inline constexpr double kGainTieTolerance = 1e-12;

inline bool gain_beats(double gain, double best) {
  return gain > best + kGainTieTolerance * std::max(1.0, std::abs(best));
}

inline double split_score(double g, double h, double lambda) { return g * g / (h + lambda); }

// Midpoint between consecutive distinct values, kept strictly below `hi`.
inline double midpoint(double lo, double hi) {
  const double mid = lo + (hi - lo) / 2.0;
  return mid < hi ? mid : lo;
}

struct RoundRecord {
  std::size_t round = 0;
  double train_loss = 0.0;
  double val_auc = 0.0;
  std::size_t leaves = 0;
};

struct FitResult {
  GbdtModel model;
  std::vector<RoundRecord> history;
  std::size_t best_round = 0;
  double best_val_auc = 0.0;
};

namespace detail {

struct Stats {
  double g = 0.0;
  double h = 0.0;
  std::size_t n = 0;
};

// Leaf under construction: rows sorted per feature (non-missing) plus the
// rows where each feature is missing.
struct GrowLeaf {
  std::size_t node = 0;
  std::vector<std::vector<std::uint32_t>> sorted;
  std::vector<std::vector<std::uint32_t>> missing;
  Stats total;
  std::optional<SplitCandidate> best;
};

class TreeGrower {
 public:
  TreeGrower(const FeatureMatrix& x, std::span<const double> grad,
             std::span<const double> hess, const GbdtConfig& cfg,
             const std::vector<std::vector<std::uint32_t>>& presorted)
      : x_(x), grad_(grad), hess_(hess), cfg_(cfg), presorted_(presorted),
        side_(x.rows(), 0) {}

  // Grows one tree; `leaf_of_row` receives each training row's leaf node.
  Tree grow(std::vector<std::uint32_t>& leaf_of_row) {
    Tree tree;
    tree.nodes.emplace_back();
    GrowLeaf root;
    root.node = 0;
    root.sorted.resize(x_.cols());
    root.missing.resize(x_.cols());
    for (std::size_t f = 0; f < x_.cols(); ++f) {
      for (std::uint32_t r : presorted_[f]) {
        (std::isnan(x_(r, f)) ? root.missing[f] : root.sorted[f]).push_back(r);
      }
    }
    for (std::size_t r = 0; r < x_.rows(); ++r) accumulate(root.total, r);
    evaluate(root);

    std::vector<GrowLeaf> leaves;
    leaves.push_back(std::move(root));
    while (leaves.size() < cfg_.num_leaves) {
      std::size_t pick = leaves.size();
      for (std::size_t i = 0; i < leaves.size(); ++i) {
        if (!leaves[i].best) continue;
        if (pick == leaves.size() || gain_beats(leaves[i].best->gain, leaves[pick].best->gain)) {
          pick = i;
        }
      }
      if (pick == leaves.size()) break;
      auto [left, right] = split(tree, leaves[pick]);
      leaves[pick] = std::move(left);
      leaves.push_back(std::move(right));
    }

    leaf_of_row.assign(x_.rows(), 0);
    for (GrowLeaf& leaf : leaves) {
      TreeNode& node = tree.nodes[leaf.node];
      node.value = -leaf.total.g / (leaf.total.h + cfg_.lambda);
      node.count = static_cast<std::uint32_t>(leaf.total.n);
      if (x_.cols() == 0) continue;
      // Feature 0's lists hold every row of the leaf.
      for (auto r : leaf.sorted[0]) leaf_of_row[r] = static_cast<std::uint32_t>(leaf.node);
      for (auto r : leaf.missing[0]) leaf_of_row[r] = static_cast<std::uint32_t>(leaf.node);
    }
    return tree;
  }

 private:
  void accumulate(Stats& s, std::size_t r) const {
    s.g += grad_[r];
    s.h += hess_[r];
    ++s.n;
  }

  void evaluate(GrowLeaf& leaf) const {
    leaf.best.reset();
    const Stats& total = leaf.total;
    if (total.n < 2 * cfg_.min_samples_leaf) return;
    const double parent = split_score(total.g, total.h, cfg_.lambda);
    double best_gain = 0.0;
    for (std::size_t f = 0; f < x_.cols(); ++f) {
      Stats miss;
      for (auto r : leaf.missing[f]) accumulate(miss, r);
      const auto& rows = leaf.sorted[f];
      Stats left;
      for (std::size_t i = 0; i + 1 < rows.size(); ++i) {
        accumulate(left, rows[i]);
        const double v = x_(rows[i], f);
        const double next = x_(rows[i + 1], f);
        if (!(v < next)) continue;
        const double threshold = midpoint(v, next);
        for (int dir = 0; dir < (miss.n > 0 ? 2 : 1); ++dir) {
          const bool miss_left = dir == 0;
          Stats l = left;
          if (miss_left) {
            l.g += miss.g;
            l.h += miss.h;
            l.n += miss.n;
          }
          const Stats r{total.g - l.g, total.h - l.h, total.n - l.n};
          if (l.n < cfg_.min_samples_leaf || r.n < cfg_.min_samples_leaf) continue;
          const double gain = split_score(l.g, l.h, cfg_.lambda) +
                              split_score(r.g, r.h, cfg_.lambda) - parent;
          if (gain > 0.0 && gain_beats(gain, best_gain)) {
            best_gain = gain;
            leaf.best = SplitCandidate{f, threshold, miss_left, gain};
          }
        }
      }
    }
  }

  std::pair<GrowLeaf, GrowLeaf> split(Tree& tree, GrowLeaf& leaf) {
    const SplitCandidate s = *leaf.best;
    const auto left_id = static_cast<std::int32_t>(tree.nodes.size());
    tree.nodes.emplace_back();
    tree.nodes.emplace_back();
    TreeNode& node = tree.nodes[leaf.node];
    node.feature = static_cast<std::int32_t>(s.feature);
    node.threshold = s.threshold;
    node.missing_goes_left = s.missing_goes_left;
    node.left = left_id;
    node.right = left_id + 1;
    node.gain = s.gain;
    node.count = static_cast<std::uint32_t>(leaf.total.n);

    // Mark sides once, then partition every feature list stably.
    for (auto r : leaf.sorted[s.feature]) side_[r] = x_(r, s.feature) <= s.threshold ? 1 : 2;
    for (auto r : leaf.missing[s.feature]) side_[r] = s.missing_goes_left ? 1 : 2;

    GrowLeaf left, right;
    left.node = static_cast<std::size_t>(left_id);
    right.node = static_cast<std::size_t>(left_id + 1);
    left.sorted.resize(x_.cols());
    right.sorted.resize(x_.cols());
    left.missing.resize(x_.cols());
    right.missing.resize(x_.cols());
    for (std::size_t f = 0; f < x_.cols(); ++f) {
      for (auto r : leaf.sorted[f]) (side_[r] == 1 ? left : right).sorted[f].push_back(r);
      for (auto r : leaf.missing[f]) (side_[r] == 1 ? left : right).missing[f].push_back(r);
      leaf.sorted[f].clear();
      leaf.sorted[f].shrink_to_fit();
      leaf.missing[f].clear();
      leaf.missing[f].shrink_to_fit();
    }
    for (auto r : left.sorted[0]) accumulate(left.total, r);
    for (auto r : left.missing[0]) accumulate(left.total, r);
    for (auto r : right.sorted[0]) accumulate(right.total, r);
    for (auto r : right.missing[0]) accumulate(right.total, r);
    evaluate(left);
    evaluate(right);
    return {std::move(left), std::move(right)};
  }

  const FeatureMatrix& x_;
  std::span<const double> grad_;
  std::span<const double> hess_;
  const GbdtConfig& cfg_;
  const std::vector<std::vector<std::uint32_t>>& presorted_;
  std::vector<std::uint8_t> side_;
};

inline std::vector<std::vector<std::uint32_t>> presort(const FeatureMatrix& x) {
  std::vector<std::vector<std::uint32_t>> out(x.cols());
  for (std::size_t f = 0; f < x.cols(); ++f) {
    auto& idx = out[f];
    idx.resize(x.rows());
    std::iota(idx.begin(), idx.end(), 0u);
    // NaN sorts last; ties keep row order.
    std::stable_sort(idx.begin(), idx.end(), [&](std::uint32_t a, std::uint32_t b) {
      const double va = x(a, f), vb = x(b, f);
      if (std::isnan(va)) return false;
      if (std::isnan(vb)) return true;
      return va < vb;
    });
  }
  return out;
}

inline double logistic_loss(std::span<const double> raw, Labels y) {
  double total = 0.0;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const double z = raw[i];
    total += std::log1p(std::exp(-std::abs(z))) + std::max(z, 0.0) - z * (y[i] ? 1.0 : 0.0);
  }
  return raw.empty() ? 0.0 : total / static_cast<double>(raw.size());
}

}  // namespace detail

// Builds one tree on fixed gradients/hessians. Exposed for split-level tests.
inline Tree grow_tree(const FeatureMatrix& x, std::span<const double> grad,
                      std::span<const double> hess, const GbdtConfig& cfg) {
  const auto presorted = detail::presort(x);
  detail::TreeGrower grower(x, grad, hess, cfg, presorted);
  std::vector<std::uint32_t> leaf_of_row;
  return grower.grow(leaf_of_row);
}

// Boosts on logistic loss with validation-AUC early stopping; the returned
// model is truncated at the best validation round.
inline FitResult fit(const FeatureMatrix& train_x, Labels train_y,
                     const FeatureMatrix& val_x, Labels val_y, const GbdtConfig& cfg) {
  cfg.validate();
  if (train_x.rows() == 0) fail(Errc::kEmptyTraining, "training set is empty");
  if (train_x.rows() != train_y.size() || val_x.rows() != val_y.size()) {
    fail(Errc::kShapeMismatch, "labels do not match the feature matrix");
  }
  if (val_x.rows() > 0 && val_x.cols() != train_x.cols()) {
    fail(Errc::kSchemaMismatch, "train and validation widths differ");
  }
  {
    const auto [pos, neg] = urlguard::detail::class_counts(val_y);
    if (pos == 0 || neg == 0) {
      fail(Errc::kDegenerateValidation, "validation set has a single class");
    }
  }
  const auto [pos, neg] = urlguard::detail::class_counts(train_y);
  if (pos == 0 || neg == 0) fail(Errc::kDegenerateLabels, "training set has a single class");

  FitResult result;
  GbdtModel& model = result.model;
  model.num_features = train_x.cols();
  model.learning_rate = cfg.learning_rate;
  model.base_score = std::log(static_cast<double>(pos) / static_cast<double>(neg));

  const std::size_t n = train_x.rows();
  std::vector<double> raw(n, model.base_score);
  std::vector<double> val_raw(val_x.rows(), model.base_score);
  std::vector<double> grad(n), hess(n);
  std::vector<std::uint32_t> leaf_of_row;
  const auto presorted = detail::presort(train_x);

  double best_auc = -1.0;
  std::size_t best_round = 0;
  for (std::size_t round = 1; round <= cfg.max_estimators; ++round) {
    for (std::size_t i = 0; i < n; ++i) {
      const double p = logistic(raw[i]);
      grad[i] = p - (train_y[i] ? 1.0 : 0.0);
      hess[i] = p * (1.0 - p);
    }
    detail::TreeGrower grower(train_x, grad, hess, cfg, presorted);
    Tree tree = grower.grow(leaf_of_row);
    for (std::size_t i = 0; i < n; ++i) {
      raw[i] += cfg.learning_rate * tree.nodes[leaf_of_row[i]].value;
    }
    for (std::size_t i = 0; i < val_x.rows(); ++i) {
      val_raw[i] += cfg.learning_rate * tree.predict(val_x.row(i));
    }
    RoundRecord rec;
    rec.round = round;
    rec.train_loss = detail::logistic_loss(raw, train_y);
    rec.val_auc = roc_auc(val_raw, val_y);
    rec.leaves = tree.num_leaves();
    result.history.push_back(rec);
    model.trees.push_back(std::move(tree));

    if (rec.val_auc > best_auc) {
      best_auc = rec.val_auc;
      best_round = round;
    } else if (round - best_round >= cfg.early_stop_rounds) {
      break;
    }
  }
  model.trees.resize(best_round);
  result.best_round = best_round;
  result.best_val_auc = best_auc;
  return result;
}

}  // namespace urlguard::gbdt
