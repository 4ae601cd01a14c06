#pragma once

// Stage drivers shared by the CLI and the acceptance suite.

#include <nlohmann/json.hpp>

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "urlguard/bundle.hpp"
#include "urlguard/calibration.hpp"
#include "urlguard/cnn.hpp"
#include "urlguard/dataset.hpp"
#include "urlguard/ensemble.hpp"
#include "urlguard/features.hpp"
#include "urlguard/gbdt.hpp"
#include "urlguard/io.hpp"
#include "urlguard/metrics.hpp"
#include "urlguard/predictor.hpp"

namespace urlguard::pipeline {

using dataset::Dataset;
using dataset::select_rows;
using dataset::SplitView;

using Log = std::function<void(const std::string&)>;

struct TrainOptions {
  std::uint64_t seed = 42;
  cnn::CnnConfig cnn;
  cnn::TrainConfig cnn_train;  // seed is overwritten from `seed`
  gbdt::GbdtConfig gbdt;       // seed is overwritten from `seed`
  double grid_step = 0.01;
  double threshold = 0.5;
  std::string timestamp;  // recorded in the bundle only when non-empty
};

struct TrainOutcome {
  ModelBundle bundle;
  nlohmann::ordered_json history;
  std::vector<std::string> warnings;
};

// Fits both models on the train split; the validation split drives early
// stopping, calibration and the ensemble weight.
inline TrainOutcome train(const Dataset& ds, const TrainOptions& opt, const Log& log = {}) {
  auto say = [&](const std::string& s) {
    if (log) log(s);
  };
  if (!opt.cnn.filters_increasing()) {
    fail(Errc::kInvalidArgument, "convolution filter counts must strictly increase");
  }
  const SplitView tr = select_rows(ds, ds.splits.train);
  const SplitView va = select_rows(ds, ds.splits.val);
  if (tr.labels.empty()) fail(Errc::kEmptyTraining, "train split is empty");
  {
    const auto [pos, neg] = urlguard::detail::class_counts(va.labels);
    if (pos == 0 || neg == 0) fail(Errc::kDegenerateValidation, "validation split has one class");
  }
  {
    const auto [pos, neg] = urlguard::detail::class_counts(tr.labels);
    if (pos == 0 || neg == 0) fail(Errc::kDegenerateLabels, "train split has one class");
  }

  TrainOutcome out;
  auto& hist = out.history;
  hist["seed"] = opt.seed;
  hist["dataset_fingerprint"] = ds.fingerprint;
  hist["split_sizes"] = {{"train", ds.splits.train.size()},
                         {"val", ds.splits.val.size()},
                         {"test", ds.splits.test.size()}};

  gbdt::GbdtConfig gcfg = opt.gbdt;
  gcfg.seed = mix_seed(opt.seed, 30);
  say("gbdt: fitting on " + std::to_string(tr.labels.size()) + " rows");
  const gbdt::FitResult gfit = gbdt::fit(tr.features, tr.labels, va.features, va.labels, gcfg);
  say("gbdt: best round " + std::to_string(gfit.best_round) + ", val AUC " +
      format_double(gfit.best_val_auc));
  {
    auto rounds = nlohmann::ordered_json::array();
    for (const auto& r : gfit.history) {
      rounds.push_back({{"round", r.round},
                        {"train_loss", r.train_loss},
                        {"val_auc", r.val_auc},
                        {"leaves", r.leaves}});
    }
    hist["gbdt"] = {{"best_round", gfit.best_round},
                    {"best_val_auc", gfit.best_val_auc},
                    {"rounds", std::move(rounds)}};
  }

  cnn::TrainConfig ccfg = opt.cnn_train;
  ccfg.seed = mix_seed(opt.seed, 31);
  const cnn::SequenceBatch tr_x{tr.sequences, ds.seq_len};
  const cnn::SequenceBatch va_x{va.sequences, ds.seq_len};
  // Training runs in single precision; the bundle holds the double copy.
  const auto cfit = cnn::train<float>(tr_x, tr.labels, va_x, va.labels, ccfg, opt.cnn,
                                      [&](const cnn::EpochRecord& e) {
                                        say("cnn: epoch " + std::to_string(e.epoch) +
                                            " loss " + format_double(e.train_loss) +
                                            " val AUC " + format_double(e.val_auc));
                                      });
  {
    auto epochs = nlohmann::ordered_json::array();
    for (const auto& e : cfit.history) {
      epochs.push_back({{"epoch", e.epoch},
                        {"train_loss", e.train_loss},
                        {"train_auc", e.train_auc},
                        {"val_auc", e.val_auc},
                        {"improved", e.improved}});
    }
    hist["cnn"] = {{"best_epoch", cfit.best_epoch}, {"epochs", std::move(epochs)}};
  }

  ModelBundle& b = out.bundle;
  b.cnn = cfit.best_params.cast<double>();
  b.gbdt_config = gcfg;
  b.gbdt = gfit.model;
  b.threshold = opt.threshold;

  const std::vector<double> cnn_val = cnn::logits(b.cnn, va_x);
  const std::vector<double> gbdt_val = gbdt::predict_raw(b.gbdt, va.features);
  PlattFitInfo ci, gi;
  b.cnn_platt = fit_platt(cnn_val, va.labels, &ci);
  b.gbdt_platt = fit_platt(gbdt_val, va.labels, &gi);
  for (const auto& [name, p] : {std::pair{"cnn", b.cnn_platt}, std::pair{"gbdt", b.gbdt_platt}}) {
    if (!(p.a > 0.0)) {
      out.warnings.push_back(std::string(name) +
                             " calibration slope is not positive: scores are inverted on val");
    }
  }
  hist["calibration"] = {
      {"cnn", {{"a", b.cnn_platt.a}, {"b", b.cnn_platt.b}, {"iterations", ci.iterations},
               {"converged", ci.converged}}},
      {"gbdt", {{"a", b.gbdt_platt.a}, {"b", b.gbdt_platt.b}, {"iterations", gi.iterations},
                {"converged", gi.converged}}}};

  const auto p_cnn = apply_platt(b.cnn_platt, cnn_val);
  const auto p_gbdt = apply_platt(b.gbdt_platt, gbdt_val);
  const GridSearchResult grid = grid_search_weight(p_cnn, p_gbdt, va.labels, opt.grid_step);
  b.weights = grid.weights;
  {
    auto points = nlohmann::ordered_json::array();
    for (const auto& g : grid.grid) points.push_back({{"w_cnn", g.w_cnn}, {"auc", g.auc}});
    hist["ensemble"] = {{"w_cnn", b.weights.w_cnn},
                        {"w_gbdt", b.weights.w_gbdt},
                        {"val_auc", grid.best_auc},
                        {"grid", std::move(points)}};
  }
  hist["warnings"] = out.warnings;

  b.meta.seed = opt.seed;
  b.meta.dataset_fingerprint = ds.fingerprint;
  b.meta.trained_at = opt.timestamp;
  b.meta.val_auc_cnn = roc_auc(p_cnn, va.labels);
  b.meta.val_auc_gbdt = roc_auc(p_gbdt, va.labels);
  b.meta.val_auc_ensemble = grid.best_auc;
  b.meta.cnn_best_epoch = cfit.best_epoch;
  b.meta.gbdt_best_round = gfit.best_round;
  say("ensemble: w_cnn " + format_double(b.weights.w_cnn) + ", val AUC " +
      format_double(grid.best_auc));
  return out;
}

// ---------------------------------------------------------------------------
// Evaluation

struct ModelScores {
  std::vector<double> ensemble, cnn, gbdt;
};

// Rescores URLs through the serving path so evaluation sees exactly what the
// service would return.
inline ModelScores score_urls(const Predictor& predictor, const std::vector<std::string>& urls) {
  ModelScores s;
  for (const auto& u : urls) {
    const Prediction p = predictor.predict(u);
    s.ensemble.push_back(p.probability);
    s.cnn.push_back(p.p_cnn);
    s.gbdt.push_back(p.p_gbdt);
  }
  return s;
}

namespace detail {

inline nlohmann::ordered_json number_or_null(double v) {
  return std::isfinite(v) ? nlohmann::ordered_json(v) : nlohmann::ordered_json(nullptr);
}

inline nlohmann::ordered_json row_json(std::string_view model, const EvalReport& r) {
  return {{"model", model},
          {"accuracy", r.metrics.accuracy},
          {"precision", r.metrics.precision},
          {"recall", r.metrics.recall},
          {"f1", r.metrics.f1},
          {"roc_auc", r.roc_auc},
          {"precision_undefined", r.metrics.precision_undefined},
          {"recall_undefined", r.metrics.recall_undefined}};
}

inline std::string roc_csv(const Curves& c) {
  std::ostringstream os;
  os << "fpr,tpr,threshold\n";
  for (const auto& p : c.roc) {
    os << format_double(p.fpr) << ',' << format_double(p.tpr) << ','
       << (std::isinf(p.threshold) ? "inf" : format_double(p.threshold)) << '\n';
  }
  return os.str();
}

inline std::string pr_csv(const Curves& c) {
  std::ostringstream os;
  os << "recall,precision,threshold\n";
  for (const auto& p : c.pr) {
    os << format_double(p.recall) << ',' << format_double(p.precision) << ','
       << format_double(p.threshold) << '\n';
  }
  return os.str();
}

inline std::string reliability_csv(const Curves& c) {
  std::ostringstream os;
  os << "bin_lo,bin_hi,mean_predicted,positive_rate,count\n";
  for (const auto& b : c.reliability) {
    os << format_double(b.lo) << ',' << format_double(b.hi) << ','
       << (b.defined ? format_double(b.mean_predicted) : "") << ','
       << (b.defined ? format_double(b.positive_rate) : "") << ',' << b.count << '\n';
  }
  return os.str();
}

inline std::string histogram_csv(const Curves& c) {
  std::ostringstream os;
  os << "bin_lo,bin_hi,phishing,valid\n";
  const auto& h = c.histogram;
  for (std::size_t i = 0; i + 1 < h.edges.size(); ++i) {
    os << format_double(h.edges[i]) << ',' << format_double(h.edges[i + 1]) << ','
       << h.positives[i] << ',' << h.negatives[i] << '\n';
  }
  return os.str();
}

inline constexpr std::string_view kPlotScript = R"(# gnuplot -c plot.gp  (run inside the curves/ directory)
set datafile separator ','
set terminal pngcairo size 800,600
set key bottom right

set output 'roc.png'
set title 'ROC'
set xlabel 'false positive rate'
set ylabel 'true positive rate'
plot 'roc_ensemble.csv' every ::1 using 1:2 with lines title 'ensemble', \
     'roc_cnn.csv' every ::1 using 1:2 with lines title 'cnn', \
     'roc_gbdt.csv' every ::1 using 1:2 with lines title 'gbdt', \
     x with lines dt 2 lc 'gray' notitle

set output 'pr.png'
set title 'Precision-recall'
set xlabel 'recall'
set ylabel 'precision'
set key bottom left
plot 'pr_ensemble.csv' every ::1 using 1:2 with lines title 'ensemble', \
     'pr_cnn.csv' every ::1 using 1:2 with lines title 'cnn', \
     'pr_gbdt.csv' every ::1 using 1:2 with lines title 'gbdt'

set output 'reliability.png'
set title 'Reliability (ensemble)'
set xlabel 'mean predicted probability'
set ylabel 'observed phishing rate'
set key top left
plot 'reliability_ensemble.csv' every ::1 using 3:4 with linespoints title 'ensemble', \
     x with lines dt 2 lc 'gray' title 'perfect'

set output 'histogram.png'
set title 'Predicted probability by class (ensemble)'
set xlabel 'probability'
set ylabel 'count'
set style fill solid 0.5
set key top center
plot 'histogram_ensemble.csv' every ::1 using (($1+$2)/2):3 with boxes title 'phishing', \
     'histogram_ensemble.csv' every ::1 using (($1+$2)/2):4 with boxes title 'valid'
)";

}  // namespace detail

struct EvalOptions {
  std::string split = "test";
  std::optional<double> threshold;
};

struct EvalOutcome {
  nlohmann::ordered_json report;
  EvalReport ensemble, cnn, gbdt;
};

inline const std::vector<std::size_t>& split_indices(const Dataset& ds, std::string_view name) {
  if (name == "train") return ds.splits.train;
  if (name == "val") return ds.splits.val;
  if (name == "test") return ds.splits.test;
  fail(Errc::kInvalidArgument, "unknown split '" + std::string(name) + "'");
}

// Scores one split and writes report.json plus curves/ into `out_dir`.
// Output depends only on (bundle, dataset, options), so reruns are identical.
inline EvalOutcome evaluate(const std::shared_ptr<const ModelBundle>& bundle, const Dataset& ds,
                            const EvalOptions& opt, const std::filesystem::path& out_dir) {
  const Predictor predictor(bundle);
  const double threshold = opt.threshold.value_or(bundle->threshold);
  const auto& idx = split_indices(ds, opt.split);
  const SplitView view = select_rows(ds, idx);
  if (view.labels.empty()) fail(Errc::kDegenerateLabels, "split '" + opt.split + "' is empty");
  {
    const auto [pos, neg] = urlguard::detail::class_counts(view.labels);
    if (pos == 0 || neg == 0) {
      fail(Errc::kDegenerateLabels, "split '" + opt.split + "' has a single class");
    }
  }
  const ModelScores s = score_urls(predictor, view.urls);

  EvalOutcome out;
  out.ensemble = urlguard::evaluate(s.ensemble, view.labels, threshold);
  out.cnn = urlguard::evaluate(s.cnn, view.labels, threshold);
  out.gbdt = urlguard::evaluate(s.gbdt, view.labels, threshold);

  // Validation AUCs, recomputed the same way, back the ensemble claim.
  const SplitView val = select_rows(ds, ds.splits.val);
  nlohmann::ordered_json val_auc;
  if (!val.labels.empty()) {
    const auto [pos, neg] = urlguard::detail::class_counts(val.labels);
    if (pos && neg) {
      const ModelScores vs = score_urls(predictor, val.urls);
      val_auc = {{"ensemble", roc_auc(vs.ensemble, val.labels)},
                 {"cnn", roc_auc(vs.cnn, val.labels)},
                 {"gbdt", roc_auc(vs.gbdt, val.labels)}};
    }
  }

  auto& r = out.report;
  r["model_version"] = bundle->model_version;
  r["dataset_fingerprint"] = ds.fingerprint;
  r["split"] = opt.split;
  r["n"] = view.labels.size();
  r["threshold"] = threshold;
  r["weights"] = {{"w_cnn", bundle->weights.w_cnn}, {"w_gbdt", bundle->weights.w_gbdt}};
  r["models"] = nlohmann::ordered_json::array({detail::row_json("ensemble", out.ensemble),
                                               detail::row_json("cnn", out.cnn),
                                               detail::row_json("gbdt", out.gbdt)});
  const auto& cm = out.ensemble.confusion;
  r["confusion_matrix"] = {{"tp", cm.tp}, {"fp", cm.fp}, {"tn", cm.tn}, {"fn", cm.fn}};
  r["validation_auc"] = val_auc;

  const auto& imp = predictor.importance();
  const auto ranking = gbdt::importance_ranking(imp);
  auto table = nlohmann::ordered_json::array();
  for (std::size_t k = 0; k < std::min<std::size_t>(10, ranking.size()); ++k) {
    table.push_back({{"rank", k + 1},
                     {"feature", kFeatureNames[ranking[k]]},
                     {"importance", imp[ranking[k]]}});
  }
  r["feature_importance"] = std::move(table);

  const auto curves_dir = out_dir / "curves";
  for (const auto& [name, rep] : {std::pair<std::string, const EvalReport*>{"ensemble", &out.ensemble},
                                  {"cnn", &out.cnn},
                                  {"gbdt", &out.gbdt}}) {
    io::write_file_atomic(curves_dir / ("roc_" + name + ".csv"), detail::roc_csv(rep->curves));
    io::write_file_atomic(curves_dir / ("pr_" + name + ".csv"), detail::pr_csv(rep->curves));
    io::write_file_atomic(curves_dir / ("reliability_" + name + ".csv"),
                          detail::reliability_csv(rep->curves));
    io::write_file_atomic(curves_dir / ("histogram_" + name + ".csv"),
                          detail::histogram_csv(rep->curves));
  }
  io::write_file_atomic(curves_dir / "plot.gp", detail::kPlotScript);
  io::write_file_atomic(out_dir / "report.json", r.dump(2) + "\n");
  return out;
}

}  // namespace urlguard::pipeline
