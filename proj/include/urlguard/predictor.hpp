#pragma once

#include <nlohmann/json.hpp>

#include <chrono>
#include <cstddef>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "urlguard/bundle.hpp"
#include "urlguard/calibration.hpp"
#include "urlguard/char_encoder.hpp"
#include "urlguard/cnn.hpp"
#include "urlguard/ensemble.hpp"
#include "urlguard/features.hpp"
#include "urlguard/gbdt.hpp"
#include "urlguard/url.hpp"

namespace urlguard {

struct TopFeature {
  std::string name;
  double value = 0.0;  // NaN when missing
  double importance = 0.0;
};

struct Prediction {
  std::string normalized_url;
  bool phishing = false;
  double probability = 0.0;
  double p_cnn = 0.0;
  double p_gbdt = 0.0;
  EnsembleWeights weights;
  double threshold = 0.5;
  std::vector<TopFeature> top_features;
  double latency_ms = 0.0;
  std::string model_version;

  std::string_view label() const { return phishing ? "phishing" : "valid"; }
};

inline constexpr std::size_t kTopFeatureCount = 5;

inline nlohmann::ordered_json to_json(const Prediction& p, bool with_latency = true) {
  nlohmann::ordered_json top = nlohmann::ordered_json::array();
  for (const auto& f : p.top_features) {
    nlohmann::ordered_json value = nullptr;
    if (!is_missing(f.value)) value = f.value;
    top.push_back({{"name", f.name}, {"value", value}, {"importance", f.importance}});
  }
  nlohmann::ordered_json j;
  j["label"] = p.label();
  j["probability"] = p.probability;
  j["p_cnn"] = p.p_cnn;
  j["p_gbdt"] = p.p_gbdt;
  j["weights"] = {{"w_cnn", p.weights.w_cnn}, {"w_gbdt", p.weights.w_gbdt}};
  j["threshold"] = p.threshold;
  j["top_features"] = std::move(top);
  if (with_latency) j["latency_ms"] = p.latency_ms;
  j["model_version"] = p.model_version;
  return j;
}

// Scores URLs against one immutable bundle. Thread-safe: all state is const.
// Serving never performs DNS lookups, so dns_resolves is always missing here.
class Predictor {
 public:
  explicit Predictor(std::shared_ptr<const ModelBundle> bundle) : bundle_(std::move(bundle)) {
    if (!bundle_) fail(Errc::kInvalidArgument, "predictor needs a bundle");
    importance_ = gbdt::feature_importance(bundle_->gbdt);
    const auto ranking = gbdt::importance_ranking(importance_);
    top_.assign(ranking.begin(),
                ranking.begin() + static_cast<std::ptrdiff_t>(
                                      std::min(kTopFeatureCount, ranking.size())));
  }

  const ModelBundle& bundle() const { return *bundle_; }
  const std::vector<double>& importance() const { return importance_; }

  Prediction predict(std::string_view url,
                     std::optional<double> threshold_override = std::nullopt) const {
    const auto start = std::chrono::steady_clock::now();
    const ParsedUrl parsed = normalize_url(url);
    const FeatureVector fv = extract_features(parsed);
    const CharSequence seq = encode(parsed, bundle_->vocab);

    const cnn::SequenceBatch batch{std::span<const std::uint8_t>(seq.data(), seq.size()),
                                   seq.size()};
    const double cnn_logit = cnn::logits(bundle_->cnn, batch)[0];
    const double gbdt_raw = gbdt::predict_raw_row(bundle_->gbdt, fv.values);

    Prediction p;
    p.normalized_url = parsed.normalized;
    p.p_cnn = apply_platt(bundle_->cnn_platt, cnn_logit);
    p.p_gbdt = apply_platt(bundle_->gbdt_platt, gbdt_raw);
    p.weights = bundle_->weights;
    p.probability = combine(p.weights, p.p_cnn, p.p_gbdt);
    p.threshold = threshold_override.value_or(bundle_->threshold);
    p.phishing = p.probability >= p.threshold;
    for (std::size_t i : top_) {
      p.top_features.push_back({std::string(kFeatureNames[i]), fv.values[i], importance_[i]});
    }
    p.model_version = bundle_->model_version;
    p.latency_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    return p;
  }

 private:
  std::shared_ptr<const ModelBundle> bundle_;
  std::vector<double> importance_;
  std::vector<std::size_t> top_;
};

}  // namespace urlguard
