#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include <unistd.h>

#include "urlguard/bundle.hpp"
#include "urlguard/dataset.hpp"
#include "urlguard/features.hpp"
#include "urlguard/gbdt.hpp"
#include "urlguard/synthetic.hpp"

namespace fixture {

// Scratch directory removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("urlguard_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

// Labeled URLs drawn from the synthetic generator, phishing first.
inline std::vector<urlguard::dataset::LabeledUrl> synthetic_rows(std::size_t phishing,
                                                                 std::size_t benign,
                                                                 std::uint64_t seed) {
  const auto files = urlguard::synthetic::generate(phishing, benign, seed);
  auto p = urlguard::dataset::load_phishtank(files.phishtank_csv);
  auto t = urlguard::dataset::load_tranco(files.tranco_csv, benign);
  return urlguard::dataset::combine(std::move(p.urls), std::move(t.urls));
}

// A small but complete bundle: a randomly initialized narrow CNN and a GBDT
// fitted for a few rounds on synthetic features. Cheap enough to build per
// test, and its outputs vary across URLs.
inline urlguard::ModelBundle tiny_bundle(std::uint64_t seed = 7) {
  using namespace urlguard;
  ModelBundle b;
  cnn::CnnConfig cfg;
  cfg.embed_dim = 4;
  cfg.conv_filters = {4, 6, 8};
  cfg.kernel_sizes = {3, 4, 5};
  cfg.dense_hidden = 8;
  b.cnn = cnn::CnnParams<double>::glorot(cfg, seed);

  const auto rows = synthetic_rows(150, 150, seed);
  gbdt::FeatureMatrix x;
  std::vector<std::uint8_t> y;
  for (const auto& r : rows) {
    x.append_row(extract_features(r.parsed).values);
    y.push_back(r.label);
  }
  b.gbdt_config.max_estimators = 15;
  b.gbdt_config.num_leaves = 8;
  b.gbdt_config.min_samples_leaf = 5;
  b.gbdt_config.early_stop_rounds = 15;
  b.gbdt = gbdt::fit(x, y, x, y, b.gbdt_config).model;
  b.cnn_platt = {1.3, -0.2};
  b.gbdt_platt = {0.9, 0.1};
  b.weights = EnsembleWeights::from_cnn(0.45);
  b.threshold = 0.5;
  b.meta.seed = seed;
  b.meta.dataset_fingerprint = "fixture";
  return b;
}

inline std::shared_ptr<const urlguard::ModelBundle> tiny_bundle_ptr(std::uint64_t seed = 7) {
  auto b = tiny_bundle(seed);
  b.model_version = urlguard::bundle_version_string(urlguard::save_bundle(b));
  return std::make_shared<const urlguard::ModelBundle>(std::move(b));
}

}  // namespace fixture
