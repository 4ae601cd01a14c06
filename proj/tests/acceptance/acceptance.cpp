// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails. Tolerances are fixed here, not taken from the command line.
//
// The desk-scale run drives the real CLI binary (ingest -> train -> eval) on
// a seeded synthetic corpus; the serialization, service and determinism
// checks reuse the bundle it produces. The full-data run needs real
// PhishTank and Tranco exports and is skipped unless
// URLGUARD_PHISHTANK_CSV and URLGUARD_TRANCO_CSV point at them.

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <future>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "support/oracles.hpp"
#include "urlguard/bundle.hpp"
#include "urlguard/calibration.hpp"
#include "urlguard/cnn.hpp"
#include "urlguard/ensemble.hpp"
#include "urlguard/features.hpp"
#include "urlguard/gbdt.hpp"
#include "urlguard/io.hpp"
#include "urlguard/metrics.hpp"
#include "urlguard/predictor.hpp"
#include "urlguard/url.hpp"
#include "urlguard/service.hpp"

#ifndef URLGUARD_CLI_PATH
#error "URLGUARD_CLI_PATH must name the urlguard executable"
#endif

namespace fs = std::filesystem;
using namespace urlguard;
using nlohmann::json;

namespace {

struct Verdict {
  enum Kind { kPass, kFail, kSkip } kind = kFail;
  std::string detail;
};

Verdict pass(std::string d) { return {Verdict::kPass, std::move(d)}; }
Verdict fail_with(std::string d) { return {Verdict::kFail, std::move(d)}; }
Verdict check(bool ok, std::string d) { return {ok ? Verdict::kPass : Verdict::kFail, std::move(d)}; }

int g_failures = 0;

void criterion(const std::string& name, const std::function<Verdict()>& body) {
  const auto t0 = std::chrono::steady_clock::now();
  Verdict v;
  try {
    v = body();
  } catch (const std::exception& e) {
    v = fail_with(std::string("exception: ") + e.what());
  }
  const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const char* tag = v.kind == Verdict::kPass ? "PASS" : v.kind == Verdict::kSkip ? "SKIP" : "FAIL";
  if (v.kind == Verdict::kFail) ++g_failures;
  std::printf("%s  %-22s %7.2fs  %s\n", tag, name.c_str(), s, v.detail.c_str());
  std::fflush(stdout);
}

std::string fmt(double v, int digits = 4) {
  std::ostringstream os;
  os.precision(digits);
  os << v;
  return os.str();
}

std::string quote(const fs::path& p) { return "'" + p.string() + "'"; }

// Runs the CLI, returns its exit status and captured stdout.
int run_cli(const std::string& args, std::string* out = nullptr) {
  const std::string cmd = std::string("'") + URLGUARD_CLI_PATH + "' " + args + " 2>>" +
                          quote(fs::temp_directory_path() / "urlguard_acceptance_cli.log");
  FILE* pipe = ::popen(cmd.c_str(), "r");
  if (!pipe) return -1;
  std::string text;
  char buf[4096];
  while (std::size_t n = std::fread(buf, 1, sizeof buf, pipe)) text.append(buf, n);
  const int status = ::pclose(pipe);
  if (out) *out = std::move(text);
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

void require_cli(const std::string& args, std::string* out = nullptr) {
  if (const int rc = run_cli(args, out); rc != 0) {
    throw std::runtime_error("CLI exited " + std::to_string(rc) + ": urlguard " + args);
  }
}

std::vector<std::string> parseable_urls(std::size_t n, std::uint64_t seed) {
  std::vector<std::string> out;
  for (auto& u : oracle::url_corpus(n * 2, seed)) {
    if (out.size() < n && oracle::parse(u)) out.push_back(u);
  }
  return out;
}

json without_latency(json j) {
  j.erase("latency_ms");
  return j;
}

// ---------------------------------------------------------------------------

Verdict feature_oracle() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto urls = parseable_urls(500, 2024);
  std::size_t mismatches = 0;
  double worst_real = 0.0;
  std::array<int, kNumFeatures> nonzero{};
  for (const auto& raw : urls) {
    const auto want = oracle::features(*oracle::parse(raw));
    const auto got = extract_features(normalize_url(raw));
    for (std::size_t i = 0; i < kNumFeatures; ++i) {
      nonzero[i] += got[i] > 0;
      const bool real = i == kDigitLetterRatio || i == kPercentEncodedFraction ||
                        i == kVowelFraction || i == kEntropyHost || i == kEntropyPath;
      if (std::isnan(want[i]) || std::isnan(got[i])) {
        mismatches += std::isnan(want[i]) != std::isnan(got[i]);
      } else if (real) {
        worst_real = std::max(worst_real, std::abs(got[i] - want[i]));
        mismatches += std::abs(got[i] - want[i]) > 1e-9;
      } else {
        mismatches += got[i] != want[i];
      }
    }
  }
  bool coverage = nonzero[kHasIpHost] && nonzero[kHasExplicitPort] && nonzero[kHasFragment] &&
                  nonzero[kPercentEncodedFraction] && nonzero[kSuspiciousTld];
  for (std::size_t k = 0; k < kKeywords.size(); ++k) coverage = coverage && nonzero[kKeywordFirst + k];
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return check(urls.size() == 500 && mismatches == 0 && coverage && secs < 5.0,
               std::to_string(urls.size()) + " urls x 36 features, " + std::to_string(mismatches) +
                   " mismatches, max real err " + fmt(worst_real) +
                   (coverage ? ", all traits covered" : ", COVERAGE GAP") + " (limit 5 s)");
}

Verdict entropy_checks() {
  const bool fixed = shannon_entropy("aaaa") == 0.0 && std::abs(shannon_entropy("ab") - 1.0) < 1e-12 &&
                     std::abs(shannon_entropy("abcdefgh") - 3.0) < 1e-12;
  std::mt19937_64 g(5);
  int broken = 0;
  for (int i = 0; i < 100; ++i) {
    std::string s(1 + g() % 80, ' ');
    for (auto& c : s) c = static_cast<char>(33 + g() % 90);
    const double h = shannon_entropy(s);
    std::shuffle(s.begin(), s.end(), g);
    broken += std::abs(shannon_entropy(s) - h) > 1e-12;
  }
  return check(fixed && broken == 0, std::string("aaaa=0 ab=1 abcdefgh=3 ") + (fixed ? "ok" : "WRONG") +
                                          ", permutation violations " + std::to_string(broken) + "/100");
}

Verdict cnn_gradient_check() {
  const auto t0 = std::chrono::steady_clock::now();
  cnn::CnnConfig cfg;
  cfg.seq_len = 8;
  cfg.embed_dim = 2;
  cfg.conv_filters = {2, 2, 2};
  cfg.kernel_sizes = {3, 2, 2};
  cfg.dense_hidden = 3;
  std::mt19937_64 g(17);
  const std::vector<std::uint8_t> labels = {1, 0, 1, 0, 0, 1};
  std::vector<std::uint8_t> seqs(labels.size() * cfg.seq_len);
  for (auto& v : seqs) v = static_cast<std::uint8_t>(g() % kEmbeddingRows);
  const cnn::SequenceBatch batch{seqs, cfg.seq_len};

  auto params = cnn::CnnParams<double>::glorot(cfg, 1);
  for (int l = 0; l < 3; ++l) params.conv_b[l].setConstant(0.05);
  params.dense_b.setConstant(0.05);
  const std::uint64_t seed = 101;
  const double h = 1e-4;
  const auto analytic = cnn::loss_and_grads(params, batch, labels, seed).grads;
  std::vector<std::span<const double>> grads;
  analytic.for_each_tensor([&](std::string_view, std::span<const double> d) { grads.push_back(d); });
  std::vector<std::span<double>> slots;
  params.for_each_tensor([&](std::string_view, std::span<double> d) { slots.push_back(d); });
  double worst = 0.0;
  std::size_t checked = 0;
  for (std::size_t t = 0; t < slots.size(); ++t) {
    for (std::size_t i = 0; i < slots[t].size(); ++i) {
      const double orig = slots[t][i];
      slots[t][i] = orig + h;
      const double up = cnn::loss_and_grads(params, batch, labels, seed).loss;
      slots[t][i] = orig - h;
      const double down = cnn::loss_and_grads(params, batch, labels, seed).loss;
      slots[t][i] = orig;
      const double numeric = (up - down) / (2 * h);
      const double scale = std::max(std::abs(grads[t][i]), std::abs(numeric));
      const double diff = std::abs(grads[t][i] - numeric);
      worst = std::max(worst, scale < 1e-7 ? diff * 1e3 : diff / scale);
      ++checked;
    }
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return check(checked == params.parameter_count() && worst < 1e-4 && secs < 30.0,
               std::to_string(checked) + " parameters, max relative error " + fmt(worst, 3) +
                   " (limit 1e-4, 30 s)");
}

Verdict gbdt_oracle() {
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> u(-1.0, 1.0), coin(0.0, 1.0);
  int agree = 0;
  for (int trial = 0; trial < 20; ++trial) {
    gbdt::FeatureMatrix x(10, 4);
    std::vector<double> g, h;
    for (std::size_t r = 0; r < 10; ++r) {
      for (std::size_t c = 0; c < 4; ++c) {
        double v = c == 0 ? std::round(u(rng) * 2.0) : u(rng);
        if (trial % 2 && coin(rng) < 0.2) v = std::nan("");
        x(r, c) = v;
      }
      g.push_back(u(rng));
      h.push_back(0.05 + coin(rng) * 0.25);
    }
    gbdt::GbdtConfig cfg;
    cfg.num_leaves = 2;
    cfg.min_samples_leaf = 1 + static_cast<std::size_t>(trial % 3);
    const auto tree = gbdt::grow_tree(x, g, h, cfg);
    const auto want = oracle::best_stump(x, g, h, cfg.lambda, cfg.min_samples_leaf);
    if (want.feature < 0) {
      agree += tree.nodes.size() == 1;
    } else {
      agree += tree.nodes.size() == 3 && tree.nodes[0].feature == want.feature &&
               tree.nodes[0].threshold == want.threshold &&
               tree.nodes[0].missing_goes_left == want.missing_left;
    }
  }

  std::mt19937_64 data_rng(1);
  std::normal_distribution<double> n(0.0, 1.0);
  gbdt::FeatureMatrix x(500, 5);
  std::vector<std::uint8_t> y(500);
  for (std::size_t r = 0; r < 500; ++r) {
    for (std::size_t c = 0; c < 5; ++c) x(r, c) = n(data_rng);
    y[r] = 1.5 * x(r, 0) - x(r, 1) + 0.7 * n(data_rng) > 0;
  }
  gbdt::GbdtConfig cfg;
  cfg.max_estimators = 50;
  cfg.early_stop_rounds = 1000;
  cfg.num_leaves = 16;
  cfg.min_samples_leaf = 5;
  cfg.learning_rate = 0.1;
  const auto fit = gbdt::fit(x, y, x, y, cfg);
  int increases = 0;
  for (std::size_t i = 1; i < fit.history.size(); ++i) {
    increases += fit.history[i].train_loss > fit.history[i - 1].train_loss;
  }
  return check(agree == 20 && fit.history.size() == 50 && increases == 0,
               "stump choice agrees " + std::to_string(agree) + "/20, loss increases " +
                   std::to_string(increases) + " over " + std::to_string(fit.history.size()) +
                   " rounds (" + fmt(fit.history.front().train_loss) + " -> " +
                   fmt(fit.history.back().train_loss) + ")");
}

Verdict auc_oracle() {
  std::mt19937_64 g(31);
  std::normal_distribution<double> noise(0.0, 1.0);
  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 2 + g() % 499;
    std::vector<double> s;
    std::vector<std::uint8_t> y;
    const bool grid = trial % 2 == 0;
    for (std::size_t i = 0; i < n; ++i) {
      y.push_back(i < 2 ? static_cast<std::uint8_t>(i) : static_cast<std::uint8_t>(g() % 2));
      double v = noise(g) + 0.3 * (trial % 5) * y.back();
      if (grid) v = std::round(v * 2.0) / 2.0;
      s.push_back(v);
    }
    worst = std::max(worst, std::abs(roc_auc(s, y) - oracle::pairwise_auc(s, y)));
  }
  return check(worst <= 1e-9, "50 instances, max |rank - pairwise| " + fmt(worst, 3) + " (limit 1e-9)");
}

Verdict calibration_checks() {
  std::mt19937_64 g(41);
  std::normal_distribution<double> noise(0.0, 1.0);
  int rank_changes = 0;
  double worst_flip = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> s;
    std::vector<std::uint8_t> y;
    for (int i = 0; i < 400; ++i) {
      y.push_back(i < 2 ? static_cast<std::uint8_t>(i) : static_cast<std::uint8_t>(g() % 2));
      s.push_back(noise(g) + 1.5 * y.back());
    }
    const PlattParams p = fit_platt(s, y);
    rank_changes += roc_auc(apply_platt(p, s), y) != roc_auc(s, y);
    for (auto& v : y) v = !v;
    const PlattParams q = fit_platt(s, y);
    worst_flip = std::max({worst_flip, std::abs(q.a + p.a), std::abs(q.b + p.b)});
  }
  return check(rank_changes == 0 && worst_flip <= 1e-6,
               "AUC changed in " + std::to_string(rank_changes) + "/20 fits, label-flip max |(a,b)+(a',b')| " +
                   fmt(worst_flip, 3) + " (limit 1e-6)");
}

Verdict ensemble_checks() {
  const bool arithmetic = std::abs(combine(EnsembleWeights{0.6, 0.4}, 0.9, 0.4) - 0.70) < 1e-12;
  std::mt19937_64 g(51);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  int held = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 50 + g() % 400;
    std::vector<double> a, b;
    std::vector<std::uint8_t> y;
    for (std::size_t i = 0; i < n; ++i) {
      y.push_back(i < 2 ? static_cast<std::uint8_t>(i) : static_cast<std::uint8_t>(g() % 2));
      a.push_back(std::min(1.0, u(g) * 0.8 + (y.back() ? 0.2 * (trial % 3) : 0.0)));
      b.push_back(std::min(1.0, u(g) * 0.7 + (y.back() ? 0.1 * (trial % 4) : 0.0)));
    }
    const auto r = grid_search_weight(a, b, y);
    held += r.best_auc >= std::max(roc_auc(a, y), roc_auc(b, y));
  }
  return check(arithmetic && held == 20, std::string("0.6*0.9+0.4*0.4=0.70 ") + (arithmetic ? "ok" : "WRONG") +
                                             ", grid AUC >= max(individual) on " + std::to_string(held) + "/20 sets");
}

// Shared state produced by the desk-scale run.
struct DeskRun {
  fs::path dir;
  fs::path bundle;
  bool ok = false;
};

Verdict desk_end_to_end(DeskRun& run) {
  const auto t0 = std::chrono::steady_clock::now();
  const fs::path d = run.dir;
  require_cli("synth --out " + quote(d / "raw") + " --phishing 2000 --benign 2000 --seed 42");
  require_cli("ingest --phishtank " + quote(d / "raw" / "phishtank.csv") + " --tranco " +
              quote(d / "raw" / "tranco.csv") + " --seed 42 --out " + quote(d / "data"));
  require_cli("train --data " + quote(d / "data") + " --seed 42 --out " + quote(d / "model.phsh"));
  require_cli("eval --bundle " + quote(d / "model.phsh") + " --data " + quote(d / "data") +
              " --split test --out " + quote(d / "eval"));
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  run.bundle = d / "model.phsh";

  const json report = json::parse(io::read_file(d / "eval" / "report.json"));
  const json& ens = report.at("models").at(0);
  const double acc = ens.at("accuracy").get<double>();
  const double auc = ens.at("roc_auc").get<double>();
  const json& val = report.at("validation_auc");
  const double v_ens = val.at("ensemble").get<double>();
  const double v_cnn = val.at("cnn").get<double>();
  const double v_gbdt = val.at("gbdt").get<double>();
  const std::size_t n = report.at("n").get<std::size_t>();
  run.ok = true;
  return check(acc >= 0.95 && auc >= 0.98 && v_ens >= v_cnn && v_ens >= v_gbdt && secs < 300.0,
               "4000 urls, test n=" + std::to_string(n) + " acc " + fmt(acc) + " (>=0.95), ROC-AUC " +
                   fmt(auc) + " (>=0.98), val AUC ens/cnn/gbdt " + fmt(v_ens) + "/" + fmt(v_cnn) +
                   "/" + fmt(v_gbdt) + ", w_cnn " + fmt(report.at("weights").at("w_cnn").get<double>(), 3) +
                   " (limit 300 s)");
}

Verdict full_data(const fs::path& dir) {
  const char* pt = std::getenv("URLGUARD_PHISHTANK_CSV");
  const char* tr = std::getenv("URLGUARD_TRANCO_CSV");
  if (!pt || !tr) {
    return {Verdict::kSkip, "set URLGUARD_PHISHTANK_CSV and URLGUARD_TRANCO_CSV to run (not part of CI)"};
  }
  require_cli("ingest --phishtank " + quote(pt) + " --tranco " + quote(tr) + " --seed 42 --out " +
              quote(dir / "data"));
  require_cli("train --data " + quote(dir / "data") + " --seed 42 --out " + quote(dir / "model.phsh"));
  require_cli("eval --bundle " + quote(dir / "model.phsh") + " --data " + quote(dir / "data") +
              " --split test --out " + quote(dir / "eval"));
  const json report = json::parse(io::read_file(dir / "eval" / "report.json"));
  const double acc = report["models"][0]["accuracy"].get<double>();
  const double auc = report["models"][0]["roc_auc"].get<double>();
  return check(acc >= 0.99 && auc >= 0.995,
               "test acc " + fmt(acc, 5) + " (>=0.99), ROC-AUC " + fmt(auc, 5) + " (>=0.995)");
}

Verdict serialization(const DeskRun& run) {
  if (!run.ok) return fail_with("desk-scale bundle unavailable");
  const std::string bytes = io::read_file(run.bundle);
  const ModelBundle loaded = load_bundle(bytes);
  const std::string again = save_bundle(loaded);
  const auto in_memory = std::make_shared<const ModelBundle>(loaded);

  // Round trip through a second file written from the loaded copy.
  const fs::path copy = run.dir / "resaved.phsh";
  ModelBundle resaved = loaded;
  save_bundle_file(copy, resaved);
  const Predictor a(in_memory);
  const Predictor b(std::make_shared<const ModelBundle>(load_bundle_file(copy)));
  std::size_t differ = 0;
  const auto urls = parseable_urls(1000, 77);
  for (const auto& u : urls) {
    const auto p = a.predict(u);
    const auto q = b.predict(u);
    differ += std::bit_cast<std::uint64_t>(p.probability) != std::bit_cast<std::uint64_t>(q.probability) ||
              std::bit_cast<std::uint64_t>(p.p_cnn) != std::bit_cast<std::uint64_t>(q.p_cnn) ||
              std::bit_cast<std::uint64_t>(p.p_gbdt) != std::bit_cast<std::uint64_t>(q.p_gbdt);
  }
  return check(again == bytes && differ == 0 && urls.size() == 1000,
               std::string("save->load->save ") + (again == bytes ? "byte-identical" : "DIFFERS") + " (" +
                   std::to_string(bytes.size()) + " bytes), " + std::to_string(differ) +
                   "/1000 predictions differ bitwise");
}

Verdict service_checks(const DeskRun& run) {
  if (!run.ok) return fail_with("desk-scale bundle unavailable");
  Service service;
  auto bundle = std::make_shared<const ModelBundle>(load_bundle_file(run.bundle));
  service.set_bundle(bundle);
  httplib::Server server;
  service.attach(server);
  const int port = server.bind_to_any_port("127.0.0.1");
  std::thread listener([&] { server.listen_after_bind(); });
  server.wait_until_ready();
  struct Stop {
    httplib::Server& s;
    std::thread& t;
    ~Stop() {
      s.stop();
      t.join();
    }
  } stop{server, listener};

  auto post = [&](const std::string& url) {
    httplib::Client c("127.0.0.1", port);
    auto r = c.Post("/predict", json{{"url", url}}.dump(), "application/json");
    if (!r || r->status != 200) throw std::runtime_error("predict request failed for " + url);
    return json::parse(r->body);
  };

  const auto urls = parseable_urls(1000, 123);
  std::vector<double> latency;
  std::vector<json> serial;
  {
    httplib::Client c("127.0.0.1", port);
    for (const auto& u : urls) {
      auto r = c.Post("/predict", json{{"url", u}}.dump(), "application/json");
      if (!r || r->status != 200) throw std::runtime_error("sequential request failed");
      json j = json::parse(r->body);
      latency.push_back(j["latency_ms"].get<double>());
      if (serial.size() < 100) serial.push_back(without_latency(j));
    }
  }
  std::sort(latency.begin(), latency.end());
  const double p95 = latency[static_cast<std::size_t>(0.95 * static_cast<double>(latency.size())) - 1];

  std::vector<std::future<json>> futures;
  for (std::size_t i = 0; i < 100; ++i) {
    futures.push_back(std::async(std::launch::async, [&, i] { return without_latency(post(urls[i])); }));
  }
  std::size_t concurrent_diff = 0;
  for (std::size_t i = 0; i < 100; ++i) concurrent_diff += futures[i].get() != serial[i];

  std::size_t cli_diff = 0;
  for (std::size_t i = 0; i < 10; ++i) {
    std::string out;
    require_cli("predict --bundle " + quote(run.bundle) + " --url " + quote(urls[i * 37]), &out);
    const json cli = json::parse(out);
    cli_diff += cli.dump() != without_latency(post(urls[i * 37])).dump();
  }
  return check(p95 < 100.0 && concurrent_diff == 0 && cli_diff == 0,
               "p95 server latency " + fmt(p95, 3) + " ms over 1000 requests (limit 100 ms, desk target 10 ms), " +
                   std::to_string(concurrent_diff) + "/100 concurrent responses differ from serial, " +
                   std::to_string(cli_diff) + "/10 CLI vs HTTP differ");
}

Verdict determinism(const DeskRun& run) {
  if (!run.ok) return fail_with("desk-scale bundle unavailable");
  const fs::path second = run.dir / "model_again.phsh";
  require_cli("train --data " + quote(run.dir / "data") + " --seed 42 --out " + quote(second));
  const bool same = io::read_file(run.bundle) == io::read_file(second);
  return check(same, std::string("two train runs with seed 42: bundles ") +
                         (same ? "byte-identical" : "DIFFER"));
}

}  // namespace

int main() {
  const fs::path root = fs::temp_directory_path() / ("urlguard_acceptance_" + std::to_string(::getpid()));
  fs::remove_all(root);
  fs::create_directories(root);

  criterion("feature-oracle", feature_oracle);
  criterion("entropy", entropy_checks);
  criterion("cnn-gradient-check", cnn_gradient_check);
  criterion("gbdt-oracle", gbdt_oracle);
  criterion("roc-auc-oracle", auc_oracle);
  criterion("calibration", calibration_checks);
  criterion("ensemble", ensemble_checks);

  DeskRun desk{root / "desk", {}, false};
  fs::create_directories(desk.dir);
  criterion("desk-end-to-end", [&] { return desk_end_to_end(desk); });
  criterion("full-data", [&] { return full_data(root / "full"); });
  criterion("serialization", [&] { return serialization(desk); });
  criterion("service", [&] { return service_checks(desk); });
  criterion("determinism", [&] { return determinism(desk); });

  std::error_code ec;
  fs::remove_all(root, ec);
  std::printf("%s: %d criterion(s) failed\n", g_failures ? "FAIL" : "PASS", g_failures);
  return g_failures ? 1 : 0;
}
