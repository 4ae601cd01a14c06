// urlguard: command-line front end for ingest, training, evaluation and
// serving. Exit codes: 0 ok, 2 input error, 3 degenerate data, 1 internal.

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "urlguard/bundle.hpp"
#include "urlguard/dataset.hpp"
#include "urlguard/error.hpp"
#include "urlguard/io.hpp"
#include "urlguard/pipeline.hpp"
#include "urlguard/predictor.hpp"
#include "urlguard/service.hpp"
#include "urlguard/synthetic.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;
using namespace urlguard;

namespace {

int exit_code_for(Errc e) {
  switch (e) {
    case Errc::kDegenerateValidation:
    case Errc::kDegenerateLabels:
    case Errc::kEmptyTraining:
    case Errc::kTooFewGroups:
      return 3;
    default:
      return 2;
  }
}

std::string utc_now() {
  const std::time_t t = std::time(nullptr);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

class Stopwatch {
 public:
  double lap() {
    const auto now = std::chrono::steady_clock::now();
    const double s = std::chrono::duration<double>(now - last_).count();
    last_ = now;
    return s;
  }

 private:
  std::chrono::steady_clock::time_point last_ = std::chrono::steady_clock::now();
};

// Run manifest written beside each command's output.
struct Manifest {
  ordered_json j;

  explicit Manifest(std::string command) {
    j["command"] = std::move(command);
    j["started_at"] = utc_now();
    j["config"] = ordered_json::object();
    j["inputs"] = ordered_json::object();
    j["outputs"] = ordered_json::array();
    j["timings_s"] = ordered_json::object();
  }
  void input(const fs::path& p) {
    j["inputs"][p.string()] = io::hex32(io::crc32_of(io::read_file(p)));
  }
  void output(const fs::path& p) { j["outputs"].push_back(p.string()); }
  void timing(const std::string& stage, double s) { j["timings_s"][stage] = s; }
  void write(const fs::path& path) {
    j["finished_at"] = utc_now();
    io::write_file_atomic(path, j.dump(2) + "\n");
  }
};

void log_line(const std::string& s) { std::cerr << s << '\n'; }

std::shared_ptr<const ModelBundle> load_shared(const fs::path& p) {
  return std::make_shared<const ModelBundle>(load_bundle_file(p));
}

// ---------------------------------------------------------------------------

struct IngestArgs {
  fs::path phishtank, tranco, out;
  std::size_t limit = 50000;
  std::uint64_t seed = 42;
};

int run_ingest(const IngestArgs& a) {
  Manifest m("ingest");
  m.j["seed"] = a.seed;
  m.j["config"] = {{"limit", a.limit}};
  Stopwatch sw;
  m.input(a.phishtank);
  m.input(a.tranco);
  const auto phish = dataset::load_phishtank(io::read_file(a.phishtank));
  const auto benign = dataset::load_tranco(io::read_file(a.tranco), a.limit);
  m.timing("load", sw.lap());
  dataset::CombineStats cs;
  auto rows = dataset::combine(phish.urls, benign.urls, &cs);
  const auto summary = dataset::write_dataset_dir(a.out, std::move(rows), {}, a.seed);
  m.timing("write", sw.lap());
  for (const char* f : {"dataset.csv", "features.csv", "char_seqs.bin", "splits.json"}) {
    m.output(a.out / f);
  }
  ordered_json counts = {{"total", summary.total},
                         {"phishing", summary.phishing},
                         {"valid", summary.valid},
                         {"train", summary.split_sizes[0]},
                         {"val", summary.split_sizes[1]},
                         {"test", summary.split_sizes[2]},
                         {"phishtank_rows", phish.stats.rows},
                         {"phishtank_malformed", phish.stats.malformed},
                         {"phishtank_duplicates", phish.stats.duplicates},
                         {"tranco_rows", benign.stats.rows},
                         {"tranco_malformed", benign.stats.malformed},
                         {"label_conflicts", cs.conflicts},
                         {"cross_source_duplicates", cs.duplicates}};
  m.j["counts"] = counts;
  m.write(a.out / "manifest.json");
  std::cout << counts.dump(2) << '\n';
  return 0;
}

struct TrainArgs {
  fs::path data, out, history;
  std::uint64_t seed = 42;
  std::size_t epochs = 6;
  bool timestamp = false;
};

int run_train(const TrainArgs& a) {
  Manifest m("train");
  m.j["seed"] = a.seed;
  Stopwatch sw;
  const dataset::Dataset ds = dataset::read_dataset_dir(a.data);
  for (const char* f : {"dataset.csv", "features.csv", "char_seqs.bin", "splits.json"}) {
    m.input(a.data / f);
  }
  m.timing("load", sw.lap());

  pipeline::TrainOptions opt;
  opt.seed = a.seed;
  opt.cnn_train.max_epochs = a.epochs;
  if (a.timestamp) opt.timestamp = utc_now();
  m.j["config"] = {{"cnn_epochs", opt.cnn_train.max_epochs},
                   {"cnn_batch_size", opt.cnn_train.batch_size},
                   {"cnn_learning_rate", opt.cnn_train.learning_rate},
                   {"gbdt_learning_rate", opt.gbdt.learning_rate},
                   {"gbdt_max_estimators", opt.gbdt.max_estimators},
                   {"gbdt_num_leaves", opt.gbdt.num_leaves},
                   {"gbdt_early_stop_rounds", opt.gbdt.early_stop_rounds},
                   {"grid_step", opt.grid_step}};
  auto outcome = pipeline::train(ds, opt, log_line);
  m.timing("train", sw.lap());
  for (const auto& w : outcome.warnings) log_line("warning: " + w);

  save_bundle_file(a.out, outcome.bundle);
  const fs::path history = a.history.empty() ? fs::path(a.out.string() + ".history.json") : a.history;
  outcome.history["model_version"] = outcome.bundle.model_version;
  io::write_file_atomic(history, outcome.history.dump(2) + "\n");
  m.timing("save", sw.lap());
  m.output(a.out);
  m.output(history);
  m.j["model_version"] = outcome.bundle.model_version;
  m.write(a.out.string() + ".manifest.json");
  std::cout << outcome.bundle.model_version << '\n';
  return 0;
}

struct EvalArgs {
  fs::path bundle, data, out;
  std::string split = "test";
  std::optional<double> threshold;
};

int run_eval(const EvalArgs& a) {
  Manifest m("eval");
  Stopwatch sw;
  const auto bundle = load_shared(a.bundle);
  const dataset::Dataset ds = dataset::read_dataset_dir(a.data);
  m.input(a.bundle);
  m.input(a.data / "dataset.csv");
  m.input(a.data / "splits.json");
  m.j["config"] = {{"split", a.split}};
  if (a.threshold) m.j["config"]["threshold"] = *a.threshold;
  m.timing("load", sw.lap());
  const auto outcome = pipeline::evaluate(bundle, ds, {a.split, a.threshold}, a.out);
  m.timing("evaluate", sw.lap());
  m.output(a.out / "report.json");
  m.output(a.out / "curves");
  m.write(a.out / "manifest.json");
  ordered_json rows = ordered_json::array();
  for (const auto& r : outcome.report["models"]) rows.push_back(r);
  std::cout << rows.dump(2) << '\n';
  return 0;
}

int run_predict(const fs::path& bundle_path, const std::string& url,
                std::optional<double> threshold) {
  const Predictor predictor(load_shared(bundle_path));
  std::cout << to_json(predictor.predict(url, threshold), false).dump() << '\n';
  return 0;
}

int run_inspect(const fs::path& bundle_path) {
  const std::string bytes = io::read_file(bundle_path);
  const ModelBundle b = load_bundle(bytes);
  ordered_json j;
  j["file"] = bundle_path.string();
  j["bytes"] = bytes.size();
  j["model_version"] = b.model_version;
  j["format_version"] = kBundleFormatVersion;
  auto sections = ordered_json::array();
  for (const auto& [info, payload] : read_sections(bytes)) {
    sections.push_back({{"tag", info.tag}, {"length", info.length}, {"crc32", io::hex32(info.crc)}});
  }
  j["sections"] = std::move(sections);
  j["feature_schema"] = {{"version", b.schema.version}, {"features", b.schema.names.size()}};
  const auto& c = b.cnn.config;
  j["cnn"] = {{"embed_dim", c.embed_dim},
              {"filters", c.conv_filters},
              {"kernels", c.kernel_sizes},
              {"dense", c.dense_hidden},
              {"dropout", c.dropout_rate},
              {"seq_len", c.seq_len},
              {"parameters", b.cnn.parameter_count()}};
  std::size_t nodes = 0;
  for (const auto& t : b.gbdt.trees) nodes += t.nodes.size();
  j["gbdt"] = {{"trees", b.gbdt.trees.size()},
               {"nodes", nodes},
               {"learning_rate", b.gbdt.learning_rate},
               {"base_score", b.gbdt.base_score}};
  j["calibration"] = {{"cnn", {{"a", b.cnn_platt.a}, {"b", b.cnn_platt.b}}},
                      {"gbdt", {{"a", b.gbdt_platt.a}, {"b", b.gbdt_platt.b}}}};
  j["ensemble"] = {{"w_cnn", b.weights.w_cnn}, {"w_gbdt", b.weights.w_gbdt},
                   {"threshold", b.threshold}};
  j["training"] = detail::meta_to_json(b.meta);
  std::cout << j.dump(2) << '\n';
  return 0;
}

struct ServeArgs {
  fs::path bundle;
  std::string host = "0.0.0.0";
  int port = 8080;
  std::optional<double> threshold;
  std::vector<std::string> cors;
  fs::path ui_dir;
  std::size_t threads = 16;
};

std::atomic<bool> g_reload{false};
std::atomic<bool> g_stop{false};

int run_serve(const ServeArgs& a) {
  ServiceConfig cfg;
  cfg.threshold = a.threshold;
  cfg.cors_origins = a.cors;
  cfg.ui_dir = a.ui_dir;
  cfg.threads = a.threads;
  Service service(cfg);
  if (!a.bundle.empty()) {
    service.set_bundle(load_shared(a.bundle));
    log_line("loaded " + a.bundle.string() + " (" + service.predictor()->bundle().model_version + ")");
  } else {
    log_line("no bundle given; /predict answers 503 until one is loaded");
  }

  httplib::Server server;
  service.attach(server);

  std::signal(SIGHUP, [](int) { g_reload = true; });
  std::signal(SIGINT, [](int) { g_stop = true; });
  std::signal(SIGTERM, [](int) { g_stop = true; });
  std::thread watcher([&] {
    while (!g_stop) {
      std::this_thread::sleep_for(std::chrono::milliseconds(100));
      if (g_reload.exchange(false) && !a.bundle.empty()) {
        try {
          service.set_bundle(load_shared(a.bundle));
          log_line("reloaded " + service.predictor()->bundle().model_version);
        } catch (const std::exception& e) {
          log_line(std::string("reload failed, keeping previous model: ") + e.what());
        }
      }
    }
    server.stop();
  });

  log_line("listening on " + a.host + ":" + std::to_string(a.port));
  const bool ok = server.listen(a.host, a.port);
  g_stop = true;
  watcher.join();
  if (!ok) {
    log_line("cannot listen on " + a.host + ":" + std::to_string(a.port));
    return 2;
  }
  return 0;
}

struct SynthArgs {
  fs::path out;
  std::size_t phishing = 2000, benign = 2000;
  std::uint64_t seed = 42;
};

int run_synth(const SynthArgs& a) {
  Manifest m("synth");
  m.j["seed"] = a.seed;
  m.j["config"] = {{"phishing", a.phishing}, {"benign", a.benign}};
  const auto files = synthetic::generate(a.phishing, a.benign, a.seed);
  io::write_file_atomic(a.out / "phishtank.csv", files.phishtank_csv);
  io::write_file_atomic(a.out / "tranco.csv", files.tranco_csv);
  m.output(a.out / "phishtank.csv");
  m.output(a.out / "tranco.csv");
  m.write(a.out / "manifest.json");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"urlguard: hybrid character-CNN and GBDT phishing URL detector"};
  app.require_subcommand(1);

  IngestArgs ingest;
  auto* c_ingest = app.add_subcommand("ingest", "Build a dataset directory from source lists");
  c_ingest->add_option("--phishtank", ingest.phishtank, "PhishTank CSV export")
      ->required()->check(CLI::ExistingFile);
  c_ingest->add_option("--tranco", ingest.tranco, "Tranco rank,domain CSV")
      ->required()->check(CLI::ExistingFile);
  c_ingest->add_option("--limit", ingest.limit, "Top-ranked benign domains to keep")
      ->capture_default_str();
  c_ingest->add_option("--seed", ingest.seed, "Shuffle and split seed")->capture_default_str();
  c_ingest->add_option("--out", ingest.out, "Output directory")->required();

  TrainArgs train;
  auto* c_train = app.add_subcommand("train", "Train both models and write a bundle");
  c_train->add_option("--data", train.data, "Ingested dataset directory")
      ->required()->check(CLI::ExistingDirectory);
  c_train->add_option("--seed", train.seed, "Training seed")->capture_default_str();
  c_train->add_option("--out", train.out, "Bundle path (.phsh)")->required();
  c_train->add_option("--history", train.history, "Training history JSON (default <out>.history.json)");
  c_train->add_option("--epochs", train.epochs, "Maximum CNN epochs")->capture_default_str();
  c_train->add_flag("--timestamp", train.timestamp, "Record the training time in the bundle");

  EvalArgs eval;
  auto* c_eval = app.add_subcommand("eval", "Score a split and write report.json and curves");
  c_eval->add_option("--bundle", eval.bundle, "Model bundle")->required()->check(CLI::ExistingFile);
  c_eval->add_option("--data", eval.data, "Ingested dataset directory")
      ->required()->check(CLI::ExistingDirectory);
  c_eval->add_option("--split", eval.split, "train, val or test")
      ->check(CLI::IsMember({"train", "val", "test"}))->capture_default_str();
  c_eval->add_option("--out", eval.out, "Report directory")->required();
  c_eval->add_option("--threshold", eval.threshold, "Decision threshold override")
      ->check(CLI::Range(0.0, 1.0));

  fs::path predict_bundle;
  std::string predict_url;
  std::optional<double> predict_threshold;
  auto* c_predict = app.add_subcommand("predict", "Score one URL");
  c_predict->add_option("--bundle", predict_bundle, "Model bundle")
      ->envname("PHISH_BUNDLE")->required()->check(CLI::ExistingFile);
  c_predict->add_option("--url", predict_url, "URL to score")->required();
  c_predict->add_option("--threshold", predict_threshold, "Decision threshold override")
      ->check(CLI::Range(0.0, 1.0));

  ServeArgs serve;
  auto* c_serve = app.add_subcommand("serve", "Run the HTTP prediction service");
  c_serve->add_option("--bundle", serve.bundle, "Model bundle")
      ->envname("PHISH_BUNDLE")->check(CLI::ExistingFile);
  c_serve->add_option("--host", serve.host, "Bind address")->capture_default_str();
  c_serve->add_option("--port", serve.port, "Port")
      ->envname("PHISH_PORT")->check(CLI::Range(0, 65535))->capture_default_str();
  c_serve->add_option("--threshold", serve.threshold, "Decision threshold override")
      ->check(CLI::Range(0.0, 1.0));
  c_serve->add_option("--cors-origin", serve.cors, "Allowed CORS origin (repeatable, * for any)");
  c_serve->add_option("--ui-dir", serve.ui_dir, "Static files served under /ui/")
      ->check(CLI::ExistingDirectory);
  c_serve->add_option("--threads", serve.threads, "Worker threads")->capture_default_str();

  fs::path inspect_bundle;
  auto* c_inspect = app.add_subcommand("inspect", "Print a bundle manifest");
  c_inspect->add_option("--bundle", inspect_bundle, "Model bundle")
      ->required()->check(CLI::ExistingFile);

  SynthArgs synth;
  auto* c_synth = app.add_subcommand("synth", "Write a seeded synthetic corpus");
  c_synth->add_option("--out", synth.out, "Output directory")->required();
  c_synth->add_option("--phishing", synth.phishing, "Phishing rows")->capture_default_str();
  c_synth->add_option("--benign", synth.benign, "Benign rows")->capture_default_str();
  c_synth->add_option("--seed", synth.seed, "Generator seed")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*c_ingest) return run_ingest(ingest);
    if (*c_train) return run_train(train);
    if (*c_eval) return run_eval(eval);
    if (*c_predict) return run_predict(predict_bundle, predict_url, predict_threshold);
    if (*c_serve) return run_serve(serve);
    if (*c_inspect) return run_inspect(inspect_bundle);
    if (*c_synth) return run_synth(synth);
  } catch (const Error& e) {
    std::cerr << "error [" << e.code_name() << "]: " << e.what() << '\n';
    return exit_code_for(e.code());
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error [Io]: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
