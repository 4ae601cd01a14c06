#pragma once

// Single-file model bundle (.phsh).
//
// Layout: 8-byte magic "PHSHBNDL", u32 format version, then sections until
// end of file. Each section is a 4-byte tag, u64 payload length, payload and
// the payload's CRC32. Integers and doubles are little-endian; doubles are
// stored as raw IEEE-754 bits so a round trip is exact. Unknown tags are
// skipped, which lets newer writers append sections.

#include <nlohmann/json.hpp>

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "urlguard/calibration.hpp"
#include "urlguard/char_encoder.hpp"
#include "urlguard/cnn.hpp"
#include "urlguard/ensemble.hpp"
#include "urlguard/error.hpp"
#include "urlguard/features.hpp"
#include "urlguard/gbdt.hpp"
#include "urlguard/io.hpp"

namespace urlguard {

inline constexpr std::string_view kBundleMagic = "PHSHBNDL";
inline constexpr std::uint32_t kBundleFormatVersion = 1;

struct TrainingMetadata {
  std::uint64_t seed = 0;
  std::string dataset_fingerprint;
  std::string trained_at;  // empty unless the caller supplies a timestamp
  double val_auc_cnn = 0.0;
  double val_auc_gbdt = 0.0;
  double val_auc_ensemble = 0.0;
  std::size_t cnn_best_epoch = 0;
  std::size_t gbdt_best_round = 0;

  bool operator==(const TrainingMetadata&) const = default;
};

struct ModelBundle {
  FeatureSchema schema = FeatureSchema::current();
  CharVocab vocab;
  cnn::CnnParams<double> cnn;
  gbdt::GbdtConfig gbdt_config;
  gbdt::GbdtModel gbdt;
  PlattParams cnn_platt;
  PlattParams gbdt_platt;
  EnsembleWeights weights;
  double threshold = 0.5;
  TrainingMetadata meta;

  // Derived on save/load: "v1-" plus the CRC32 of the serialized file.
  std::string model_version;

  void check_consistent() const {
    if (schema.names.size() != schema.missing_allowed.size()) {
      fail(Errc::kShapeMismatch, "schema names and missing flags differ in length");
    }
    if (gbdt.num_features != schema.names.size()) {
      fail(Errc::kShapeMismatch, "GBDT feature count does not match the schema");
    }
    const auto& c = cnn.config;
    c.validate();
    if (static_cast<std::size_t>(cnn.embedding.rows()) != c.vocab_size ||
        static_cast<std::size_t>(cnn.embedding.cols()) != c.embed_dim ||
        static_cast<std::size_t>(cnn.dense_w.cols()) != c.dense_hidden ||
        static_cast<std::size_t>(cnn.out_w.size()) != c.dense_hidden ||
        cnn.out_b.size() != 1) {
      fail(Errc::kShapeMismatch, "CNN parameters do not match the CNN config");
    }
    for (std::size_t l = 0; l < 3; ++l) {
      if (static_cast<std::size_t>(cnn.conv_w[l].rows()) !=
              c.kernel_sizes[l] * c.conv_in_channels(l) ||
          static_cast<std::size_t>(cnn.conv_w[l].cols()) != c.conv_filters[l] ||
          static_cast<std::size_t>(cnn.conv_b[l].size()) != c.conv_filters[l]) {
        fail(Errc::kShapeMismatch, "CNN convolution shapes do not match the config");
      }
    }
    if (c.vocab_size != kEmbeddingRows) {
      fail(Errc::kShapeMismatch, "CNN vocabulary size does not match the encoder");
    }
    for (const auto& tree : gbdt.trees) {
      if (tree.nodes.empty()) fail(Errc::kShapeMismatch, "empty tree");
      for (const auto& n : tree.nodes) {
        if (n.is_leaf()) continue;
        const auto size = static_cast<std::int32_t>(tree.nodes.size());
        if (static_cast<std::size_t>(n.feature) >= gbdt.num_features || n.left <= 0 ||
            n.right <= 0 || n.left >= size || n.right >= size) {
          fail(Errc::kShapeMismatch, "tree node references are out of range");
        }
      }
    }
  }
};

namespace detail {

inline void put_section(io::Writer& out, std::string_view tag, const std::string& payload) {
  out.bytes(tag);
  out.u64(payload.size());
  out.bytes(payload);
  out.u32(io::crc32_of(payload));
}

inline void write_cnn_params(io::Writer& w, const cnn::CnnParams<double>& p) {
  std::uint32_t count = 0;
  p.for_each_tensor([&](std::string_view, auto) { ++count; });
  w.u32(count);
  auto shape_of = [&](std::string_view name) -> std::vector<std::uint64_t> {
    auto dims = [](const auto& m) {
      return std::vector<std::uint64_t>{static_cast<std::uint64_t>(m.rows()),
                                        static_cast<std::uint64_t>(m.cols())};
    };
    if (name == "embedding") return dims(p.embedding);
    if (name == "dense.weight") return dims(p.dense_w);
    for (std::size_t l = 0; l < 3; ++l) {
      if (name == "conv" + std::to_string(l + 1) + ".weight") return dims(p.conv_w[l]);
    }
    return {};
  };
  p.for_each_tensor([&](std::string_view name, std::span<const double> data) {
    w.str(name);
    auto shape = shape_of(name);
    if (shape.empty()) shape = {static_cast<std::uint64_t>(data.size())};
    w.u32(static_cast<std::uint32_t>(shape.size()));
    for (auto d : shape) w.u64(d);
    for (double v : data) w.f64(v);
  });
}

inline void read_cnn_params(io::Reader& r, cnn::CnnParams<double>& p) {
  std::map<std::string, std::vector<double>> tensors;
  std::map<std::string, std::vector<std::uint64_t>> shapes;
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.str();
    const std::uint32_t ndim = r.u32();
    std::vector<std::uint64_t> shape(ndim);
    std::uint64_t n = 1;
    for (auto& d : shape) {
      d = r.u64();
      n *= d;
    }
    if (n * 8 > r.remaining()) fail(Errc::kChecksumMismatch, "tensor larger than its section");
    std::vector<double> data(n);
    for (auto& v : data) v = r.f64();
    shapes[name] = std::move(shape);
    tensors[name] = std::move(data);
  }
  p.for_each_tensor([&](std::string_view name, std::span<double> dst) {
    const auto it = tensors.find(std::string(name));
    if (it == tensors.end() || it->second.size() != dst.size()) {
      fail(Errc::kShapeMismatch, "CNN tensor '" + std::string(name) + "' missing or misshapen");
    }
    std::copy(it->second.begin(), it->second.end(), dst.begin());
  });
}

inline nlohmann::json meta_to_json(const TrainingMetadata& m) {
  nlohmann::json j{{"seed", m.seed},
                   {"dataset_fingerprint", m.dataset_fingerprint},
                   {"val_auc_cnn", m.val_auc_cnn},
                   {"val_auc_gbdt", m.val_auc_gbdt},
                   {"val_auc_ensemble", m.val_auc_ensemble},
                   {"cnn_best_epoch", m.cnn_best_epoch},
                   {"gbdt_best_round", m.gbdt_best_round}};
  if (!m.trained_at.empty()) j["trained_at"] = m.trained_at;
  return j;
}

inline TrainingMetadata meta_from_json(const nlohmann::json& j) {
  TrainingMetadata m;
  m.seed = j.value("seed", std::uint64_t{0});
  m.dataset_fingerprint = j.value("dataset_fingerprint", std::string{});
  m.trained_at = j.value("trained_at", std::string{});
  m.val_auc_cnn = j.value("val_auc_cnn", 0.0);
  m.val_auc_gbdt = j.value("val_auc_gbdt", 0.0);
  m.val_auc_ensemble = j.value("val_auc_ensemble", 0.0);
  m.cnn_best_epoch = j.value("cnn_best_epoch", std::size_t{0});
  m.gbdt_best_round = j.value("gbdt_best_round", std::size_t{0});
  return m;
}

}  // namespace detail

inline std::string save_bundle(const ModelBundle& b) {
  b.check_consistent();
  io::Writer out;
  out.bytes(kBundleMagic);
  out.u32(kBundleFormatVersion);

  {
    io::Writer w;
    w.u32(static_cast<std::uint32_t>(b.schema.version));
    w.u32(static_cast<std::uint32_t>(b.schema.names.size()));
    for (std::size_t i = 0; i < b.schema.names.size(); ++i) {
      w.str(b.schema.names[i]);
      w.u8(b.schema.missing_allowed[i] ? 1 : 0);
    }
    detail::put_section(out, "SCHM", w.take());
  }
  {
    io::Writer w;
    w.str(b.vocab.symbols());
    w.u8(kPadIndex);
    w.u8(kUnknownIndex);
    detail::put_section(out, "VOCB", w.take());
  }
  {
    const auto& c = b.cnn.config;
    io::Writer w;
    w.u64(c.embed_dim);
    for (auto f : c.conv_filters) w.u64(f);
    for (auto k : c.kernel_sizes) w.u64(k);
    w.u64(c.dense_hidden);
    w.f64(c.dropout_rate);
    w.u64(c.seq_len);
    w.u64(c.vocab_size);
    detail::put_section(out, "CNNC", w.take());
  }
  {
    io::Writer w;
    detail::write_cnn_params(w, b.cnn);
    detail::put_section(out, "CNNP", w.take());
  }
  {
    const auto& c = b.gbdt_config;
    io::Writer w;
    w.f64(c.learning_rate);
    w.u64(c.max_estimators);
    w.u64(c.num_leaves);
    w.u64(c.min_samples_leaf);
    w.u64(c.early_stop_rounds);
    w.f64(c.lambda);
    w.u64(c.seed);
    detail::put_section(out, "GBDC", w.take());
  }
  {
    io::Writer w;
    w.u64(b.gbdt.num_features);
    w.f64(b.gbdt.base_score);
    w.f64(b.gbdt.learning_rate);
    w.u32(static_cast<std::uint32_t>(b.gbdt.trees.size()));
    for (const auto& t : b.gbdt.trees) {
      w.u32(static_cast<std::uint32_t>(t.nodes.size()));
      for (const auto& n : t.nodes) {
        w.u32(static_cast<std::uint32_t>(n.feature));
        w.f64(n.threshold);
        w.u8(n.missing_goes_left ? 1 : 0);
        w.u32(static_cast<std::uint32_t>(n.left));
        w.u32(static_cast<std::uint32_t>(n.right));
        w.f64(n.value);
        w.f64(n.gain);
        w.u32(n.count);
      }
    }
    detail::put_section(out, "GBDM", w.take());
  }
  {
    io::Writer w;
    w.f64(b.cnn_platt.a);
    w.f64(b.cnn_platt.b);
    w.f64(b.gbdt_platt.a);
    w.f64(b.gbdt_platt.b);
    detail::put_section(out, "CALB", w.take());
  }
  {
    io::Writer w;
    w.f64(b.weights.w_cnn);
    w.f64(b.weights.w_gbdt);
    w.f64(b.threshold);
    detail::put_section(out, "ENSM", w.take());
  }
  detail::put_section(out, "META", detail::meta_to_json(b.meta).dump());
  return out.take();
}

inline std::string bundle_version_string(std::string_view bytes) {
  return "v" + std::to_string(kBundleFormatVersion) + "-" + io::hex32(io::crc32_of(bytes));
}

struct SectionInfo {
  std::string tag;
  std::uint64_t length = 0;
  std::uint32_t crc = 0;
};

// Splits a bundle file into verified sections.
inline std::vector<std::pair<SectionInfo, std::string_view>> read_sections(std::string_view bytes) {
  if (bytes.size() < kBundleMagic.size() || bytes.substr(0, kBundleMagic.size()) != kBundleMagic) {
    fail(Errc::kBadMagic, "not a model bundle (bad magic)");
  }
  io::Reader r(bytes.substr(kBundleMagic.size()), Errc::kBadMagic);
  const std::uint32_t version = r.u32();
  if (version != kBundleFormatVersion) {
    fail(Errc::kVersionUnsupported, "bundle format version " + std::to_string(version) +
                                        " is not supported");
  }
  io::Reader sections(bytes.substr(kBundleMagic.size() + 4), Errc::kChecksumMismatch);
  std::vector<std::pair<SectionInfo, std::string_view>> out;
  while (!sections.done()) {
    SectionInfo info;
    info.tag = std::string(sections.bytes(4));
    info.length = sections.u64();
    if (info.length > sections.remaining()) {
      fail(Errc::kChecksumMismatch, "section " + info.tag + " is truncated");
    }
    const std::string_view payload = sections.bytes(info.length);
    info.crc = sections.u32();
    if (io::crc32_of(payload) != info.crc) {
      fail(Errc::kChecksumMismatch, "section " + info.tag + " failed its CRC32 check");
    }
    out.emplace_back(std::move(info), payload);
  }
  return out;
}

inline ModelBundle load_bundle(std::string_view bytes,
                               int expected_schema_version = kFeatureSchemaVersion) {
  std::map<std::string, std::string_view> sections;
  for (const auto& [info, payload] : read_sections(bytes)) sections.emplace(info.tag, payload);
  for (const char* tag : {"SCHM", "VOCB", "CNNC", "CNNP", "GBDC", "GBDM", "CALB", "ENSM", "META"}) {
    if (!sections.count(tag)) {
      fail(Errc::kChecksumMismatch, std::string("bundle is truncated: missing section ") + tag);
    }
  }
  auto reader = [&](const char* tag) { return io::Reader(sections.at(tag), Errc::kChecksumMismatch); };

  ModelBundle b;
  {
    auto r = reader("SCHM");
    b.schema.version = static_cast<int>(r.u32());
    if (b.schema.version != expected_schema_version) {
      fail(Errc::kSchemaMismatch, "bundle feature schema v" + std::to_string(b.schema.version) +
                                      " but extractor is v" + std::to_string(expected_schema_version));
    }
    const std::uint32_t n = r.u32();
    b.schema.names.clear();
    b.schema.missing_allowed.clear();
    for (std::uint32_t i = 0; i < n; ++i) {
      b.schema.names.push_back(r.str());
      b.schema.missing_allowed.push_back(r.u8() != 0);
    }
    if (expected_schema_version == kFeatureSchemaVersion &&
        !(b.schema == FeatureSchema::current())) {
      fail(Errc::kSchemaMismatch, "bundle feature names differ from the extractor's schema");
    }
  }
  {
    auto r = reader("VOCB");
    b.vocab = CharVocab(r.str());
    if (r.u8() != kPadIndex || r.u8() != kUnknownIndex) {
      fail(Errc::kSchemaMismatch, "bundle vocabulary special indices differ");
    }
  }
  {
    auto r = reader("CNNC");
    cnn::CnnConfig c;
    c.embed_dim = r.u64();
    for (auto& f : c.conv_filters) f = r.u64();
    for (auto& k : c.kernel_sizes) k = r.u64();
    c.dense_hidden = r.u64();
    c.dropout_rate = r.f64();
    c.seq_len = r.u64();
    c.vocab_size = r.u64();
    b.cnn = cnn::CnnParams<double>::zeros(c);
    auto pr = reader("CNNP");
    detail::read_cnn_params(pr, b.cnn);
  }
  {
    auto r = reader("GBDC");
    auto& c = b.gbdt_config;
    c.learning_rate = r.f64();
    c.max_estimators = r.u64();
    c.num_leaves = r.u64();
    c.min_samples_leaf = r.u64();
    c.early_stop_rounds = r.u64();
    c.lambda = r.f64();
    c.seed = r.u64();
  }
  {
    auto r = reader("GBDM");
    b.gbdt.num_features = r.u64();
    b.gbdt.base_score = r.f64();
    b.gbdt.learning_rate = r.f64();
    const std::uint32_t trees = r.u32();
    for (std::uint32_t t = 0; t < trees; ++t) {
      gbdt::Tree tree;
      const std::uint32_t nodes = r.u32();
      if (static_cast<std::size_t>(nodes) * 41 > r.remaining()) {
        fail(Errc::kChecksumMismatch, "tree larger than its section");
      }
      tree.nodes.resize(nodes);
      for (auto& n : tree.nodes) {
        n.feature = static_cast<std::int32_t>(r.u32());
        n.threshold = r.f64();
        n.missing_goes_left = r.u8() != 0;
        n.left = static_cast<std::int32_t>(r.u32());
        n.right = static_cast<std::int32_t>(r.u32());
        n.value = r.f64();
        n.gain = r.f64();
        n.count = r.u32();
      }
      b.gbdt.trees.push_back(std::move(tree));
    }
  }
  {
    auto r = reader("CALB");
    b.cnn_platt = {r.f64(), r.f64()};
    b.gbdt_platt = {r.f64(), r.f64()};
  }
  {
    auto r = reader("ENSM");
    b.weights.w_cnn = r.f64();
    b.weights.w_gbdt = r.f64();
    b.threshold = r.f64();
  }
  try {
    b.meta = detail::meta_from_json(nlohmann::json::parse(sections.at("META")));
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::kChecksumMismatch, std::string("bundle metadata is not valid JSON: ") + e.what());
  }
  b.check_consistent();
  b.model_version = bundle_version_string(bytes);
  return b;
}

inline void save_bundle_file(const std::filesystem::path& path, ModelBundle& b) {
  const std::string bytes = save_bundle(b);
  io::write_file_atomic(path, bytes);
  b.model_version = bundle_version_string(bytes);
}

inline ModelBundle load_bundle_file(const std::filesystem::path& path) {
  return load_bundle(io::read_file(path));
}

}  // namespace urlguard
