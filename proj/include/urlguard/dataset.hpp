#pragma once

// Source ingestion (PhishTank / Tranco CSVs), deduplication, grouped
// stratified splitting and the on-disk dataset directory format.

#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <charconv>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "urlguard/char_encoder.hpp"
#include "urlguard/csv.hpp"
#include "urlguard/error.hpp"
#include "urlguard/features.hpp"
#include "urlguard/gbdt.hpp"
#include "urlguard/io.hpp"
#include "urlguard/public_suffix.hpp"
#include "urlguard/rng.hpp"
#include "urlguard/url.hpp"

namespace urlguard::dataset {

enum class Source { kPhishtank, kTranco, kCustom };

inline std::string_view to_string(Source s) {
  switch (s) {
    case Source::kPhishtank: return "phishtank";
    case Source::kTranco: return "tranco";
    case Source::kCustom: return "custom";
  }
  return "custom";
}

inline Source source_from_string(std::string_view s) {
  if (s == "phishtank") return Source::kPhishtank;
  if (s == "tranco") return Source::kTranco;
  if (s == "custom") return Source::kCustom;
  fail(Errc::kMalformedRow, "unknown source '" + std::string(s) + "'");
}

struct LabeledUrl {
  ParsedUrl parsed;
  std::uint8_t label = 0;  // 1 = phishing
  Source source = Source::kCustom;
  std::string group_key;
};

inline LabeledUrl make_labeled(ParsedUrl parsed, std::uint8_t label, Source source) {
  LabeledUrl out;
  out.group_key = registrable_domain(parsed);
  out.parsed = std::move(parsed);
  out.label = label;
  out.source = source;
  return out;
}

struct LoadStats {
  std::size_t rows = 0;
  std::size_t loaded = 0;
  std::size_t duplicates = 0;
  std::size_t malformed = 0;
};

struct LoadResult {
  std::vector<LabeledUrl> urls;
  LoadStats stats;
};

namespace detail {

inline std::string lower_trim(std::string_view s) {
  s = urlguard::detail::trim(s);
  std::string out;
  for (char c : s) out.push_back(urlguard::detail::ascii_lower(c));
  return out;
}

inline bool is_blank(std::string_view text) {
  return urlguard::detail::trim(text).empty();
}

}  // namespace detail

// PhishTank export: a header row with a `url` column anywhere.
inline LoadResult load_phishtank(std::string_view csv_text) {
  if (detail::is_blank(csv_text)) fail(Errc::kEmptyFile, "PhishTank file is empty");
  const auto rows = csv::parse(csv_text);
  if (rows.empty()) fail(Errc::kEmptyFile, "PhishTank file is empty");
  std::size_t url_col = rows[0].size();
  for (std::size_t i = 0; i < rows[0].size(); ++i) {
    if (detail::lower_trim(rows[0][i]) == "url") url_col = i;
  }
  if (url_col == rows[0].size()) {
    fail(Errc::kMissingColumn, "PhishTank file has no 'url' column");
  }
  LoadResult out;
  std::unordered_set<std::string> seen;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    ++out.stats.rows;
    if (url_col >= rows[r].size()) {
      ++out.stats.malformed;
      continue;
    }
    try {
      ParsedUrl p = normalize_url(rows[r][url_col]);
      if (!seen.insert(p.normalized).second) {
        ++out.stats.duplicates;
        continue;
      }
      out.urls.push_back(make_labeled(std::move(p), 1, Source::kPhishtank));
    } catch (const Error&) {
      ++out.stats.malformed;
    }
  }
  out.stats.loaded = out.urls.size();
  return out;
}

// Tranco list: `rank,domain` rows. The `limit` best ranks become
// "https://<domain>" benign URLs.
inline LoadResult load_tranco(std::string_view csv_text, std::size_t limit) {
  if (detail::is_blank(csv_text)) fail(Errc::kEmptyFile, "Tranco file is empty");
  const auto rows = csv::parse(csv_text);
  struct Entry {
    long rank;
    std::size_t order;
    std::string domain;
  };
  std::vector<Entry> entries;
  LoadResult out;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto& row = rows[r];
    if (r == 0 && !row.empty() && detail::lower_trim(row[0]) == "rank") continue;
    ++out.stats.rows;
    long rank = 0;
    const std::string_view rank_text =
        row.empty() ? std::string_view{} : urlguard::detail::trim(row[0]);
    const auto [ptr, ec] =
        std::from_chars(rank_text.data(), rank_text.data() + rank_text.size(), rank);
    if (row.size() < 2 || ec != std::errc{} || ptr != rank_text.data() + rank_text.size() ||
        detail::is_blank(row[1])) {
      ++out.stats.malformed;
      continue;
    }
    entries.push_back({rank, r, std::string(urlguard::detail::trim(row[1]))});
  }
  if (out.stats.malformed * 100 > out.stats.rows) {
    fail(Errc::kMalformedRow, std::to_string(out.stats.malformed) + " of " +
                                  std::to_string(out.stats.rows) +
                                  " Tranco rows are malformed (limit 1%)");
  }
  std::stable_sort(entries.begin(), entries.end(),
                   [](const Entry& a, const Entry& b) { return a.rank < b.rank; });
  if (entries.size() > limit) entries.resize(limit);
  std::unordered_set<std::string> seen;
  for (const Entry& e : entries) {
    try {
      ParsedUrl p = normalize_url("https://" + e.domain);
      if (!seen.insert(p.normalized).second) {
        ++out.stats.duplicates;
        continue;
      }
      out.urls.push_back(make_labeled(std::move(p), 0, Source::kTranco));
    } catch (const Error&) {
      ++out.stats.malformed;
    }
  }
  out.stats.loaded = out.urls.size();
  return out;
}

struct CombineStats {
  std::size_t duplicates = 0;
  std::size_t conflicts = 0;  // same URL in both sources; phishing label kept
};

// Phishing rows win collisions with benign rows.
inline std::vector<LabeledUrl> combine(std::vector<LabeledUrl> phishing,
                                       std::vector<LabeledUrl> benign,
                                       CombineStats* stats = nullptr) {
  CombineStats local;
  std::vector<LabeledUrl> out;
  std::unordered_map<std::string, std::uint8_t> seen;
  for (auto* part : {&phishing, &benign}) {
    for (auto& u : *part) {
      const auto [it, inserted] = seen.emplace(u.parsed.normalized, u.label);
      if (!inserted) {
        (it->second != u.label ? local.conflicts : local.duplicates)++;
        continue;
      }
      out.push_back(std::move(u));
    }
  }
  if (stats) *stats = local;
  return out;
}

struct SplitRatios {
  double train = 0.70;
  double val = 0.10;
  double test = 0.20;

  std::array<double, 3> as_array() const { return {train, val, test}; }
};

struct SplitAssignment {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
  std::vector<std::size_t> test;

  std::array<const std::vector<std::size_t>*, 3> parts() const { return {&train, &val, &test}; }
  bool operator==(const SplitAssignment&) const = default;
};

// Whole registrable-domain groups are assigned greedily (largest groups
// first, seeded order among equals) to the split with the largest
// class-weighted deficit against its target counts.
inline SplitAssignment split(std::span<const LabeledUrl> data, SplitRatios ratios,
                             std::uint64_t seed) {
  struct Group {
    std::string key;
    std::vector<std::size_t> rows;
    std::array<std::size_t, 2> by_class{};
  };
  std::map<std::string, Group> by_key;
  std::array<std::size_t, 2> totals{};
  for (std::size_t i = 0; i < data.size(); ++i) {
    Group& g = by_key[data[i].group_key];
    g.key = data[i].group_key;
    g.rows.push_back(i);
    ++g.by_class[data[i].label ? 1 : 0];
    ++totals[data[i].label ? 1 : 0];
  }
  std::array<std::size_t, 2> groups_with{};
  std::vector<Group> groups;
  for (auto& [key, g] : by_key) {
    for (int c = 0; c < 2; ++c) groups_with[c] += g.by_class[c] ? 1 : 0;
    groups.push_back(std::move(g));
  }
  if (groups_with[0] < 10 || groups_with[1] < 10) {
    fail(Errc::kTooFewGroups, "need at least 10 domain groups per class, have " +
                                  std::to_string(groups_with[1]) + " phishing / " +
                                  std::to_string(groups_with[0]) + " valid");
  }
  Rng rng(seed);
  rng.shuffle(groups);
  std::stable_sort(groups.begin(), groups.end(),
                   [](const Group& a, const Group& b) { return a.rows.size() > b.rows.size(); });

  const auto r = ratios.as_array();
  std::array<std::array<double, 2>, 3> target{};
  std::array<std::array<double, 2>, 3> current{};
  for (int s = 0; s < 3; ++s) {
    for (int c = 0; c < 2; ++c) target[s][c] = r[s] * static_cast<double>(totals[c]);
  }
  SplitAssignment out;
  std::array<std::vector<std::size_t>*, 3> dest = {&out.train, &out.val, &out.test};
  for (const Group& g : groups) {
    int best = 0;
    double best_score = 0.0;
    for (int s = 0; s < 3; ++s) {
      double score = 0.0;
      for (int c = 0; c < 2; ++c) {
        score += static_cast<double>(g.by_class[c]) * (target[s][c] - current[s][c]);
      }
      score /= static_cast<double>(g.rows.size());
      if (s == 0 || score > best_score) {
        best = s;
        best_score = score;
      }
    }
    for (int c = 0; c < 2; ++c) current[best][c] += static_cast<double>(g.by_class[c]);
    dest[best]->insert(dest[best]->end(), g.rows.begin(), g.rows.end());
  }
  for (auto* d : dest) std::sort(d->begin(), d->end());
  return out;
}

// In-memory form of an ingested dataset directory.
struct Dataset {
  std::vector<std::string> urls;  // normalized
  std::vector<std::uint8_t> labels;
  std::vector<Source> sources;
  std::vector<std::string> group_keys;
  gbdt::FeatureMatrix features;
  std::vector<std::uint8_t> sequences;  // row-major, seq_len per row
  std::size_t seq_len = kSeqLen;
  SplitAssignment splits;
  std::uint64_t split_seed = 0;
  std::string fingerprint;

  std::size_t size() const { return urls.size(); }
};

inline constexpr std::string_view kSeqMagic = "PSQ1";

inline std::string encode_sequences(std::span<const std::uint8_t> seqs, std::size_t count,
                                    std::size_t seq_len) {
  io::Writer w;
  w.bytes(kSeqMagic);
  w.u32(static_cast<std::uint32_t>(count));
  w.u32(static_cast<std::uint32_t>(seq_len));
  w.bytes(std::string_view(reinterpret_cast<const char*>(seqs.data()), seqs.size()));
  return w.take();
}

inline std::vector<std::uint8_t> decode_sequences(std::string_view bytes, std::size_t* count,
                                                  std::size_t* seq_len) {
  io::Reader r(bytes, Errc::kMalformedRow);
  if (r.bytes(4) != kSeqMagic) fail(Errc::kBadMagic, "char_seqs.bin: bad magic");
  *count = r.u32();
  *seq_len = r.u32();
  const auto body = r.bytes(*count * *seq_len);
  if (!r.done()) fail(Errc::kMalformedRow, "char_seqs.bin: trailing bytes");
  return std::vector<std::uint8_t>(body.begin(), body.end());
}

inline nlohmann::json splits_to_json(const SplitAssignment& s, SplitRatios ratios,
                                     std::uint64_t seed) {
  return nlohmann::json{{"seed", seed},
                        {"ratios", {{"train", ratios.train}, {"val", ratios.val}, {"test", ratios.test}}},
                        {"train", s.train},
                        {"val", s.val},
                        {"test", s.test}};
}

struct IngestSummary {
  std::size_t total = 0;
  std::size_t phishing = 0;
  std::size_t valid = 0;
  std::array<std::size_t, 3> split_sizes{};
};

// Shuffles rows (seeded), splits, and writes dataset.csv, features.csv,
// char_seqs.bin and splits.json into `dir`.
inline IngestSummary write_dataset_dir(const std::filesystem::path& dir,
                                       std::vector<LabeledUrl> rows, SplitRatios ratios,
                                       std::uint64_t seed) {
  Rng rng(mix_seed(seed, 10));
  rng.shuffle(rows);
  const SplitAssignment assignment = split(rows, ratios, mix_seed(seed, 11));

  std::ostringstream dataset_csv, features_csv;
  dataset_csv << "normalized_url,label,source,group_key\n";
  write_features_csv_header(features_csv);
  std::vector<std::uint8_t> seqs;
  seqs.reserve(rows.size() * kSeqLen);
  const CharVocab vocab;
  IngestSummary summary;
  for (const LabeledUrl& u : rows) {
    dataset_csv << csv::escape(u.parsed.normalized) << ',' << int(u.label) << ','
                << to_string(u.source) << ',' << csv::escape(u.group_key) << '\n';
    write_features_csv_row(features_csv, extract_features(u.parsed));
    const CharSequence seq = encode(u.parsed, vocab);
    seqs.insert(seqs.end(), seq.begin(), seq.end());
    (u.label ? summary.phishing : summary.valid)++;
  }
  summary.total = rows.size();
  summary.split_sizes = {assignment.train.size(), assignment.val.size(), assignment.test.size()};

  io::write_file_atomic(dir / "dataset.csv", dataset_csv.str());
  io::write_file_atomic(dir / "features.csv", features_csv.str());
  io::write_file_atomic(dir / "char_seqs.bin", encode_sequences(seqs, rows.size(), kSeqLen));
  io::write_file_atomic(dir / "splits.json",
                        splits_to_json(assignment, ratios, seed).dump(1) + "\n");
  return summary;
}

namespace detail {

inline double parse_double_field(std::string_view s) {
  if (s.empty()) return kMissing;
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size()) {
    fail(Errc::kMalformedRow, "bad numeric field '" + std::string(s) + "'");
  }
  return v;
}

inline std::vector<std::size_t> index_list(const nlohmann::json& j, std::size_t n) {
  std::vector<std::size_t> out = j.get<std::vector<std::size_t>>();
  for (auto i : out) {
    if (i >= n) fail(Errc::kMalformedRow, "split index out of range");
  }
  return out;
}

}  // namespace detail

inline Dataset read_dataset_dir(const std::filesystem::path& dir) {
  Dataset ds;
  const std::string dataset_text = io::read_file(dir / "dataset.csv");
  const std::string splits_text = io::read_file(dir / "splits.json");
  ds.fingerprint = io::hex32(io::crc32_of(dataset_text)) + io::hex32(io::crc32_of(splits_text));

  const auto rows = csv::parse(dataset_text);
  if (rows.empty() || rows[0].size() < 4 || rows[0][0] != "normalized_url") {
    fail(Errc::kMissingColumn, "dataset.csv: expected header normalized_url,label,source,group_key");
  }
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& row = rows[r];
    if (row.size() != 4 || (row[1] != "0" && row[1] != "1")) {
      fail(Errc::kMalformedRow, "dataset.csv: malformed row " + std::to_string(r));
    }
    ds.urls.push_back(row[0]);
    ds.labels.push_back(row[1] == "1" ? 1 : 0);
    ds.sources.push_back(source_from_string(row[2]));
    ds.group_keys.push_back(row[3]);
  }

  const auto feature_rows = csv::parse(io::read_file(dir / "features.csv"));
  if (feature_rows.empty() || feature_rows[0].size() != kNumFeatures) {
    fail(Errc::kSchemaMismatch, "features.csv: header does not match the feature schema");
  }
  for (std::size_t i = 0; i < kNumFeatures; ++i) {
    if (feature_rows[0][i] != kFeatureNames[i]) {
      fail(Errc::kSchemaMismatch, "features.csv: column " + std::to_string(i) + " is '" +
                                      feature_rows[0][i] + "', expected '" +
                                      std::string(kFeatureNames[i]) + "'");
    }
  }
  std::vector<double> values;
  values.reserve(ds.size() * kNumFeatures);
  for (std::size_t r = 1; r < feature_rows.size(); ++r) {
    if (feature_rows[r].size() != kNumFeatures) {
      fail(Errc::kMalformedRow, "features.csv: row " + std::to_string(r) + " width");
    }
    for (const auto& f : feature_rows[r]) values.push_back(detail::parse_double_field(f));
  }
  ds.features = gbdt::FeatureMatrix(kNumFeatures, std::move(values));

  std::size_t count = 0;
  ds.sequences = decode_sequences(io::read_file(dir / "char_seqs.bin"), &count, &ds.seq_len);
  if (ds.features.rows() != ds.size() || count != ds.size()) {
    fail(Errc::kMalformedRow, "dataset.csv, features.csv and char_seqs.bin row counts differ");
  }

  const auto sj = nlohmann::json::parse(splits_text);
  ds.split_seed = sj.at("seed").get<std::uint64_t>();
  ds.splits.train = detail::index_list(sj.at("train"), ds.size());
  ds.splits.val = detail::index_list(sj.at("val"), ds.size());
  ds.splits.test = detail::index_list(sj.at("test"), ds.size());
  return ds;
}

// Rows of `ds` selected by `idx`.
struct SplitView {
  gbdt::FeatureMatrix features;
  std::vector<std::uint8_t> sequences;
  std::vector<std::uint8_t> labels;
  std::vector<std::string> urls;
};

inline SplitView select_rows(const Dataset& ds, std::span<const std::size_t> idx) {
  SplitView v;
  v.features = gbdt::FeatureMatrix(0, 0);
  std::vector<double> values;
  values.reserve(idx.size() * kNumFeatures);
  for (auto i : idx) {
    const auto row = ds.features.row(i);
    values.insert(values.end(), row.begin(), row.end());
    const auto seq = std::span(ds.sequences).subspan(i * ds.seq_len, ds.seq_len);
    v.sequences.insert(v.sequences.end(), seq.begin(), seq.end());
    v.labels.push_back(ds.labels[i]);
    v.urls.push_back(ds.urls[i]);
  }
  v.features = gbdt::FeatureMatrix(kNumFeatures, std::move(values));
  return v;
}

}  // namespace urlguard::dataset
