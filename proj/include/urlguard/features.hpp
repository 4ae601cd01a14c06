#pragma once

#include <array>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "urlguard/public_suffix.hpp"
#include "urlguard/url.hpp"

namespace urlguard {

inline constexpr int kFeatureSchemaVersion = 1;
inline constexpr std::size_t kNumFeatures = 36;

inline constexpr std::array<std::string_view, 10> kKeywords = {
    "login", "verify", "secure", "bank", "account",
    "update", "signin", "paypal", "confirm", "password"};

inline constexpr std::array<std::string_view, kNumFeatures> kFeatureNames = {
    "url_length",         "host_length",
    "path_length",        "num_dots",
    "num_path_segments",  "num_query_params",
    "num_digits",         "num_letters",
    "num_special_chars",  "digit_letter_ratio",
    "has_https",          "has_explicit_port",
    "has_fragment",       "num_hyphens",
    "num_at_symbols",     "percent_encoded_fraction",
    "vowel_fraction",     "suspicious_tld",
    "has_ip_host",        "entropy_host",
    "entropy_path",       "num_subdomains",
    "kw_login",           "kw_verify",
    "kw_secure",          "kw_bank",
    "kw_account",         "kw_update",
    "kw_signin",          "kw_paypal",
    "kw_confirm",         "kw_password",
    "num_keywords_total", "length_bucket",
    "query_length",       "dns_resolves"};

// Indices into the v1 schema.
enum Feature : std::size_t {
  kUrlLength = 0,
  kHostLength,
  kPathLength,
  kNumDots,
  kNumPathSegments,
  kNumQueryParams,
  kNumDigits,
  kNumLetters,
  kNumSpecialChars,
  kDigitLetterRatio,
  kHasHttps,
  kHasExplicitPort,
  kHasFragment,
  kNumHyphens,
  kNumAtSymbols,
  kPercentEncodedFraction,
  kVowelFraction,
  kSuspiciousTld,
  kHasIpHost,
  kEntropyHost,
  kEntropyPath,
  kNumSubdomains,
  kKeywordFirst,  // kw_login .. kw_password occupy 22..31
  kNumKeywordsTotal = kKeywordFirst + kKeywords.size(),
  kLengthBucket,
  kQueryLength,
  kDnsResolves,
};
static_assert(kDnsResolves + 1 == kNumFeatures);

struct FeatureSchema {
  int version = kFeatureSchemaVersion;
  std::vector<std::string> names;
  std::vector<bool> missing_allowed;

  static FeatureSchema current() {
    FeatureSchema s;
    for (std::size_t i = 0; i < kNumFeatures; ++i) {
      s.names.emplace_back(kFeatureNames[i]);
      s.missing_allowed.push_back(i == kDnsResolves);
    }
    return s;
  }

  bool operator==(const FeatureSchema&) const = default;
};

inline constexpr double kMissing = std::numeric_limits<double>::quiet_NaN();

inline bool is_missing(double v) { return std::isnan(v); }

struct FeatureVector {
  std::array<double, kNumFeatures> values{};
  int schema_version = kFeatureSchemaVersion;

  double operator[](std::size_t i) const { return values[i]; }
  std::span<const double> span() const { return values; }
};

// Optional externally supplied DNS result. Nothing in this library resolves
// names; callers that have resolver output can pass it through.
struct DnsObservation {
  bool resolves = false;
};

inline double shannon_entropy(std::string_view s) {
  if (s.empty()) return 0.0;
  std::array<std::size_t, 256> counts{};
  for (unsigned char c : s) ++counts[c];
  const double n = static_cast<double>(s.size());
  double h = 0.0;
  for (std::size_t c : counts) {
    if (c == 0) continue;
    const double p = static_cast<double>(c) / n;
    h -= p * std::log2(p);
  }
  // -0.0 for single-symbol strings reads oddly downstream.
  return h == 0.0 ? 0.0 : h;
}

inline constexpr std::array<std::string_view, 10> kDefaultSuspiciousTlds = {
    "xyz", "top", "tk", "ml", "ga", "cf", "gq", "icu", "buzz", "click"};

class SuspiciousTlds {
 public:
  SuspiciousTlds() {
    for (auto t : kDefaultSuspiciousTlds) tlds_.emplace(t);
  }
  explicit SuspiciousTlds(std::unordered_set<std::string> tlds)
      : tlds_(std::move(tlds)) {}

  bool contains(std::string_view host) const {
    while (!host.empty() && host.back() == '.') host.remove_suffix(1);
    const auto dot = host.rfind('.');
    const std::string_view last =
        dot == std::string_view::npos ? host : host.substr(dot + 1);
    return tlds_.count(std::string(last)) > 0;
  }

  const std::unordered_set<std::string>& tlds() const { return tlds_; }

 private:
  std::unordered_set<std::string> tlds_;
};

inline bool is_suspicious_tld(std::string_view host,
                              const SuspiciousTlds& set = SuspiciousTlds{}) {
  return set.contains(host);
}

// Buckets: [1,54] -> 0, [55,75] -> 1, [76,200] -> 2, >= 201 -> 3.
inline int length_bucket(std::size_t url_length) {
  if (url_length <= 54) return 0;
  if (url_length <= 75) return 1;
  if (url_length <= 200) return 2;
  return 3;
}

namespace detail {

constexpr bool is_hex(char c) {
  return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'f') ||
         (c >= 'A' && c <= 'F');
}

inline std::size_t count_nonempty_pieces(std::string_view s, char sep) {
  std::size_t n = 0;
  std::size_t pos = 0;
  while (pos <= s.size()) {
    auto next = s.find(sep, pos);
    if (next == std::string_view::npos) next = s.size();
    if (next > pos) ++n;
    pos = next + 1;
  }
  return n;
}

}  // namespace detail

inline FeatureVector extract_features(
    const ParsedUrl& p, std::optional<DnsObservation> dns = std::nullopt,
    const SuspiciousTlds& tlds = SuspiciousTlds{}) {
  const std::string_view url = p.normalized;
  FeatureVector fv;
  auto& v = fv.values;

  std::size_t digits = 0, letters = 0, dots = 0, hyphens = 0, ats = 0,
              vowels = 0, encoded = 0;
  for (std::size_t i = 0; i < url.size(); ++i) {
    const char c = url[i];
    if (c >= '0' && c <= '9') {
      ++digits;
    } else if ((c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z')) {
      ++letters;
      const char l = detail::ascii_lower(c);
      if (l == 'a' || l == 'e' || l == 'i' || l == 'o' || l == 'u') ++vowels;
    } else if (c == '.') {
      ++dots;
    } else if (c == '-') {
      ++hyphens;
    } else if (c == '@') {
      ++ats;
    }
  }
  for (std::size_t i = 0; i + 2 < url.size();) {
    if (url[i] == '%' && detail::is_hex(url[i + 1]) && detail::is_hex(url[i + 2])) {
      ++encoded;
      i += 3;
    } else {
      ++i;
    }
  }

  const auto len = static_cast<double>(url.size());
  v[kUrlLength] = len;
  v[kHostLength] = static_cast<double>(p.host.size());
  v[kPathLength] = static_cast<double>(p.path.size());
  v[kNumDots] = static_cast<double>(dots);
  v[kNumPathSegments] = static_cast<double>(detail::count_nonempty_pieces(p.path, '/'));
  v[kNumQueryParams] = static_cast<double>(detail::count_nonempty_pieces(p.query, '&'));
  v[kNumDigits] = static_cast<double>(digits);
  v[kNumLetters] = static_cast<double>(letters);
  v[kNumSpecialChars] = static_cast<double>(url.size() - digits - letters);
  v[kDigitLetterRatio] =
      letters == 0 ? 0.0 : static_cast<double>(digits) / static_cast<double>(letters);

  v[kHasHttps] = p.scheme == "https" ? 1.0 : 0.0;
  v[kHasExplicitPort] = p.explicit_port ? 1.0 : 0.0;
  v[kHasFragment] = p.fragment.empty() ? 0.0 : 1.0;
  v[kNumHyphens] = static_cast<double>(hyphens);
  v[kNumAtSymbols] = static_cast<double>(ats);
  v[kPercentEncodedFraction] =
      url.empty() ? 0.0 : std::min(1.0, 3.0 * static_cast<double>(encoded) / len);
  v[kVowelFraction] =
      letters == 0 ? 0.0 : static_cast<double>(vowels) / static_cast<double>(letters);

  const bool ip = is_ip_host(p.host);
  v[kSuspiciousTld] = tlds.contains(p.host) ? 1.0 : 0.0;
  v[kHasIpHost] = ip ? 1.0 : 0.0;
  v[kEntropyHost] = shannon_entropy(p.host);
  v[kEntropyPath] = shannon_entropy(p.path);
  const std::size_t labels = detail::count_nonempty_pieces(p.host, '.');
  v[kNumSubdomains] = (ip || labels < 2) ? 0.0 : static_cast<double>(labels - 2);

  std::size_t keyword_hits = 0;
  for (std::size_t k = 0; k < kKeywords.size(); ++k) {
    const bool hit = url.find(kKeywords[k]) != std::string_view::npos;
    v[kKeywordFirst + k] = hit ? 1.0 : 0.0;
    keyword_hits += hit ? 1 : 0;
  }
  v[kNumKeywordsTotal] = static_cast<double>(keyword_hits);
  v[kLengthBucket] = url.empty() ? 0.0 : static_cast<double>(length_bucket(url.size()));
  v[kQueryLength] = static_cast<double>(p.query.size());
  v[kDnsResolves] = dns ? (dns->resolves ? 1.0 : 0.0) : kMissing;
  return fv;
}

// Shortest decimal form that parses back to the same double.
inline std::string format_double(double v) {
  char buf[32];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

inline void write_features_csv_header(std::ostream& os) {
  for (std::size_t i = 0; i < kNumFeatures; ++i) {
    if (i) os << ',';
    os << kFeatureNames[i];
  }
  os << '\n';
}

// MISSING is written as an empty field.
inline void write_features_csv_row(std::ostream& os, const FeatureVector& fv) {
  for (std::size_t i = 0; i < kNumFeatures; ++i) {
    if (i) os << ',';
    if (!is_missing(fv.values[i])) os << format_double(fv.values[i]);
  }
  os << '\n';
}

}  // namespace urlguard
