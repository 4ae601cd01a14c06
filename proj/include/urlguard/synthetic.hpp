#pragma once

// Seeded synthetic corpus in the two input formats the ingester reads: a
// PhishTank-style CSV of phishing URLs and a Tranco-style rank,domain list.
// Phishing rows follow common kit layouts (brand lures, keyword paths,
// raw IP hosts, throwaway TLDs); benign rows are plain registrable domains.
// A small share of each class borrows the other's traits so neither model
// can separate the classes on one feature.

#include <array>
#include <cstddef>
#include <cstdint>
#include <set>
#include <sstream>
#include <string>
#include <string_view>

#include "urlguard/csv.hpp"
#include "urlguard/features.hpp"
#include "urlguard/rng.hpp"

namespace urlguard::synthetic {

struct CorpusFiles {
  std::string phishtank_csv;
  std::string tranco_csv;
};

namespace detail {

inline constexpr std::array<std::string_view, 48> kWords = {
    "alpha",  "river",  "cloud",  "north",  "maple",  "stone",  "pixel",  "orbit",
    "green",  "delta",  "cedar",  "lumen",  "harbor", "atlas",  "ember",  "nova",
    "quartz", "summit", "falcon", "willow", "copper", "zenith", "echo",   "prism",
    "vector", "meadow", "silver", "canyon", "aurora", "beacon", "tundra", "coral",
    "nimbus", "raven",  "solar",  "vertex", "bright", "crest",  "garden", "pilot",
    "ranger", "shadow", "spark",  "tide",   "union",  "valley", "wander", "yonder"};

inline constexpr std::array<std::string_view, 10> kBrands = {
    "paypal", "apple", "amazon", "microsoft", "netflix",
    "chase",  "wellsfargo", "dropbox", "office365", "facebook"};

inline constexpr std::array<std::string_view, 9> kBenignTlds = {
    "com", "org", "net", "io", "de", "co.uk", "edu", "fr", "com.au"};

inline constexpr std::array<std::string_view, 4> kPlainTlds = {"com", "net", "org", "info"};

inline constexpr std::array<std::string_view, 8> kPaths = {
    "wp-includes", "wp-content/uploads", "admin", "includes", "css", "files", "docs", "app"};

inline constexpr std::array<std::string_view, 5> kExt = {".php", ".html", ".htm", "", ".aspx"};

inline std::string digits(Rng& rng, std::size_t n) {
  std::string s;
  for (std::size_t i = 0; i < n; ++i) s.push_back(static_cast<char>('0' + rng.below(10)));
  return s;
}

inline std::string token(Rng& rng, std::size_t n) {
  static constexpr std::string_view kAlnum = "abcdefghijklmnopqrstuvwxyz0123456789";
  std::string s;
  for (std::size_t i = 0; i < n; ++i) s.push_back(kAlnum[rng.below(kAlnum.size())]);
  return s;
}

inline std::string word_domain(Rng& rng) {
  std::string d(rng.pick(kWords));
  if (rng.bernoulli(0.6)) d += rng.pick(kWords);
  if (rng.bernoulli(0.3)) d += digits(rng, 1 + rng.below(3));
  return d;
}

inline std::string keyword(Rng& rng) { return std::string(rng.pick(kKeywords)); }

inline std::string phishing_url(Rng& rng) {
  const std::string scheme = rng.bernoulli(0.35) ? "https://" : "http://";
  const std::string tld = std::string(rng.pick(kDefaultSuspiciousTlds));
  // A few lures are bare domains that look like any benign site.
  if (rng.bernoulli(0.03)) {
    return "https://" + word_domain(rng) + "." + std::string(rng.pick(kPlainTlds));
  }
  switch (rng.below(6)) {
    case 0:  // brand lure on a throwaway TLD
      return scheme + keyword(rng) + "-" + std::string(rng.pick(kBrands)) + "." +
             word_domain(rng) + "." + tld + "/" + keyword(rng) + std::string(rng.pick(kExt));
    case 1:  // raw IPv4 host
      return scheme + std::to_string(1 + rng.below(223)) + "." + std::to_string(rng.below(256)) +
             "." + std::to_string(rng.below(256)) + "." + std::to_string(1 + rng.below(254)) +
             (rng.bernoulli(0.3) ? ":" + std::to_string(8000 + rng.below(1000)) : "") + "/" +
             keyword(rng) + "/" + std::string(rng.pick(kBrands)) + std::string(rng.pick(kExt));
    case 2:  // compromised site hosting a kit deep in its tree
      return scheme + "www." + word_domain(rng) + "." + std::string(rng.pick(kPlainTlds)) + "/" +
             std::string(rng.pick(kPaths)) + "/" + std::string(rng.pick(kBrands)) + "/" +
             keyword(rng) + std::string(rng.pick(kExt)) + "?" + "session=" + token(rng, 16) +
             "&" + keyword(rng) + "=" + digits(rng, 6);
    case 3:  // brand name buried among subdomains
      return scheme + std::string(rng.pick(kBrands)) + ".com." + keyword(rng) + "." +
             word_domain(rng) + "." + tld + "/" + token(rng, 8) + "/" + keyword(rng);
    case 4:  // credentials trick and percent-encoded redirect
      return scheme + std::string(rng.pick(kBrands)) + ".com@" + word_domain(rng) + "." +
             std::string(rng.pick(kPlainTlds)) + "/" + keyword(rng) + "?next=%2F" +
             keyword(rng) + "%3Fid%3D" + digits(rng, 5) + "#" + token(rng, 4);
    default:  // short throwaway, few lexical tells
      return scheme + word_domain(rng) + "-" + token(rng, 4) + "." + tld + "/" + token(rng, 6);
  }
}

inline std::string benign_domain(Rng& rng) {
  std::string d = word_domain(rng);
  // Some legitimate sites carry lure words (securelist, bankrate, ...).
  if (rng.bernoulli(0.08)) d = keyword(rng) + d;
  if (rng.bernoulli(0.1)) d = std::string(rng.pick(kWords)) + "-" + d;
  if (rng.bernoulli(0.04)) return d + "." + std::string(rng.pick(kDefaultSuspiciousTlds));
  return d + "." + std::string(rng.pick(kBenignTlds));
}

}  // namespace detail

// `phishing` and `benign` distinct rows, deterministic in `seed`.
inline CorpusFiles generate(std::size_t phishing, std::size_t benign, std::uint64_t seed) {
  Rng rng(mix_seed(seed, 20));
  CorpusFiles out;

  std::set<std::string> seen;
  std::ostringstream pt;
  pt << "phish_id,url,phish_detail_url,submission_time,verified,verification_time,online,target\n";
  for (std::size_t id = 0; seen.size() < phishing; ++id) {
    std::string url = detail::phishing_url(rng);
    if (!seen.insert(url).second) continue;
    pt << (100000 + id) << ',' << csv::escape(url)
       << ",http://www.phishtank.com/phish_detail.php?phish_id=" << (100000 + id)
       << ",2024-01-01T00:00:00+00:00,yes,2024-01-01T00:10:00+00:00,yes,Other\n";
  }
  out.phishtank_csv = pt.str();

  std::set<std::string> domains;
  std::ostringstream tr;
  std::size_t rank = 0;
  while (domains.size() < benign) {
    std::string d = detail::benign_domain(rng);
    if (!domains.insert(d).second) continue;
    tr << ++rank << ',' << d << '\n';
  }
  out.tranco_csv = tr.str();
  return out;
}

}  // namespace urlguard::synthetic
