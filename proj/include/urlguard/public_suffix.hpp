#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "urlguard/url.hpp"

namespace urlguard {

bool is_ip_host(std::string_view host);

// Public-suffix rule set in the publicsuffix.org text format: one rule per
// line, "//" comments, "*." wildcard and "!" exception rules.
class PublicSuffixList {
 public:
  PublicSuffixList() = default;

  static PublicSuffixList parse(std::string_view text) {
    PublicSuffixList list;
    std::size_t pos = 0;
    while (pos <= text.size()) {
      auto eol = text.find('\n', pos);
      if (eol == std::string_view::npos) eol = text.size();
      std::string_view line = text.substr(pos, eol - pos);
      pos = eol + 1;
      // Rules end at the first whitespace.
      if (const auto ws = line.find_first_of(" \t\r"); ws != std::string_view::npos) {
        line = line.substr(0, ws);
      }
      if (line.empty() || line.starts_with("//")) continue;
      std::string rule;
      for (char c : line) rule.push_back(detail::ascii_lower(c));
      if (rule.starts_with("!")) {
        list.exceptions_.insert(rule.substr(1));
      } else if (rule.starts_with("*.")) {
        list.wildcards_.insert(rule.substr(2));
      } else {
        list.rules_.insert(std::move(rule));
      }
    }
    return list;
  }

  // The snapshot compiled into the library.
  static const PublicSuffixList& bundled() {
    static const PublicSuffixList list = parse(
#include "urlguard/psl_snapshot.inc"
    );
    return list;
  }

  std::size_t rule_count() const {
    return rules_.size() + wildcards_.size() + exceptions_.size();
  }

  // Returns the public suffix of `host`; the implicit "*" rule makes the
  // last label a suffix when nothing else matches.
  std::string_view public_suffix(std::string_view host) const {
    std::vector<std::size_t> starts{0};
    for (std::size_t i = 0; i < host.size(); ++i) {
      if (host[i] == '.') starts.push_back(i + 1);
    }
    // Longest match wins; candidates are scanned from the full host down.
    for (std::size_t k = 0; k < starts.size(); ++k) {
      const std::string_view candidate = host.substr(starts[k]);
      if (contains(exceptions_, candidate)) {
        return k + 1 < starts.size() ? host.substr(starts[k + 1]) : candidate;
      }
      if (contains(rules_, candidate)) return candidate;
      if (k + 1 < starts.size() &&
          contains(wildcards_, host.substr(starts[k + 1]))) {
        return candidate;
      }
    }
    return host.substr(starts.back());
  }

  // eTLD+1. IP literals and single-label hosts pass through unchanged, as
  // does a host that is itself a public suffix.
  std::string registrable_domain(std::string_view host) const {
    if (const auto at = host.rfind('@'); at != std::string_view::npos) {
      host = host.substr(at + 1);
    }
    while (!host.empty() && host.back() == '.') host.remove_suffix(1);
    if (host.empty()) return {};
    if (is_ip_host(host) || host.find('.') == std::string_view::npos) {
      return std::string(host);
    }
    const std::string_view suffix = public_suffix(host);
    if (suffix.size() >= host.size()) return std::string(host);
    const std::string_view head = host.substr(0, host.size() - suffix.size() - 1);
    const auto dot = head.rfind('.');
    const std::string_view label =
        dot == std::string_view::npos ? head : head.substr(dot + 1);
    if (label.empty()) return std::string(suffix);
    std::string out(label);
    out += '.';
    out += suffix;
    return out;
  }

 private:
  struct Hash {
    using is_transparent = void;
    std::size_t operator()(std::string_view s) const {
      return std::hash<std::string_view>{}(s);
    }
  };
  using Set = std::unordered_set<std::string, Hash, std::equal_to<>>;

  static bool contains(const Set& set, std::string_view key) {
    return set.find(key) != set.end();
  }

  Set rules_;
  Set wildcards_;
  Set exceptions_;
};

inline bool is_ip_host(std::string_view host) {
  int octets = 0;
  std::size_t pos = 0;
  while (true) {
    const auto dot = host.find('.', pos);
    const std::string_view part = host.substr(
        pos, dot == std::string_view::npos ? std::string_view::npos : dot - pos);
    if (part.empty() || part.size() > 3 || !detail::all_digits(part)) {
      return false;
    }
    int value = 0;
    for (char c : part) value = value * 10 + (c - '0');
    if (value > 255) return false;
    ++octets;
    if (dot == std::string_view::npos) break;
    pos = dot + 1;
  }
  return octets == 4;
}

inline std::string registrable_domain(const ParsedUrl& p,
                                      const PublicSuffixList& list =
                                          PublicSuffixList::bundled()) {
  return list.registrable_domain(p.host);
}

}  // namespace urlguard
