#pragma once

#include <charconv>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include "urlguard/error.hpp"

namespace urlguard {

// A lowercased URL split into its components. `normalized` is always the
// reassembly of the other fields, so re-parsing it yields an equal value.
struct ParsedUrl {
  std::string scheme;
  std::string host;
  std::optional<std::uint16_t> explicit_port;
  std::string path;
  std::string query;     // without the leading '?'
  std::string fragment;  // without the leading '#'
  std::string normalized;

  bool operator==(const ParsedUrl&) const = default;
};

namespace detail {

constexpr bool is_ascii_space(char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' ||
         c == '\v';
}

constexpr char ascii_lower(char c) {
  return (c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : c;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && is_ascii_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_ascii_space(s.back())) s.remove_suffix(1);
  return s;
}

inline bool all_digits(std::string_view s) {
  if (s.empty()) return false;
  for (char c : s) {
    if (c < '0' || c > '9') return false;
  }
  return true;
}

}  // namespace detail

inline std::string reassemble(const ParsedUrl& p) {
  std::string out;
  out.reserve(p.scheme.size() + p.host.size() + p.path.size() +
              p.query.size() + p.fragment.size() + 16);
  out += p.scheme;
  out += "://";
  out += p.host;
  if (p.explicit_port) {
    out += ':';
    out += std::to_string(*p.explicit_port);
  }
  out += p.path;
  if (!p.query.empty()) {
    out += '?';
    out += p.query;
  }
  if (!p.fragment.empty()) {
    out += '#';
    out += p.fragment;
  }
  return out;
}

// Lowercases, prepends "http://" when no scheme is present and splits into
// authority / path / query / fragment. No percent-decoding happens and
// userinfo stays part of the host.
inline ParsedUrl normalize_url(std::string_view raw) {
  const std::string_view trimmed = detail::trim(raw);
  if (trimmed.empty()) fail(Errc::kMalformedUrl, "empty URL");

  std::string text;
  text.reserve(trimmed.size() + 7);
  for (char c : trimmed) text.push_back(detail::ascii_lower(c));

  ParsedUrl out;
  std::string_view rest;
  // "://" marks a scheme only before any of "/?#"; later occurrences belong
  // to the path or query (e.g. redirect parameters).
  const auto sep = text.find("://");
  if (sep != std::string::npos && text.find_first_of("/?#") > sep) {
    out.scheme = text.substr(0, sep);
    if (out.scheme != "http" && out.scheme != "https") {
      fail(Errc::kMalformedUrl, "unsupported scheme '" + out.scheme + "'");
    }
    rest = std::string_view(text).substr(sep + 3);
  } else {
    out.scheme = "http";
    rest = text;
  }

  const auto auth_end = rest.find_first_of("/?#");
  std::string_view authority = rest.substr(0, auth_end);
  rest = auth_end == std::string_view::npos ? std::string_view{}
                                            : rest.substr(auth_end);

  if (const auto colon = authority.rfind(':'); colon != std::string_view::npos) {
    const std::string_view digits = authority.substr(colon + 1);
    if (detail::all_digits(digits)) {
      unsigned long port = 0;
      const auto [ptr, ec] =
          std::from_chars(digits.data(), digits.data() + digits.size(), port);
      if (ec != std::errc{} || port < 1 || port > 65535) {
        fail(Errc::kMalformedUrl, "port out of range in '" + text + "'");
      }
      out.explicit_port = static_cast<std::uint16_t>(port);
      authority = authority.substr(0, colon);
    }
  }
  if (authority.empty()) fail(Errc::kMalformedUrl, "no host in '" + text + "'");
  out.host = std::string(authority);

  const auto path_end = rest.find_first_of("?#");
  out.path = std::string(rest.substr(0, path_end));
  if (path_end != std::string_view::npos) {
    rest = rest.substr(path_end);
    if (rest.front() == '?') {
      const auto hash = rest.find('#');
      out.query = std::string(rest.substr(1, hash == std::string_view::npos
                                                 ? std::string_view::npos
                                                 : hash - 1));
      rest = hash == std::string_view::npos ? std::string_view{}
                                            : rest.substr(hash);
    }
    if (!rest.empty() && rest.front() == '#') {
      out.fragment = std::string(rest.substr(1));
    }
  }

  out.normalized = reassemble(out);
  return out;
}

}  // namespace urlguard
