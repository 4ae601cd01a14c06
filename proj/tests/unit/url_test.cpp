#include <gtest/gtest.h>

#include <string>

#include "support/oracles.hpp"
#include "urlguard/public_suffix.hpp"
#include "urlguard/url.hpp"

using urlguard::Errc;
using urlguard::normalize_url;

namespace {

Errc error_of(std::string_view raw) {
  try {
    normalize_url(raw);
  } catch (const urlguard::Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error for " << raw;
  return Errc::kIo;
}

}  // namespace

TEST(NormalizeUrl, PrependsSchemeAndLowercases) {
  const auto p = normalize_url("  WWW.Example.COM/Path?Q=1#Top ");
  EXPECT_EQ(p.scheme, "http");
  EXPECT_EQ(p.host, "www.example.com");
  EXPECT_EQ(p.path, "/path");
  EXPECT_EQ(p.query, "q=1");
  EXPECT_EQ(p.fragment, "top");
  EXPECT_EQ(p.normalized, "http://www.example.com/path?q=1#top");
}

TEST(NormalizeUrl, KeepsPortUserinfoAndEncoding) {
  const auto p = normalize_url("HTTPS://user@Bank.example:8443/a%2Fb");
  EXPECT_EQ(p.scheme, "https");
  EXPECT_EQ(p.host, "user@bank.example");
  ASSERT_TRUE(p.explicit_port);
  EXPECT_EQ(*p.explicit_port, 8443);
  EXPECT_EQ(p.path, "/a%2fb");
  EXPECT_EQ(p.normalized, "https://user@bank.example:8443/a%2fb");
}

TEST(NormalizeUrl, SchemeMarkerInsideQueryIsNotAScheme) {
  const auto p = normalize_url("example.com/redirect?to=http://evil.tk");
  EXPECT_EQ(p.scheme, "http");
  EXPECT_EQ(p.host, "example.com");
  EXPECT_EQ(p.query, "to=http://evil.tk");
}

TEST(NormalizeUrl, EmptyQueryAndFragmentAreDropped) {
  EXPECT_EQ(normalize_url("http://a.com/?#").normalized, "http://a.com/");
}

TEST(NormalizeUrl, Rejections) {
  EXPECT_EQ(error_of(""), Errc::kMalformedUrl);
  EXPECT_EQ(error_of("   \t"), Errc::kMalformedUrl);
  EXPECT_EQ(error_of("ftp://files.example.com"), Errc::kMalformedUrl);
  EXPECT_EQ(error_of("http:///path"), Errc::kMalformedUrl);
  EXPECT_EQ(error_of("http://a.com:0/"), Errc::kMalformedUrl);
  EXPECT_EQ(error_of("http://a.com:65536/"), Errc::kMalformedUrl);
  EXPECT_EQ(error_of("http://a.com:99999999999999999999999/"), Errc::kMalformedUrl);
}

TEST(NormalizeUrl, AgreesWithRegexParserAndIsIdempotent) {
  for (const auto& raw : oracle::url_corpus(2000, 11)) {
    const auto expect = oracle::parse(raw);
    if (!expect) {
      EXPECT_THROW(normalize_url(raw), urlguard::Error) << raw;
      continue;
    }
    const auto got = normalize_url(raw);
    EXPECT_EQ(got.normalized, expect->normalized) << raw;
    EXPECT_EQ(got.host, expect->host) << raw;
    EXPECT_EQ(got.path, expect->path) << raw;
    EXPECT_EQ(got.query, expect->query) << raw;
    EXPECT_EQ(got.fragment, expect->fragment) << raw;
    EXPECT_EQ(normalize_url(got.normalized), got) << raw;
  }
}

TEST(NormalizeUrl, CaseOfInputDoesNotMatter) {
  for (const auto& raw : oracle::url_corpus(300, 12)) {
    std::string upper = raw;
    for (auto& c : upper) {
      if (c >= 'a' && c <= 'z') c = static_cast<char>(c - 'a' + 'A');
    }
    const auto expect = oracle::parse(raw);
    if (!expect) continue;
    EXPECT_EQ(normalize_url(upper).normalized, normalize_url(raw).normalized);
  }
}

TEST(PublicSuffix, BundledSnapshotLoads) {
  EXPECT_GT(urlguard::PublicSuffixList::bundled().rule_count(), 5000u);
}

TEST(PublicSuffix, RegistrableDomain) {
  const auto& psl = urlguard::PublicSuffixList::bundled();
  EXPECT_EQ(psl.registrable_domain("login.paypal.com.evil.tk"), "evil.tk");
  EXPECT_EQ(psl.registrable_domain("www.bbc.co.uk"), "bbc.co.uk");
  EXPECT_EQ(psl.registrable_domain("a.b.example.com"), "example.com");
  EXPECT_EQ(psl.registrable_domain("example.com"), "example.com");
  EXPECT_EQ(psl.registrable_domain("192.168.0.1"), "192.168.0.1");
  EXPECT_EQ(psl.registrable_domain("localhost"), "localhost");
  EXPECT_EQ(psl.registrable_domain("co.uk"), "co.uk");
  EXPECT_EQ(psl.registrable_domain("paypal.com@phish.example.org"), "example.org");
  EXPECT_EQ(psl.registrable_domain("www.example.com."), "example.com");
}

TEST(PublicSuffix, WildcardAndExceptionRules) {
  const auto psl = urlguard::PublicSuffixList::parse(
      "// comment\ncom\n*.ck\n!www.ck\nUK\nco.uk\n");
  EXPECT_EQ(psl.public_suffix("shop.example.ck"), "example.ck");
  EXPECT_EQ(psl.registrable_domain("a.shop.example.ck"), "shop.example.ck");
  EXPECT_EQ(psl.public_suffix("www.ck"), "ck");
  EXPECT_EQ(psl.registrable_domain("www.ck"), "www.ck");
  EXPECT_EQ(psl.registrable_domain("x.y.co.uk"), "y.co.uk");
  // Unlisted TLDs fall back to the implicit "*" rule.
  EXPECT_EQ(psl.registrable_domain("a.b.zz"), "b.zz");
}

TEST(PublicSuffix, IpDetection) {
  EXPECT_TRUE(urlguard::is_ip_host("10.0.0.255"));
  EXPECT_FALSE(urlguard::is_ip_host("10.0.0.256"));
  EXPECT_FALSE(urlguard::is_ip_host("10.0.0"));
  EXPECT_FALSE(urlguard::is_ip_host("10.0.0.1.5"));
  EXPECT_FALSE(urlguard::is_ip_host("1a.0.0.1"));
  for (int i = 0; i < 200; ++i) {
    const std::string h = std::to_string(i * 7 % 300) + ".1.2." + std::to_string(i % 260);
    EXPECT_EQ(urlguard::is_ip_host(h), oracle::ipv4(h)) << h;
  }
}
