#include "fpwatch/suffix_table.h"

#include <gtest/gtest.h>

#include <random>

#include "fpwatch/error.h"

namespace fpwatch {
namespace {

const SuffixTable& psl() { return default_suffix_table(); }

// Expected values were computed with the publicsuffixlist Python package
// over the same bundled list file.
TEST(SuffixTable, RegistrableDomainsMatchReference) {
  const std::vector<std::pair<std::string, std::optional<std::string>>> cases = {
      {"example.com", "example.com"},
      {"www.example.com", "example.com"},
      {"shop.example.co.uk", "example.co.uk"},
      {"cdn.example.co.uk", "example.co.uk"},
      {"co.uk", std::nullopt},
      {"com", std::nullopt},
      {"a.b.c.kobe.jp", "b.c.kobe.jp"},
      {"city.kobe.jp", "city.kobe.jp"},
      {"www.city.kobe.jp", "city.kobe.jp"},
      {"foo.ck", std::nullopt},
      {"www.ck", "www.ck"},
      {"x.www.ck", "www.ck"},
      {"user.github.io", "user.github.io"},
      {"github.io", std::nullopt},
      {"localhost", std::nullopt},
      {"a.b.unknowntld", "b.unknowntld"},
      {"EXAMPLE.COM.", "example.com"},
      {"s3.amazonaws.com", std::nullopt},
      {"bucket.s3.amazonaws.com", "bucket.s3.amazonaws.com"},
      {"tracker.ads.net", "ads.net"},
  };
  for (const auto& [host, expected] : cases) {
    EXPECT_EQ(psl().registrable_domain(host), expected) << host;
  }
}

TEST(SuffixTable, PublicSuffixes) {
  EXPECT_EQ(psl().public_suffix("a.b.c.kobe.jp"), "c.kobe.jp");
  EXPECT_EQ(psl().public_suffix("www.city.kobe.jp"), "kobe.jp");
  EXPECT_EQ(psl().public_suffix("foo.ck"), "foo.ck");
  EXPECT_EQ(psl().public_suffix("a.b.unknowntld"), "unknowntld");
  EXPECT_EQ(psl().public_suffix(""), "");
}

TEST(SuffixTable, VersionIsRecorded) {
  EXPECT_EQ(psl().version(), "2026-10-07_07-28-19_UTC");
  EXPECT_GT(psl().rule_count(), 9000u);
}

TEST(SuffixTable, ParseHandlesRuleTypes) {
  const auto t = SuffixTable::parse(
      "// VERSION: t1\n"
      "// comment\n"
      "test\n"
      "*.wild.test\n"
      "!keep.wild.test\n"
      "\n");
  EXPECT_EQ(t.version(), "t1");
  EXPECT_EQ(t.rule_count(), 3u);
  EXPECT_EQ(t.registrable_domain("a.b.test"), "b.test");
  EXPECT_EQ(t.registrable_domain("x.y.wild.test"), "x.y.wild.test");
  EXPECT_EQ(t.registrable_domain("y.wild.test"), std::nullopt);
  EXPECT_EQ(t.registrable_domain("a.keep.wild.test"), "keep.wild.test");
  // Default rule.
  EXPECT_EQ(t.registrable_domain("a.b.other"), "b.other");
}

TEST(SuffixTable, ParseErrors) {
  EXPECT_THROW(SuffixTable::parse("// nothing\n"), ValidationError);
  EXPECT_THROW(SuffixTable::parse("a.*.b\n"), ParseError);
  EXPECT_THROW(SuffixTable::parse("!\n"), ParseError);
  EXPECT_THROW(load_suffix_table("/nonexistent/psl.dat"), IoError);
}

TEST(SuffixTable, IpLiteralsHaveNoRegistrableDomain) {
  EXPECT_TRUE(is_ip_literal("192.0.2.1"));
  EXPECT_TRUE(is_ip_literal("[::1]"));
  EXPECT_FALSE(is_ip_literal("example.com"));
  EXPECT_EQ(psl().registrable_domain("192.0.2.1"), std::nullopt);
  EXPECT_EQ(psl().registrable_domain("::1"), std::nullopt);
}

TEST(ClassifyParty, Examples) {
  EXPECT_EQ(classify_party("example.com", "example.com", psl()).party, PartyClass::FirstParty);
  EXPECT_EQ(classify_party("news.site.com", "tracker.ads.net", psl()).party,
            PartyClass::ThirdParty);
  EXPECT_EQ(classify_party("shop.example.co.uk", "cdn.example.co.uk", psl()).party,
            PartyClass::FirstParty);
  EXPECT_EQ(classify_party("Shop.Example.COM", "api.example.com.", psl()).party,
            PartyClass::FirstParty);
}

TEST(ClassifyParty, NoRegistrableDomainFallsBackToExactHost) {
  auto d = classify_party("127.0.0.1", "127.0.0.1", psl());
  EXPECT_EQ(d.party, PartyClass::FirstParty);
  EXPECT_TRUE(d.fallback);
  d = classify_party("127.0.0.1", "127.0.0.2", psl());
  EXPECT_EQ(d.party, PartyClass::ThirdParty);
  EXPECT_TRUE(d.fallback);
  d = classify_party("github.io", "user.github.io", psl());
  EXPECT_EQ(d.party, PartyClass::ThirdParty);
  EXPECT_TRUE(d.fallback);
  EXPECT_FALSE(classify_party("a.com", "b.com", psl()).fallback);
}

TEST(ClassifyParty, Symmetric) {
  const std::vector<std::string> hosts = {
      "example.com", "www.example.com", "a.example.co.uk", "example.co.uk", "co.uk",
      "user.github.io", "other.github.io", "github.io", "10.0.0.1", "x.www.ck",
      "www.ck", "foo.ck", "a.b.c.kobe.jp", "x.c.kobe.jp", "localhost"};
  std::mt19937 rng(11);
  for (int i = 0; i < 2000; ++i) {
    const auto& a = hosts[rng() % hosts.size()];
    const auto& b = hosts[rng() % hosts.size()];
    EXPECT_EQ(classify_party(a, b, psl()).party, classify_party(b, a, psl()).party)
        << a << " / " << b;
  }
}

TEST(RecipientDomain, FallsBackToHost) {
  EXPECT_EQ(recipient_domain("cdn.tracker.net", psl()), "tracker.net");
  EXPECT_EQ(recipient_domain("192.0.2.1", psl()), "192.0.2.1");
}

}  // namespace
}  // namespace fpwatch
