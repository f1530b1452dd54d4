#include "fpwatch/analytics.h"

#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "fpwatch/catalog.h"
#include "fpwatch/error.h"

namespace fpwatch {
namespace {

const SuffixTable& psl() { return default_suffix_table(); }

// Builds replays directly: one committed visit per site, captures attached.
class LogBuilder {
 public:
  std::uint64_t visit(const std::string& site, VisitStatus status = VisitStatus::Loaded) {
    VisitRecord v;
    v.visit_no = ++next_visit_;
    v.site = site;
    v.status = status;
    log_.visits.push_back(v);
    return v.visit_no;
  }

  CaptureEntry& capture(std::uint64_t visit, const std::string& host, std::size_t bytes,
                        std::vector<std::string> core_attrs, Scheme scheme = Scheme::Https) {
    CaptureEntry e;
    e.record.sequence_no = ++next_seq_;
    e.record.visit_no = visit;
    e.record.page_origin = site_of(visit);
    e.record.host = host;
    e.record.scheme = scheme;
    e.record.method = Method::Post;
    e.record.body = std::string(bytes, 'x');
    e.event = !core_attrs.empty();
    for (auto& a : core_attrs) {
      AttributeHit h;
      h.attribute_id = std::move(a);
      h.core = true;
      e.hits.push_back(h);
    }
    log_.captures.push_back(std::move(e));
    return log_.captures.back();
  }

  LogReplay& log() { return log_; }

 private:
  std::string site_of(std::uint64_t visit) const {
    for (const auto& v : log_.visits) {
      if (v.visit_no == visit) return v.site;
    }
    return "";
  }

  LogReplay log_;
  std::uint64_t next_visit_ = 0;
  std::uint64_t next_seq_ = 0;
};

TEST(AnalyticsTest, ClassifyPartyExamples) {
  EXPECT_EQ(classify_party("example.com", "example.com", psl()).party, PartyClass::FirstParty);
  EXPECT_EQ(classify_party("news.site.com", "tracker.ads.net", psl()).party,
            PartyClass::ThirdParty);
  EXPECT_EQ(classify_party("shop.example.co.uk", "cdn.example.co.uk", psl()).party,
            PartyClass::FirstParty);
}

TEST(AnalyticsTest, EmptyLogHasUndefinedFractions) {
  const auto s = aggregate(LogReplay{}, psl());
  EXPECT_EQ(s.sites_total, 0u);
  EXPECT_EQ(s.fingerprinting_sites, 0u);
  EXPECT_EQ(s.distinct_fingerprinters, 0u);
  EXPECT_FALSE(s.fingerprinting_fraction);
  EXPECT_FALSE(s.exclusively_third_fraction);
  EXPECT_FALSE(s.avg_recipient_domains_per_fingerprinting_site);
  EXPECT_FALSE(s.avg_bytes_per_fingerprinter);
  EXPECT_FALSE(s.avg_core_attributes_per_fingerprinter);
  EXPECT_EQ(s.attribute_frequency.size(), kCoreAttributeCount);
  const auto json = summary_to_json(s);
  EXPECT_NE(json.find("\"fingerprinting_fraction\": null"), std::string::npos);
}

TEST(AnalyticsTest, SiteWithOwnAndThirdPartyRecipientsIsBoth) {
  LogBuilder b;
  const auto v = b.visit("www.shop.com");
  b.capture(v, "a.tracker.net", 10, {"Resolution"});
  b.capture(v, "b.ads.org", 10, {"Language"});
  b.capture(v, "c.metrics.io", 10, {"Charset"});
  b.capture(v, "api.shop.com", 10, {"OS"});
  const auto s = aggregate(b.log(), psl());
  EXPECT_EQ(s.fingerprinting_sites, 1u);
  EXPECT_EQ(s.party_mode.both, 1u);
  EXPECT_EQ(s.party_mode.exclusively_first + s.party_mode.exclusively_third, 0u);
  EXPECT_EQ(s.max_recipient_domains_single_site, 4u);
  EXPECT_EQ(s.avg_recipient_domains_per_fingerprinting_site, 4.0);
  EXPECT_EQ(s.distinct_fingerprinters, 4u);
  EXPECT_EQ(s.fingerprinter_site_reach.count("shop.com"), 0u);
  EXPECT_EQ(s.fingerprinter_site_reach.at("tracker.net"), 1u);
}

TEST(AnalyticsTest, PartyModesAndPrevalence) {
  LogBuilder b;
  b.capture(b.visit("third.com"), "t.tracker.net", 5, {"Resolution"});
  b.capture(b.visit("first.com"), "fp.first.com", 5, {"Resolution"});
  b.capture(b.visit("clean.com"), "cdn.clean.com", 5, {});
  b.visit("slow.com", VisitStatus::TimedOut);
  const auto s = aggregate(b.log(), psl());
  EXPECT_EQ(s.sites_total, 4u);
  EXPECT_EQ(s.sites_timed_out, 1u);
  EXPECT_EQ(s.fingerprinting_sites, 2u);
  EXPECT_EQ(s.fingerprinting_fraction, 0.5);
  EXPECT_EQ(s.party_mode.exclusively_third, 1u);
  EXPECT_EQ(s.party_mode.exclusively_first, 1u);
  EXPECT_EQ(s.both_fraction, 0.0);
  EXPECT_EQ(s.events, 2u);
}

TEST(AnalyticsTest, TransportSplitIsPerFingerprinter) {
  LogBuilder b;
  const auto v = b.visit("site.com");
  b.capture(v, "plain.net", 1, {"OS"}, Scheme::Http);
  b.capture(v, "mixed.net", 1, {"OS"}, Scheme::Http);
  b.capture(v, "x.mixed.net", 1, {"OS"}, Scheme::Https);
  b.capture(v, "secure.net", 1, {"OS"}, Scheme::Https);
  // Non-events do not make a domain a fingerprinter.
  b.capture(v, "quiet.net", 1, {}, Scheme::Http);
  const auto s = aggregate(b.log(), psl());
  EXPECT_EQ(s.transport, (TransportSplit{1, 1, 1}));
  EXPECT_EQ(s.distinct_fingerprinters, 3u);
}

TEST(AnalyticsTest, SupersededAndUnattributedCapturesAreIgnored) {
  LogBuilder b;
  const auto crashed = b.visit("site.com", VisitStatus::BrowserCrashed);
  b.capture(crashed, "t.tracker.net", 100, {"OS"});
  const auto retry = b.visit("site.com");
  b.capture(retry, "t.tracker.net", 7, {"OS"});
  b.capture(0, "t.tracker.net", 1000, {"OS"});
  const auto s = aggregate(b.log(), psl());
  EXPECT_EQ(s.sites_total, 1u);
  EXPECT_EQ(s.events, 1u);
  EXPECT_EQ(s.total_event_bytes, 7u);
}

TEST(AnalyticsTest, RankByVolume) {
  LogBuilder b;
  const auto v = b.visit("site.com");
  b.capture(v, "a.com", 10'000, {"OS"});
  b.capture(v, "b.com", 5'000, {"OS"});
  const auto rows = rank(aggregate(b.log(), psl()), RankDimension::VolumePerFingerprinter, 10);
  EXPECT_EQ(rows, (std::vector<RankRow>{{"a.com", 10'000}, {"b.com", 5'000}}));
}

TEST(AnalyticsTest, RankByAttributeFrequency) {
  LogBuilder b;
  const auto v = b.visit("site.com");
  for (int i = 0; i < 4; ++i) b.capture(v, "t.net", 1, {"Resolution"});
  for (int i = 0; i < 2; ++i) b.capture(v, "t.net", 1, {"Language"});
  const auto rows = rank(aggregate(b.log(), psl()), RankDimension::AttributeFrequency, 10);
  EXPECT_EQ(rows, (std::vector<RankRow>{{"Resolution", 4}, {"Language", 2}}));
}

TEST(AnalyticsTest, RankTiesAreLexicographicAndNBounds) {
  LogBuilder b;
  const auto v = b.visit("site.com");
  b.capture(v, "zeta.com", 50, {"OS"});
  b.capture(v, "alpha.com", 50, {"OS"});
  b.capture(v, "mid.com", 50, {"OS"});
  const auto s = aggregate(b.log(), psl());
  EXPECT_EQ(rank(s, RankDimension::VolumePerFingerprinter, 2),
            (std::vector<RankRow>{{"alpha.com", 50}, {"mid.com", 50}}));
  EXPECT_TRUE(rank(s, RankDimension::VolumePerFingerprinter, 0).empty());
  EXPECT_TRUE(rank(s, RankDimension::VolumePerFingerprinter, -3).empty());
  EXPECT_EQ(rank(s, RankDimension::FingerprinterSiteReach, 10).size(), 3u);
}

TEST(AnalyticsTest, IdSharing) {
  LogBuilder b;
  const auto v = b.visit("site.com");
  auto with_id = [&](const std::string& host, const std::string& id) {
    auto& e = b.capture(v, host, 1, {});
    FingerprintIdHit f;
    f.label = "fp";
    f.value = id;
    e.fp_ids.push_back(f);
  };
  with_id("x.com", "a1b2c3d4e5");
  with_id("www.y.net", "a1b2c3d4e5");
  with_id("x.com", "onlyhere99");
  with_id("x.com", "different1");
  with_id("y.net", "different2");
  with_id("x.com", "short1");
  with_id("y.net", "short1");
  const auto shares = detect_id_sharing(b.log(), psl());
  EXPECT_EQ(shares, (std::vector<IdShare>{{"a1b2c3d4e5", {"x.com", "y.net"}}}));
}

TEST(AnalyticsTest, SummaryJsonRejectsOtherSchemas) {
  EXPECT_THROW(summary_from_json("{"), ParseError);
  EXPECT_THROW(summary_from_json(R"({"format":"other"})"), ValidationError);
  EXPECT_THROW(summary_from_json(R"({"format":"fpwatch-summary","schema_version":9})"),
               ValidationError);
}

// Random logs over a small universe of hosts so categories collide often.
LogReplay random_log(std::mt19937_64& rng) {
  static const std::vector<std::string> sites = {"news.com", "shop.co.uk", "blog.example.org",
                                                 "video.net", "app.io", "a.b.kobe.jp"};
  static const std::vector<std::string> hosts = {
      "cdn.news.com", "news.com", "t.tracker.net", "px.ads.org", "static.shop.co.uk",
      "metrics.io", "x.example.org", "192.0.2.7", "c.kobe.jp", "b.kobe.jp"};
  auto pick = [&](std::size_t n) { return static_cast<std::size_t>(rng() % n); };
  LogBuilder b;
  const int visits = 1 + static_cast<int>(pick(12));
  for (int i = 0; i < visits; ++i) {
    const auto status = static_cast<VisitStatus>(pick(4));
    const auto v = b.visit(sites[pick(sites.size())], status);
    for (int c = static_cast<int>(pick(8)); c > 0; --c) {
      std::vector<std::string> attrs;
      for (int a = static_cast<int>(pick(4)); a > 0; --a) {
        attrs.emplace_back(kCoreAttributeIds[pick(kCoreAttributeCount)]);
      }
      auto& e = b.capture(pick(6) == 0 ? 0 : v, hosts[pick(hosts.size())], pick(3000), attrs,
                          pick(2) ? Scheme::Http : Scheme::Https);
      if (pick(3) == 0) {
        FingerprintIdHit f;
        f.label = "fp";
        f.value = "id" + std::to_string(pick(3)) + "abcdefgh";
        e.fp_ids.push_back(f);
      }
    }
  }
  return b.log();
}

TEST(AnalyticsProperty, Invariants) {
  std::mt19937_64 rng(7);
  for (int i = 0; i < 500; ++i) {
    const auto log = random_log(rng);
    const auto s = aggregate(log, psl());
    EXPECT_EQ(s, aggregate(log, psl()));
    EXPECT_EQ(s.party_mode.exclusively_first + s.party_mode.exclusively_third + s.party_mode.both,
              s.fingerprinting_sites);
    if (s.fingerprinting_sites > 0) {
      EXPECT_NEAR(*s.exclusively_first_fraction + *s.exclusively_third_fraction + *s.both_fraction,
                  1.0, 1e-12);
    }
    EXPECT_EQ(s.transport.http_only + s.transport.mixed + s.transport.https_only,
              s.distinct_fingerprinters);
    std::uint64_t sum = 0;
    for (const auto& [d, bytes] : s.bytes_per_fingerprinter) sum += bytes;
    EXPECT_EQ(sum, s.total_event_bytes);
    EXPECT_LE(s.fingerprinting_sites, s.sites_total);
    EXPECT_EQ(summary_from_json(summary_to_json(s)), s);
    EXPECT_EQ(summary_to_json(summary_from_json(summary_to_json(s))), summary_to_json(s));
  }
}

TEST(AnalyticsProperty, ShardedMergeMatchesWholeLog) {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 300; ++i) {
    const auto log = random_log(rng);
    const auto whole = aggregate(log, psl());

    std::map<std::uint64_t, std::string> site_of;
    for (const auto& [site, v] : log.effective_visits()) site_of[v.visit_no] = site;
    const std::size_t shards = 1 + rng() % 4;
    std::vector<PartialStats> parts(shards);
    for (const auto& [site, v] : log.effective_visits()) add_visit(parts[rng() % shards], v);
    for (const auto& c : log.effective_captures()) {
      add_capture(parts[rng() % shards], site_of.at(c.record.visit_no), c, psl());
    }
    std::shuffle(parts.begin(), parts.end(), rng);
    PartialStats left;
    for (const auto& p : parts) left = merge(std::move(left), p);
    PartialStats right;
    for (auto it = parts.rbegin(); it != parts.rend(); ++it) right = merge(*it, right);
    EXPECT_EQ(left, right);
    EXPECT_EQ(finalize(left), whole);
  }
}

}  // namespace
}  // namespace fpwatch
