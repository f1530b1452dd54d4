#include "fpwatch/reporter.h"

#include <gtest/gtest.h>

#include <random>

#include "fpwatch/codec.h"
#include "fpwatch/error.h"
#include "unit/test_support.h"

namespace fpwatch {
namespace {

SummaryStats sample_stats() {
  SummaryStats s;
  s.sites_total = 20;
  s.sites_timed_out = 1;
  s.fingerprinting_sites = 14;
  s.fingerprinting_fraction = 14.0 / 20.0;
  s.party_mode = {11, 1, 2};
  s.exclusively_third_fraction = 11.0 / 14.0;
  s.exclusively_first_fraction = 1.0 / 14.0;
  s.both_fraction = 2.0 / 14.0;
  s.distinct_fingerprinters = 3;
  s.avg_recipient_domains_per_fingerprinting_site = 17.0 / 14.0;
  s.max_recipient_domains_single_site = 3;
  s.events = 40;
  s.total_event_bytes = 15'750;
  s.avg_bytes_per_fingerprinter = 15'750.0 / 3.0;
  s.bytes_per_fingerprinter = {{"a.com", 10'000}, {"b, \"quoted\" net", 5'000}, {"c.org", 750}};
  for (const auto id : kCoreAttributeIds) s.attribute_frequency[std::string(id)] = 0;
  s.attribute_frequency["Resolution"] = 4;
  s.attribute_frequency["Language"] = 2;
  s.avg_core_attributes_per_fingerprinter = 2.0 / 3.0;
  s.transport = {1, 1, 1};
  s.fingerprinter_site_reach = {{"a.com", 9}, {"c.org", 9}};
  s.fp_id_shares = {{"a1b2c3d4e5", {"a.com", "c.org"}}};
  return s;
}

ReportBundle sample_bundle() {
  ReportMetadata m;
  m.log_sha256 = codec::sha256_hex("log bytes");
  m.suffix_table_version = "2026-10-07_07-28-19_UTC";
  m.config_sha256 = codec::sha256_hex("config");
  return build_report(sample_stats(), default_catalog(), m);
}

TEST(ReporterTest, CatalogTableMatchesPublishedCounts) {
  const auto rows = category_table(default_catalog());
  EXPECT_EQ(rows, (std::vector<CategoryRow>{{"WebGL", 114},
                                            {"Features", 66},
                                            {"Media", 41},
                                            {"Misc", 35},
                                            {"IO", 20},
                                            {"Network", 10}}));
}

TEST(ReporterTest, CsvRoundTrip) {
  const auto b = sample_bundle();
  const auto files = render_csv(b);
  const auto parsed = parse_report_csv(files);
  EXPECT_EQ(parsed, b);
  EXPECT_EQ(render_csv(parsed), files);
}

TEST(ReporterTest, JsonRoundTrip) {
  const auto b = sample_bundle();
  const auto text = render_json(b);
  const auto parsed = parse_report_json(text);
  EXPECT_EQ(parsed, b);
  EXPECT_EQ(render_json(parsed), text);
}

TEST(ReporterTest, EveryTableCarriesTheLogDigest) {
  const auto b = sample_bundle();
  for (const auto& [name, content] : render_csv(b)) {
    const auto rows = parse_csv(content);
    ASSERT_GE(rows.size(), 2u) << name;
    EXPECT_EQ(rows[0][0], "log_sha256") << name;
    for (std::size_t i = 1; i < rows.size(); ++i) EXPECT_EQ(rows[i][0], b.metadata.log_sha256);
  }
  for (const auto& [name, content] : render_plot(b)) {
    EXPECT_TRUE(content.starts_with("# log_sha256 " + b.metadata.log_sha256 + "\n")) << name;
  }
}

TEST(ReporterTest, VolumePlotIsTwoColumnsDescending) {
  SummaryStats s;
  s.bytes_per_fingerprinter = {{"b.net", 5'000}, {"a.com", 10'000}, {"c.org", 750}};
  ReportMetadata m;
  m.log_sha256 = "abc";
  const auto plot = render_plot(build_report(s, default_catalog(), m)).at("volume.dat");
  EXPECT_EQ(plot,
            "# log_sha256 abc\n# domain bytes\n\"a.com\" 10000\n\"b.net\" 5000\n\"c.org\" 750\n");
}

TEST(ReporterTest, RankingsAreTopTen) {
  SummaryStats s;
  for (int i = 0; i < 15; ++i) s.bytes_per_fingerprinter["d" + std::to_string(i) + ".com"] = 100 + i;
  const auto b = build_report(s, default_catalog(), {});
  ASSERT_EQ(b.top_volume.size(), 10u);
  EXPECT_EQ(b.top_volume.front(), (RankRow{"d14.com", 114}));
  EXPECT_EQ(b.metadata.catalog_version, default_catalog().version());
}

TEST(ReporterTest, FormatBytesUsesBase1000) {
  EXPECT_EQ(format_bytes(0), "0 B");
  EXPECT_EQ(format_bytes(999), "999 B");
  EXPECT_EQ(format_bytes(1000), "1.0 KB");
  EXPECT_EQ(format_bytes(1750), "1.8 KB");
  EXPECT_EQ(format_bytes(2'900'000), "2.9 MB");
  EXPECT_EQ(format_bytes(999'999), "1.0 MB");
  EXPECT_EQ(format_bytes(2'100'000'000), "2.1 GB");
}

TEST(ReporterTest, FormatsParse) {
  EXPECT_EQ(parse_report_formats("plot,csv"), (std::set{ReportFormat::Csv, ReportFormat::Plot}));
  EXPECT_THROW(parse_report_formats("csv,xml"), ConfigError);
  EXPECT_THROW(parse_report_formats(""), ConfigError);
}

TEST(ReporterTest, EmitWritesDeterministicFiles) {
  test::TempDir dir;
  const auto b = sample_bundle();
  const auto all = std::set{ReportFormat::Csv, ReportFormat::Json, ReportFormat::Plot};
  const auto first = emit(b, all, dir / "one");
  const auto second = emit(b, all, dir / "two");
  ASSERT_EQ(first.size(), 11u);
  for (std::size_t i = 0; i < first.size(); ++i) {
    EXPECT_EQ(test::read_file(first[i]), test::read_file(second[i]));
  }
  std::map<std::string, std::string> files;
  for (const auto& p : first) files[p.filename().string()] = test::read_file(p);
  EXPECT_EQ(parse_report_csv(files), b);
  EXPECT_EQ(parse_report_json(files.at("report.json")), b);
}

TEST(ReporterTest, RejectsForeignInput) {
  EXPECT_THROW(parse_report_json(R"({"format":"x"})"), ValidationError);
  auto files = render_csv(sample_bundle());
  files.erase("top_volume.csv");
  EXPECT_THROW(parse_report_csv(files), ParseError);
  EXPECT_THROW(parse_csv("a,\"b"), ParseError);
}

TEST(CsvProperty, EscapeParseRoundTrip) {
  std::mt19937_64 rng(3);
  const std::string alphabet = "ab,\"\r\n x";
  for (int i = 0; i < 2000; ++i) {
    std::vector<std::vector<std::string>> rows(1 + rng() % 4);
    const std::size_t cols = 1 + rng() % 4;
    for (auto& row : rows) {
      for (std::size_t c = 0; c < cols; ++c) {
        std::string f;
        for (auto n = rng() % 6; n > 0; --n) f += alphabet[rng() % alphabet.size()];
        row.push_back(f);
      }
    }
    // A single empty field on its own line is indistinguishable from a
    // blank line; quote-free writers never produce one here.
    if (cols == 1) {
      for (auto& row : rows) row[0] += "z";
    }
    std::string text;
    for (const auto& row : rows) {
      for (std::size_t c = 0; c < row.size(); ++c) text += (c ? "," : "") + csv_escape(row[c]);
      text += "\r\n";
    }
    ASSERT_EQ(parse_csv(text), rows) << text;
  }
}

}  // namespace
}  // namespace fpwatch
