#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "fpwatch/analytics.h"
#include "fpwatch/catalog.h"

namespace fpwatch {

inline constexpr std::string_view kReportFormat = "fpwatch-report";
inline constexpr int kReportSchemaVersion = 1;

struct ReportMetadata {
  std::string log_sha256;
  std::string catalog_version;
  std::string suffix_table_version;
  std::string config_sha256;
  bool operator==(const ReportMetadata&) const = default;
};

struct CategoryRow {
  std::string category;  // short table label: WebGL, Features, Media, Misc, IO, Network
  std::uint64_t count = 0;
  bool operator==(const CategoryRow&) const = default;
};

struct ReportBundle {
  ReportMetadata metadata;
  SummaryStats summary;
  std::vector<RankRow> top_volume;       // bytes per fingerprinter
  std::vector<RankRow> top_attributes;   // events per core attribute
  std::vector<RankRow> top_third_party;  // sites reached as a third party
  std::vector<CategoryRow> catalog_categories;
  bool operator==(const ReportBundle&) const = default;
};

ReportBundle build_report(const SummaryStats& stats, const Catalog& catalog,
                          ReportMetadata metadata, int top_n = 10);

// Catalog category counts, largest first, ties by label.
std::vector<CategoryRow> category_table(const Catalog& catalog);

enum class ReportFormat { Csv, Json, Plot };
std::string_view to_string(ReportFormat f);
// "csv,json,plot" in any order. Throws ConfigError.
std::set<ReportFormat> parse_report_formats(std::string_view list);

// Base-1000 units with one decimal: 999 -> "999 B", 1750 -> "1.8 KB",
// 2900000 -> "2.9 MB".
std::string format_bytes(std::uint64_t bytes);

// File name -> content. Output is deterministic for a given bundle.
std::map<std::string, std::string> render_csv(const ReportBundle& bundle);
std::string render_json(const ReportBundle& bundle);
std::map<std::string, std::string> render_plot(const ReportBundle& bundle);

// Inverses of render_csv / render_json. Throw ParseError or ValidationError.
ReportBundle parse_report_csv(const std::map<std::string, std::string>& files);
ReportBundle parse_report_json(std::string_view text);

// Writes the requested formats into `out_dir` (created if missing) and
// returns the written paths. Throws IoError.
std::vector<std::filesystem::path> emit(const ReportBundle& bundle,
                                        const std::set<ReportFormat>& formats,
                                        const std::filesystem::path& out_dir);

// RFC 4180 helpers, exposed for tests and the CLI.
std::string csv_escape(std::string_view field);
// Throws ParseError on unterminated quotes.
std::vector<std::vector<std::string>> parse_csv(std::string_view text);

}  // namespace fpwatch
