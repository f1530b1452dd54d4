#include "fpwatch/reporter.h"

#include <algorithm>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "fpwatch/error.h"
#include "json.hpp"

namespace fpwatch {

using nlohmann::json;

namespace {

std::string table_label(Category c) {
  switch (c) {
    case Category::InputOutput: return "IO";
    case Category::Miscellaneous: return "Misc";
    default: return std::string(to_string(c));
  }
}

std::string number(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string opt_number(const std::optional<double>& v) { return v ? number(*v) : ""; }

std::uint64_t parse_u64(const std::string& s) {
  char* end = nullptr;
  errno = 0;
  const auto v = std::strtoull(s.c_str(), &end, 10);
  if (s.empty() || *end != '\0' || errno == ERANGE) throw ParseError("bad integer '" + s + "'");
  return v;
}

std::optional<double> parse_opt_double(const std::string& s) {
  if (s.empty()) return std::nullopt;
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (*end != '\0') throw ParseError("bad number '" + s + "'");
  return v;
}

std::string join_rows(const std::vector<std::vector<std::string>>& rows) {
  std::string out;
  for (const auto& row : rows) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i) out += ',';
      out += csv_escape(row[i]);
    }
    out += "\r\n";
  }
  return out;
}

}  // namespace

std::vector<CategoryRow> category_table(const Catalog& catalog) {
  std::vector<CategoryRow> rows;
  for (const auto c : kAllCategories) rows.push_back({table_label(c), catalog.category_count(c)});
  std::stable_sort(rows.begin(), rows.end(), [](const CategoryRow& a, const CategoryRow& b) {
    return a.count != b.count ? a.count > b.count : a.category < b.category;
  });
  return rows;
}

ReportBundle build_report(const SummaryStats& stats, const Catalog& catalog,
                          ReportMetadata metadata, int top_n) {
  ReportBundle b;
  b.metadata = std::move(metadata);
  if (b.metadata.catalog_version.empty()) b.metadata.catalog_version = catalog.version();
  b.summary = stats;
  b.top_volume = rank(stats, RankDimension::VolumePerFingerprinter, top_n);
  b.top_attributes = rank(stats, RankDimension::AttributeFrequency, top_n);
  b.top_third_party = rank(stats, RankDimension::FingerprinterSiteReach, top_n);
  b.catalog_categories = category_table(catalog);
  return b;
}

std::string_view to_string(ReportFormat f) {
  switch (f) {
    case ReportFormat::Csv: return "csv";
    case ReportFormat::Json: return "json";
    case ReportFormat::Plot: return "plot";
  }
  return "";
}

std::set<ReportFormat> parse_report_formats(std::string_view list) {
  std::set<ReportFormat> out;
  while (!list.empty()) {
    const auto comma = list.find(',');
    const auto item = list.substr(0, comma);
    bool found = false;
    for (auto f : {ReportFormat::Csv, ReportFormat::Json, ReportFormat::Plot}) {
      if (to_string(f) == item) {
        out.insert(f);
        found = true;
      }
    }
    if (!found) {
      throw ConfigError("unknown report format '" + std::string(item) +
                        "' (expected csv, json or plot)");
    }
    if (comma == std::string_view::npos) break;
    list.remove_prefix(comma + 1);
  }
  if (out.empty()) throw ConfigError("no report format given");
  return out;
}

std::string format_bytes(std::uint64_t bytes) {
  if (bytes < 1000) return std::to_string(bytes) + " B";
  static const char* units[] = {"KB", "MB", "GB", "TB", "PB"};
  double v = static_cast<double>(bytes);
  int u = -1;
  // Step up while the rounded value would still read 1000 or more.
  while (u < 4 && std::round(v * 10) / 10 >= 1000) {
    v /= 1000;
    ++u;
  }
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f %s", v, units[u < 0 ? 0 : u]);
  return buf;
}

std::string csv_escape(std::string_view field) {
  if (field.find_first_of(",\"\r\n") == std::string_view::npos) return std::string(field);
  std::string out = "\"";
  for (const char c : field) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

std::vector<std::vector<std::string>> parse_csv(std::string_view text) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false, in_quotes = false, any = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (in_quotes) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          in_quotes = false;
        }
      } else {
        field += c;
      }
      continue;
    }
    any = true;
    if (c == '"' && field.empty() && !quoted) {
      in_quotes = quoted = true;
    } else if (c == ',') {
      row.push_back(std::move(field));
      field.clear();
      quoted = false;
    } else if (c == '\r' || c == '\n') {
      if (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n') ++i;
      row.push_back(std::move(field));
      rows.push_back(std::move(row));
      row.clear();
      field.clear();
      quoted = any = false;
    } else {
      field += c;
    }
  }
  if (in_quotes) throw ParseError("unterminated quoted CSV field");
  if (any || quoted || !row.empty()) {
    row.push_back(std::move(field));
    rows.push_back(std::move(row));
  }
  return rows;
}

std::map<std::string, std::string> render_csv(const ReportBundle& b) {
  const auto& s = b.summary;
  const auto& digest = b.metadata.log_sha256;
  std::map<std::string, std::string> files;

  std::vector<std::vector<std::string>> rows = {{"log_sha256", "metric", "key", "value", "display"}};
  auto scalar = [&](const std::string& metric, std::uint64_t v, bool bytes = false) {
    rows.push_back({digest, metric, "", std::to_string(v), bytes ? format_bytes(v) : ""});
  };
  auto fraction = [&](const std::string& metric, const std::optional<double>& v,
                      bool bytes = false) {
    rows.push_back({digest, metric, "", opt_number(v),
                    bytes && v ? format_bytes(static_cast<std::uint64_t>(std::llround(*v))) : ""});
  };
  auto table = [&](const std::string& metric, const std::map<std::string, std::uint64_t>& m,
                   bool bytes = false) {
    for (const auto& [k, v] : m) {
      rows.push_back({digest, metric, k, std::to_string(v), bytes ? format_bytes(v) : ""});
    }
  };
  scalar("sites_total", s.sites_total);
  scalar("sites_timed_out", s.sites_timed_out);
  scalar("fingerprinting_sites", s.fingerprinting_sites);
  fraction("fingerprinting_fraction", s.fingerprinting_fraction);
  scalar("party_mode.exclusively_third", s.party_mode.exclusively_third);
  scalar("party_mode.exclusively_first", s.party_mode.exclusively_first);
  scalar("party_mode.both", s.party_mode.both);
  fraction("party_mode.exclusively_third_fraction", s.exclusively_third_fraction);
  fraction("party_mode.exclusively_first_fraction", s.exclusively_first_fraction);
  fraction("party_mode.both_fraction", s.both_fraction);
  scalar("distinct_fingerprinters", s.distinct_fingerprinters);
  fraction("avg_recipient_domains_per_fingerprinting_site",
           s.avg_recipient_domains_per_fingerprinting_site);
  scalar("max_recipient_domains_single_site", s.max_recipient_domains_single_site);
  scalar("events", s.events);
  scalar("total_event_bytes", s.total_event_bytes, true);
  fraction("avg_bytes_per_fingerprinter", s.avg_bytes_per_fingerprinter, true);
  fraction("avg_core_attributes_per_fingerprinter", s.avg_core_attributes_per_fingerprinter);
  scalar("transport.http_only", s.transport.http_only);
  scalar("transport.mixed", s.transport.mixed);
  scalar("transport.https_only", s.transport.https_only);
  table("bytes_per_fingerprinter", s.bytes_per_fingerprinter, true);
  table("attribute_frequency", s.attribute_frequency);
  table("fingerprinter_site_reach", s.fingerprinter_site_reach);
  for (const auto& share : s.fp_id_shares) {
    std::string domains;
    for (const auto& d : share.domains) domains += (domains.empty() ? "" : " ") + d;
    rows.push_back({digest, "fp_id_shares", share.identifier, domains, ""});
  }
  files["summary.csv"] = join_rows(rows);

  auto ranking = [&](const std::vector<RankRow>& r, const char* key, const char* value,
                     bool bytes) {
    std::vector<std::vector<std::string>> out = {{"log_sha256", "rank", key, value}};
    if (bytes) out[0].push_back("display");
    for (std::size_t i = 0; i < r.size(); ++i) {
      out.push_back({digest, std::to_string(i + 1), r[i].key, std::to_string(r[i].value)});
      if (bytes) out.back().push_back(format_bytes(r[i].value));
    }
    return join_rows(out);
  };
  files["top_volume.csv"] = ranking(b.top_volume, "domain", "bytes", true);
  files["top_attributes.csv"] = ranking(b.top_attributes, "attribute", "events", false);
  files["top_third_party.csv"] = ranking(b.top_third_party, "domain", "sites", false);

  std::vector<std::vector<std::string>> cats = {{"log_sha256", "category", "count"}};
  for (const auto& c : b.catalog_categories) {
    cats.push_back({digest, c.category, std::to_string(c.count)});
  }
  files["catalog_categories.csv"] = join_rows(cats);

  files["metadata.csv"] = join_rows({{"log_sha256", "key", "value"},
                                     {digest, "format", std::string(kReportFormat)},
                                     {digest, "schema_version", std::to_string(kReportSchemaVersion)},
                                     {digest, "catalog_version", b.metadata.catalog_version},
                                     {digest, "suffix_table_version", b.metadata.suffix_table_version},
                                     {digest, "config_sha256", b.metadata.config_sha256}});
  return files;
}

namespace {

const std::vector<std::vector<std::string>> csv_file(const std::map<std::string, std::string>& files,
                                                     const std::string& name,
                                                     std::size_t columns) {
  const auto it = files.find(name);
  if (it == files.end()) throw ParseError("report is missing " + name);
  auto rows = parse_csv(it->second);
  if (rows.empty()) throw ParseError(name + " has no header");
  rows.erase(rows.begin());
  for (const auto& r : rows) {
    if (r.size() != columns) throw ParseError(name + ": expected " + std::to_string(columns) + " columns");
  }
  return rows;
}

}  // namespace

ReportBundle parse_report_csv(const std::map<std::string, std::string>& files) {
  ReportBundle b;
  std::map<std::string, std::string> meta;
  for (const auto& r : csv_file(files, "metadata.csv", 3)) {
    b.metadata.log_sha256 = r[0];
    meta[r[1]] = r[2];
  }
  if (meta["format"] != kReportFormat) throw ValidationError("not an fpwatch report");
  if (meta["schema_version"] != std::to_string(kReportSchemaVersion)) {
    throw ValidationError("unsupported report schema version " + meta["schema_version"]);
  }
  b.metadata.catalog_version = meta["catalog_version"];
  b.metadata.suffix_table_version = meta["suffix_table_version"];
  b.metadata.config_sha256 = meta["config_sha256"];

  auto& s = b.summary;
  const std::map<std::string, std::uint64_t*> scalars = {
      {"sites_total", &s.sites_total},
      {"sites_timed_out", &s.sites_timed_out},
      {"fingerprinting_sites", &s.fingerprinting_sites},
      {"party_mode.exclusively_third", &s.party_mode.exclusively_third},
      {"party_mode.exclusively_first", &s.party_mode.exclusively_first},
      {"party_mode.both", &s.party_mode.both},
      {"distinct_fingerprinters", &s.distinct_fingerprinters},
      {"max_recipient_domains_single_site", &s.max_recipient_domains_single_site},
      {"events", &s.events},
      {"total_event_bytes", &s.total_event_bytes},
      {"transport.http_only", &s.transport.http_only},
      {"transport.mixed", &s.transport.mixed},
      {"transport.https_only", &s.transport.https_only}};
  const std::map<std::string, std::optional<double>*> fractions = {
      {"fingerprinting_fraction", &s.fingerprinting_fraction},
      {"party_mode.exclusively_third_fraction", &s.exclusively_third_fraction},
      {"party_mode.exclusively_first_fraction", &s.exclusively_first_fraction},
      {"party_mode.both_fraction", &s.both_fraction},
      {"avg_recipient_domains_per_fingerprinting_site",
       &s.avg_recipient_domains_per_fingerprinting_site},
      {"avg_bytes_per_fingerprinter", &s.avg_bytes_per_fingerprinter},
      {"avg_core_attributes_per_fingerprinter", &s.avg_core_attributes_per_fingerprinter}};
  const std::map<std::string, std::map<std::string, std::uint64_t>*> tables = {
      {"bytes_per_fingerprinter", &s.bytes_per_fingerprinter},
      {"attribute_frequency", &s.attribute_frequency},
      {"fingerprinter_site_reach", &s.fingerprinter_site_reach}};
  for (const auto& r : csv_file(files, "summary.csv", 5)) {
    const auto& metric = r[1];
    if (auto it = scalars.find(metric); it != scalars.end()) {
      *it->second = parse_u64(r[3]);
    } else if (auto f = fractions.find(metric); f != fractions.end()) {
      *f->second = parse_opt_double(r[3]);
    } else if (auto t = tables.find(metric); t != tables.end()) {
      (*t->second)[r[2]] = parse_u64(r[3]);
    } else if (metric == "fp_id_shares") {
      IdShare share{r[2], {}};
      std::string_view rest = r[3];
      while (!rest.empty()) {
        const auto sp = rest.find(' ');
        share.domains.emplace_back(rest.substr(0, sp));
        if (sp == std::string_view::npos) break;
        rest.remove_prefix(sp + 1);
      }
      s.fp_id_shares.push_back(std::move(share));
    } else {
      throw ParseError("summary.csv: unknown metric '" + metric + "'");
    }
  }

  auto ranking = [&](const std::string& name, std::size_t columns) {
    std::vector<RankRow> out;
    for (const auto& r : csv_file(files, name, columns)) out.push_back({r[2], parse_u64(r[3])});
    return out;
  };
  b.top_volume = ranking("top_volume.csv", 5);
  b.top_attributes = ranking("top_attributes.csv", 4);
  b.top_third_party = ranking("top_third_party.csv", 4);
  for (const auto& r : csv_file(files, "catalog_categories.csv", 3)) {
    b.catalog_categories.push_back({r[1], parse_u64(r[2])});
  }
  return b;
}

namespace {

json rows_json(const std::vector<RankRow>& rows, const char* key, const char* value, bool bytes) {
  json out = json::array();
  for (const auto& r : rows) {
    json j = {{key, r.key}, {value, r.value}};
    if (bytes) j["display"] = format_bytes(r.value);
    out.push_back(std::move(j));
  }
  return out;
}

std::vector<RankRow> rows_from(const json& j, const char* key, const char* value) {
  std::vector<RankRow> out;
  for (const auto& r : j) out.push_back({r.at(key).get<std::string>(), r.at(value).get<std::uint64_t>()});
  return out;
}

}  // namespace

std::string render_json(const ReportBundle& b) {
  json cats = json::array();
  for (const auto& c : b.catalog_categories) cats.push_back({{"category", c.category}, {"count", c.count}});
  json j = {{"format", kReportFormat},
            {"schema_version", kReportSchemaVersion},
            {"metadata",
             {{"log_sha256", b.metadata.log_sha256},
              {"catalog_version", b.metadata.catalog_version},
              {"suffix_table_version", b.metadata.suffix_table_version},
              {"config_sha256", b.metadata.config_sha256}}},
            {"summary", json::parse(summary_to_json(b.summary))},
            {"display",
             {{"total_event_bytes", format_bytes(b.summary.total_event_bytes)},
              {"avg_bytes_per_fingerprinter",
               b.summary.avg_bytes_per_fingerprinter
                   ? json(format_bytes(static_cast<std::uint64_t>(
                         std::llround(*b.summary.avg_bytes_per_fingerprinter))))
                   : json(nullptr)}}},
            {"tables",
             {{"top_volume", rows_json(b.top_volume, "domain", "bytes", true)},
              {"top_attributes", rows_json(b.top_attributes, "attribute", "events", false)},
              {"top_third_party", rows_json(b.top_third_party, "domain", "sites", false)},
              {"catalog_categories", cats}}}};
  return j.dump(2, ' ', false, json::error_handler_t::replace) + "\n";
}

ReportBundle parse_report_json(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ParseError(std::string("report is not JSON: ") + e.what());
  }
  if (!j.is_object() || j.value("format", "") != kReportFormat) {
    throw ValidationError("not an fpwatch report");
  }
  if (j.value("schema_version", 0) != kReportSchemaVersion) {
    throw ValidationError("unsupported report schema version");
  }
  try {
    ReportBundle b;
    const auto& m = j.at("metadata");
    b.metadata.log_sha256 = m.at("log_sha256");
    b.metadata.catalog_version = m.at("catalog_version");
    b.metadata.suffix_table_version = m.at("suffix_table_version");
    b.metadata.config_sha256 = m.at("config_sha256");
    b.summary = summary_from_json(j.at("summary").dump());
    const auto& t = j.at("tables");
    b.top_volume = rows_from(t.at("top_volume"), "domain", "bytes");
    b.top_attributes = rows_from(t.at("top_attributes"), "attribute", "events");
    b.top_third_party = rows_from(t.at("top_third_party"), "domain", "sites");
    for (const auto& c : t.at("catalog_categories")) {
      b.catalog_categories.push_back({c.at("category"), c.at("count")});
    }
    return b;
  } catch (const json::exception& e) {
    throw ParseError(std::string("bad report: ") + e.what());
  }
}

std::map<std::string, std::string> render_plot(const ReportBundle& b) {
  auto dat = [&](const std::vector<RankRow>& rows, const char* columns) {
    std::string out = "# log_sha256 " + b.metadata.log_sha256 + "\n# " + columns + "\n";
    for (const auto& r : rows) out += "\"" + r.key + "\" " + std::to_string(r.value) + "\n";
    return out;
  };
  std::vector<RankRow> cats;
  for (const auto& c : b.catalog_categories) cats.push_back({c.category, c.count});
  return {{"volume.dat", dat(b.top_volume, "domain bytes")},
          {"attributes.dat", dat(b.top_attributes, "attribute events")},
          {"third_party.dat", dat(b.top_third_party, "domain sites")},
          {"catalog.dat", dat(cats, "category count")}};
}

std::vector<std::filesystem::path> emit(const ReportBundle& bundle,
                                        const std::set<ReportFormat>& formats,
                                        const std::filesystem::path& out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());

  std::map<std::string, std::string> files;
  if (formats.count(ReportFormat::Csv)) files.merge(render_csv(bundle));
  if (formats.count(ReportFormat::Json)) files["report.json"] = render_json(bundle);
  if (formats.count(ReportFormat::Plot)) files.merge(render_plot(bundle));

  std::vector<std::filesystem::path> written;
  for (const auto& [name, content] : files) {
    const auto path = out_dir / name;
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << content;
    out.close();
    if (!out) throw IoError("cannot write " + path.string());
    written.push_back(path);
  }
  return written;
}

}  // namespace fpwatch
