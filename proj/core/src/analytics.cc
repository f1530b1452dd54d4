#include "fpwatch/analytics.h"

#include <algorithm>

#include "fpwatch/catalog.h"
#include "fpwatch/error.h"
#include "json.hpp"

namespace fpwatch {

using nlohmann::json;

void add_visit(PartialStats& acc, const VisitRecord& visit) {
  auto& s = acc.sites[visit.site];
  s.timed_out = s.timed_out || visit.status == VisitStatus::TimedOut;
}

void add_capture(PartialStats& acc, const std::string& site, const CaptureEntry& capture,
                 const SuffixTable& suffixes) {
  const auto& r = capture.record;
  const auto recipient = recipient_domain(r.host, suffixes);
  for (const auto& id : capture.fp_ids) {
    if (id.value.size() >= kMinSharedIdLength) acc.id_domains[id.value].insert(recipient);
  }
  if (!capture.event) return;

  const auto party = classify_party(r.page_origin.empty() ? site : r.page_origin, r.host,
                                    suffixes)
                         .party;
  auto& s = acc.sites[site];
  (party == PartyClass::FirstParty ? s.first : s.third) = true;
  s.recipients.insert(recipient);

  auto& f = acc.fingerprinters[recipient];
  f.bytes += r.payload_size();
  (r.scheme == Scheme::Https ? f.https : f.http) = true;
  if (party == PartyClass::ThirdParty) f.third_party_sites.insert(site);

  std::set<std::string> attrs;
  for (const auto& h : capture.hits) {
    if (h.core) attrs.insert(h.attribute_id);
  }
  for (const auto& a : attrs) {
    ++acc.attribute_frequency[a];
    f.core_attributes.insert(a);
  }
  ++acc.events;
  acc.event_bytes += r.payload_size();
}

PartialStats merge(PartialStats a, const PartialStats& b) {
  for (const auto& [name, s] : b.sites) {
    auto& t = a.sites[name];
    t.timed_out = t.timed_out || s.timed_out;
    t.first = t.first || s.first;
    t.third = t.third || s.third;
    t.recipients.insert(s.recipients.begin(), s.recipients.end());
  }
  for (const auto& [domain, f] : b.fingerprinters) {
    auto& t = a.fingerprinters[domain];
    t.bytes += f.bytes;
    t.http = t.http || f.http;
    t.https = t.https || f.https;
    t.core_attributes.insert(f.core_attributes.begin(), f.core_attributes.end());
    t.third_party_sites.insert(f.third_party_sites.begin(), f.third_party_sites.end());
  }
  for (const auto& [attr, n] : b.attribute_frequency) a.attribute_frequency[attr] += n;
  for (const auto& [id, domains] : b.id_domains) {
    a.id_domains[id].insert(domains.begin(), domains.end());
  }
  a.events += b.events;
  a.event_bytes += b.event_bytes;
  return a;
}

namespace {

std::optional<double> ratio(std::uint64_t num, std::uint64_t den) {
  if (den == 0) return std::nullopt;
  return static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

SummaryStats finalize(const PartialStats& acc) {
  SummaryStats s;
  // Sites only seen through captures (no visit record) are not counted.
  std::uint64_t recipient_sum = 0;
  for (const auto& [name, site] : acc.sites) {
    ++s.sites_total;
    if (site.timed_out) ++s.sites_timed_out;
    if (!site.first && !site.third) continue;
    ++s.fingerprinting_sites;
    if (site.first && site.third) {
      ++s.party_mode.both;
    } else if (site.first) {
      ++s.party_mode.exclusively_first;
    } else {
      ++s.party_mode.exclusively_third;
    }
    recipient_sum += site.recipients.size();
    s.max_recipient_domains_single_site =
        std::max<std::uint64_t>(s.max_recipient_domains_single_site, site.recipients.size());
  }
  s.fingerprinting_fraction = ratio(s.fingerprinting_sites, s.sites_total);
  s.exclusively_third_fraction = ratio(s.party_mode.exclusively_third, s.fingerprinting_sites);
  s.exclusively_first_fraction = ratio(s.party_mode.exclusively_first, s.fingerprinting_sites);
  s.both_fraction = ratio(s.party_mode.both, s.fingerprinting_sites);
  s.avg_recipient_domains_per_fingerprinting_site = ratio(recipient_sum, s.fingerprinting_sites);

  std::uint64_t attr_sum = 0;
  for (const auto& [domain, f] : acc.fingerprinters) {
    s.bytes_per_fingerprinter[domain] = f.bytes;
    attr_sum += f.core_attributes.size();
    if (f.http && f.https) {
      ++s.transport.mixed;
    } else if (f.https) {
      ++s.transport.https_only;
    } else {
      ++s.transport.http_only;
    }
    if (!f.third_party_sites.empty()) s.fingerprinter_site_reach[domain] = f.third_party_sites.size();
  }
  s.distinct_fingerprinters = acc.fingerprinters.size();
  s.events = acc.events;
  s.total_event_bytes = acc.event_bytes;
  s.avg_bytes_per_fingerprinter = ratio(s.total_event_bytes, s.distinct_fingerprinters);
  s.avg_core_attributes_per_fingerprinter = ratio(attr_sum, s.distinct_fingerprinters);

  for (const auto id : kCoreAttributeIds) s.attribute_frequency[std::string(id)] = 0;
  for (const auto& [attr, n] : acc.attribute_frequency) s.attribute_frequency[attr] += n;

  for (const auto& [id, domains] : acc.id_domains) {
    if (domains.size() >= 2) s.fp_id_shares.push_back({id, {domains.begin(), domains.end()}});
  }
  return s;
}

namespace {

PartialStats accumulate(const LogReplay& log, const SuffixTable& suffixes) {
  PartialStats acc;
  std::map<std::uint64_t, std::string> site_of;
  for (const auto& [site, v] : log.effective_visits()) {
    add_visit(acc, v);
    site_of[v.visit_no] = v.site;
  }
  for (const auto& c : log.effective_captures()) {
    const auto it = site_of.find(c.record.visit_no);
    if (it != site_of.end()) add_capture(acc, it->second, c, suffixes);
  }
  return acc;
}

}  // namespace

SummaryStats aggregate(const LogReplay& log, const SuffixTable& suffixes) {
  return finalize(accumulate(log, suffixes));
}

SummaryStats aggregate_log(const std::filesystem::path& log, const SuffixTable& suffixes) {
  return aggregate(read_log(log), suffixes);
}

std::string_view to_string(RankDimension d) {
  switch (d) {
    case RankDimension::VolumePerFingerprinter: return "volume_per_fingerprinter";
    case RankDimension::AttributeFrequency: return "attribute_frequency";
    case RankDimension::FingerprinterSiteReach: return "fingerprinter_site_reach";
  }
  return "";
}

std::optional<RankDimension> parse_rank_dimension(std::string_view s) {
  for (auto d : {RankDimension::VolumePerFingerprinter, RankDimension::AttributeFrequency,
                 RankDimension::FingerprinterSiteReach}) {
    if (to_string(d) == s) return d;
  }
  return std::nullopt;
}

std::vector<RankRow> rank(const SummaryStats& stats, RankDimension dimension, int n) {
  if (n <= 0) return {};
  const auto& source = dimension == RankDimension::VolumePerFingerprinter ? stats.bytes_per_fingerprinter
                       : dimension == RankDimension::AttributeFrequency  ? stats.attribute_frequency
                                                                         : stats.fingerprinter_site_reach;
  std::vector<RankRow> rows;
  for (const auto& [key, value] : source) {
    if (value > 0) rows.push_back({key, value});
  }
  std::sort(rows.begin(), rows.end(), [](const RankRow& a, const RankRow& b) {
    return a.value != b.value ? a.value > b.value : a.key < b.key;
  });
  if (rows.size() > static_cast<std::size_t>(n)) rows.resize(static_cast<std::size_t>(n));
  return rows;
}

std::vector<IdShare> detect_id_sharing(const LogReplay& log, const SuffixTable& suffixes) {
  return aggregate(log, suffixes).fp_id_shares;
}

namespace {

json opt(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::optional<double> opt_from(const json& j, const char* key) {
  const auto& v = j.at(key);
  if (v.is_null()) return std::nullopt;
  return v.get<double>();
}

}  // namespace

std::string summary_to_json(const SummaryStats& s) {
  json shares = json::array();
  for (const auto& share : s.fp_id_shares) {
    shares.push_back({{"identifier", share.identifier}, {"domains", share.domains}});
  }
  json j = {
      {"format", kSummaryFormat},
      {"schema_version", kSummarySchemaVersion},
      {"sites_total", s.sites_total},
      {"sites_timed_out", s.sites_timed_out},
      {"fingerprinting_sites", s.fingerprinting_sites},
      {"fingerprinting_fraction", opt(s.fingerprinting_fraction)},
      {"party_mode",
       {{"exclusively_third", s.party_mode.exclusively_third},
        {"exclusively_first", s.party_mode.exclusively_first},
        {"both", s.party_mode.both},
        {"exclusively_third_fraction", opt(s.exclusively_third_fraction)},
        {"exclusively_first_fraction", opt(s.exclusively_first_fraction)},
        {"both_fraction", opt(s.both_fraction)}}},
      {"distinct_fingerprinters", s.distinct_fingerprinters},
      {"avg_recipient_domains_per_fingerprinting_site",
       opt(s.avg_recipient_domains_per_fingerprinting_site)},
      {"max_recipient_domains_single_site", s.max_recipient_domains_single_site},
      {"events", s.events},
      {"total_event_bytes", s.total_event_bytes},
      {"avg_bytes_per_fingerprinter", opt(s.avg_bytes_per_fingerprinter)},
      {"bytes_per_fingerprinter", s.bytes_per_fingerprinter},
      {"attribute_frequency", s.attribute_frequency},
      {"avg_core_attributes_per_fingerprinter", opt(s.avg_core_attributes_per_fingerprinter)},
      {"transport",
       {{"http_only", s.transport.http_only},
        {"mixed", s.transport.mixed},
        {"https_only", s.transport.https_only}}},
      {"fingerprinter_site_reach", s.fingerprinter_site_reach},
      {"fp_id_shares", shares},
  };
  return j.dump(2, ' ', false, json::error_handler_t::replace) + "\n";
}

SummaryStats summary_from_json(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ParseError(std::string("summary is not JSON: ") + e.what());
  }
  if (!j.is_object() || j.value("format", "") != kSummaryFormat) {
    throw ValidationError("not an fpwatch summary");
  }
  if (j.value("schema_version", 0) != kSummarySchemaVersion) {
    throw ValidationError("unsupported summary schema version " +
                          j.value("schema_version", json(nullptr)).dump());
  }
  try {
    SummaryStats s;
    s.sites_total = j.at("sites_total");
    s.sites_timed_out = j.at("sites_timed_out");
    s.fingerprinting_sites = j.at("fingerprinting_sites");
    s.fingerprinting_fraction = opt_from(j, "fingerprinting_fraction");
    const auto& pm = j.at("party_mode");
    s.party_mode.exclusively_third = pm.at("exclusively_third");
    s.party_mode.exclusively_first = pm.at("exclusively_first");
    s.party_mode.both = pm.at("both");
    s.exclusively_third_fraction = opt_from(pm, "exclusively_third_fraction");
    s.exclusively_first_fraction = opt_from(pm, "exclusively_first_fraction");
    s.both_fraction = opt_from(pm, "both_fraction");
    s.distinct_fingerprinters = j.at("distinct_fingerprinters");
    s.avg_recipient_domains_per_fingerprinting_site =
        opt_from(j, "avg_recipient_domains_per_fingerprinting_site");
    s.max_recipient_domains_single_site = j.at("max_recipient_domains_single_site");
    s.events = j.at("events");
    s.total_event_bytes = j.at("total_event_bytes");
    s.avg_bytes_per_fingerprinter = opt_from(j, "avg_bytes_per_fingerprinter");
    s.bytes_per_fingerprinter = j.at("bytes_per_fingerprinter").get<std::map<std::string, std::uint64_t>>();
    s.attribute_frequency = j.at("attribute_frequency").get<std::map<std::string, std::uint64_t>>();
    s.avg_core_attributes_per_fingerprinter = opt_from(j, "avg_core_attributes_per_fingerprinter");
    const auto& t = j.at("transport");
    s.transport.http_only = t.at("http_only");
    s.transport.mixed = t.at("mixed");
    s.transport.https_only = t.at("https_only");
    s.fingerprinter_site_reach =
        j.at("fingerprinter_site_reach").get<std::map<std::string, std::uint64_t>>();
    for (const auto& share : j.at("fp_id_shares")) {
      s.fp_id_shares.push_back({share.at("identifier").get<std::string>(),
                                share.at("domains").get<std::vector<std::string>>()});
    }
    return s;
  } catch (const json::exception& e) {
    throw ParseError(std::string("bad summary: ") + e.what());
  }
}

}  // namespace fpwatch
