#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "fpwatch/capture_log.h"
#include "fpwatch/record.h"
#include "fpwatch/suffix_table.h"

namespace fpwatch {

inline constexpr std::string_view kSummaryFormat = "fpwatch-summary";
inline constexpr int kSummarySchemaVersion = 1;

struct PartyModeSplit {
  std::uint64_t exclusively_third = 0;
  std::uint64_t exclusively_first = 0;
  std::uint64_t both = 0;
  bool operator==(const PartyModeSplit&) const = default;
};

struct TransportSplit {
  std::uint64_t http_only = 0;
  std::uint64_t mixed = 0;
  std::uint64_t https_only = 0;
  bool operator==(const TransportSplit&) const = default;
};

struct IdShare {
  std::string identifier;
  std::vector<std::string> domains;  // sorted
  bool operator==(const IdShare&) const = default;
};

// Fractions and averages are nullopt when their denominator is zero.
struct SummaryStats {
  std::uint64_t sites_total = 0;
  std::uint64_t sites_timed_out = 0;
  std::uint64_t fingerprinting_sites = 0;
  std::optional<double> fingerprinting_fraction;

  PartyModeSplit party_mode;
  std::optional<double> exclusively_third_fraction;
  std::optional<double> exclusively_first_fraction;
  std::optional<double> both_fraction;

  // Recipient registrable domains with at least one event, first-party
  // recipients included.
  std::uint64_t distinct_fingerprinters = 0;
  std::optional<double> avg_recipient_domains_per_fingerprinting_site;
  std::uint64_t max_recipient_domains_single_site = 0;

  std::uint64_t events = 0;
  std::uint64_t total_event_bytes = 0;
  std::optional<double> avg_bytes_per_fingerprinter;
  std::map<std::string, std::uint64_t> bytes_per_fingerprinter;

  // Events carrying each core attribute; every core id is present.
  std::map<std::string, std::uint64_t> attribute_frequency;
  std::optional<double> avg_core_attributes_per_fingerprinter;

  TransportSplit transport;

  // Distinct visited sites where the domain received a third-party event.
  std::map<std::string, std::uint64_t> fingerprinter_site_reach;

  std::vector<IdShare> fp_id_shares;

  bool operator==(const SummaryStats&) const = default;
};

// Mergeable intermediate state. Aggregating shards of the same input and
// merging them in any order gives the same SummaryStats.
struct PartialStats {
  struct Site {
    bool timed_out = false;
    bool first = false;
    bool third = false;
    std::set<std::string> recipients;
    bool operator==(const Site&) const = default;
  };
  struct Fingerprinter {
    std::uint64_t bytes = 0;
    bool http = false;
    bool https = false;
    std::set<std::string> core_attributes;
    std::set<std::string> third_party_sites;
    bool operator==(const Fingerprinter&) const = default;
  };

  std::map<std::string, Site> sites;
  std::map<std::string, Fingerprinter> fingerprinters;
  std::map<std::string, std::uint64_t> attribute_frequency;
  std::map<std::string, std::set<std::string>> id_domains;
  std::uint64_t events = 0;
  std::uint64_t event_bytes = 0;

  bool operator==(const PartialStats&) const = default;
};

// Minimum length of a fingerprint ID for sharing detection.
inline constexpr std::size_t kMinSharedIdLength = 8;

void add_visit(PartialStats& acc, const VisitRecord& visit);
// `site` is the visited site the capture is attributed to.
void add_capture(PartialStats& acc, const std::string& site, const CaptureEntry& capture,
                 const SuffixTable& suffixes);
PartialStats merge(PartialStats a, const PartialStats& b);
SummaryStats finalize(const PartialStats& acc);

// Statistics over the effective visits and captures of a replayed log.
SummaryStats aggregate(const LogReplay& log, const SuffixTable& suffixes);
SummaryStats aggregate_log(const std::filesystem::path& log, const SuffixTable& suffixes);

enum class RankDimension { VolumePerFingerprinter, AttributeFrequency, FingerprinterSiteReach };
std::string_view to_string(RankDimension d);
std::optional<RankDimension> parse_rank_dimension(std::string_view s);

struct RankRow {
  std::string key;
  std::uint64_t value = 0;
  bool operator==(const RankRow&) const = default;
};

// Top n by value descending, ties by key ascending; zero values are left
// out. n <= 0 gives an empty table.
std::vector<RankRow> rank(const SummaryStats& stats, RankDimension dimension, int n);

// Identifiers (exact value, at least kMinSharedIdLength bytes) sent to two
// or more recipient domains, sorted by identifier.
std::vector<IdShare> detect_id_sharing(const LogReplay& log, const SuffixTable& suffixes);

// Stable JSON form carrying kSummaryFormat and kSummarySchemaVersion.
std::string summary_to_json(const SummaryStats& stats);
// Throws ParseError, or ValidationError for another format/version.
SummaryStats summary_from_json(std::string_view text);

}  // namespace fpwatch
