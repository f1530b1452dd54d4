#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "fpwatch/catalog.h"

namespace fpwatch {

enum class Method { Get, Post, Head };
enum class Scheme { Http, Https };
enum class SourcePart { UrlQuery, Body, HeaderValue };
enum class PartyClass { FirstParty, ThirdParty };
enum class Decision { Forwarded, Blocked };
enum class Delivery { Delivered, Failed, NotAttempted };
enum class VisitStatus { Loaded, TimedOut, BrowserCrashed, NavigationError };

std::string_view to_string(Method m);
std::string_view to_string(Scheme s);
std::string_view to_string(SourcePart p);
std::string_view to_string(PartyClass p);
std::string_view to_string(Decision d);
std::string_view to_string(Delivery d);
std::string_view to_string(VisitStatus s);

std::optional<Method> parse_method(std::string_view s);
std::optional<Scheme> parse_scheme(std::string_view s);
std::optional<SourcePart> parse_source_part(std::string_view s);
std::optional<PartyClass> parse_party(std::string_view s);
std::optional<Decision> parse_decision(std::string_view s);
std::optional<Delivery> parse_delivery(std::string_view s);
std::optional<VisitStatus> parse_visit_status(std::string_view s);

// One intercepted GET/POST/HEAD request.
struct CaptureRecord {
  std::uint64_t sequence_no = 0;
  // Crawl visit the request was attributed to; 0 outside any visit window.
  std::uint64_t visit_no = 0;
  std::string page_origin;
  std::string host;
  std::uint16_t port = 0;
  std::string path;
  Method method = Method::Get;
  Scheme scheme = Scheme::Http;
  // Raw bytes after '?' in the request target.
  std::string query;
  std::string body;
  std::string referer;
  std::string content_type;
  // Custom (x-*) request headers, names lowercased, in arrival order.
  std::vector<std::pair<std::string, std::string>> extra_headers;
  std::int64_t timestamp_ms = 0;

  std::string destination() const { return host + path; }
  std::size_t payload_size() const { return query.size() + body.size(); }

  bool operator==(const CaptureRecord&) const = default;
};

struct AttributeHit {
  std::string attribute_id;
  std::string matched_text;
  SourcePart part = SourcePart::Body;
  // Header name for HeaderValue hits.
  std::string part_key;
  std::size_t layer_index = 0;
  std::size_t byte_offset = 0;
  DetectorKind kind = DetectorKind::ProfileBound;
  bool core = false;

  bool operator==(const AttributeHit&) const = default;
};

struct FingerprintIdHit {
  // "fp" or "fingerprint", lowercased.
  std::string label;
  std::string value;
  SourcePart part = SourcePart::Body;
  std::size_t layer_index = 0;

  bool operator==(const FingerprintIdHit&) const = default;
};

struct FingerprintingEvent {
  CaptureRecord record;
  std::vector<AttributeHit> hits;
  std::vector<FingerprintIdHit> fp_ids;
  std::optional<PartyClass> party;

  std::size_t core_hit_count() const;
  // Distinct core attribute ids, sorted.
  std::vector<std::string> core_attributes() const;

  bool operator==(const FingerprintingEvent&) const = default;
};

struct Verdict {
  Decision decision = Decision::Forwarded;
  std::optional<FingerprintingEvent> event;
};

// A capture as persisted in the capture log: the record, what the proxy did
// with it, and everything the detector found.
struct CaptureEntry {
  CaptureRecord record;
  Decision decision = Decision::Forwarded;
  Delivery delivery = Delivery::Delivered;
  bool event = false;
  std::optional<PartyClass> party;
  std::vector<AttributeHit> hits;
  std::vector<FingerprintIdHit> fp_ids;

  bool operator==(const CaptureEntry&) const = default;
};

// Outcome of one crawl visit. Its presence in the log commits the visit's
// captures.
struct VisitRecord {
  std::uint64_t visit_no = 0;
  std::string site;
  std::size_t site_index = 0;
  VisitStatus status = VisitStatus::Loaded;
  double load_time_s = 0;
  std::size_t capture_count = 0;
  bool revisited = false;
  std::int64_t started_ms = 0;
  std::int64_t ended_ms = 0;

  bool operator==(const VisitRecord&) const = default;
};

// A CONNECT tunnel (or upgraded connection) relayed without inspection.
struct TunnelRecord {
  std::uint64_t visit_no = 0;
  std::string page_origin;
  std::string host;
  std::uint16_t port = 0;
  std::uint64_t bytes_up = 0;
  std::uint64_t bytes_down = 0;
  std::int64_t timestamp_ms = 0;

  bool operator==(const TunnelRecord&) const = default;
};

}  // namespace fpwatch
