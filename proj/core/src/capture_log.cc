#include "fpwatch/capture_log.h"

#include <fcntl.h>
#include <sys/stat.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include "fpwatch/codec.h"
#include "fpwatch/error.h"
#include "json.hpp"

namespace fpwatch {

using nlohmann::json;

namespace {

std::string errno_text() { return std::strerror(errno); }

// Byte strings that are not valid UTF-8 are stored base64-encoded under
// "<key>_b64" so the log round-trips exactly.
void put_bytes(json& j, const char* key, const std::string& value) {
  if (codec::is_valid_utf8(value)) {
    j[key] = value;
  } else {
    j[std::string(key) + "_b64"] = codec::base64_encode(value);
  }
}

std::string get_bytes(const json& j, const char* key) {
  if (auto it = j.find(key); it != j.end()) return it->get<std::string>();
  if (auto it = j.find(std::string(key) + "_b64"); it != j.end()) {
    auto decoded = codec::base64_decode(it->get<std::string>());
    if (!decoded) throw ParseError(std::string("bad base64 in ") + key + "_b64");
    return *decoded;
  }
  return {};
}

template <typename T, typename F>
T parse_enum(const json& j, const char* key, F parse) {
  const auto s = j.at(key).get<std::string>();
  auto v = parse(s);
  if (!v) throw ParseError(std::string("unknown ") + key + " '" + s + "'");
  return *v;
}

json hit_json(const AttributeHit& h) {
  json j = {{"attr", h.attribute_id},
            {"core", h.core},
            {"kind", to_string(h.kind)},
            {"part", to_string(h.part)},
            {"layer", h.layer_index},
            {"offset", h.byte_offset}};
  put_bytes(j, "text", h.matched_text);
  if (!h.part_key.empty()) j["part_key"] = h.part_key;
  return j;
}

AttributeHit hit_from(const json& j) {
  AttributeHit h;
  h.attribute_id = j.at("attr").get<std::string>();
  h.core = j.at("core").get<bool>();
  h.kind = parse_enum<DetectorKind>(j, "kind", parse_detector_kind);
  h.part = parse_enum<SourcePart>(j, "part", parse_source_part);
  h.layer_index = j.at("layer").get<std::size_t>();
  h.byte_offset = j.at("offset").get<std::size_t>();
  h.matched_text = get_bytes(j, "text");
  h.part_key = j.value("part_key", "");
  return h;
}

}  // namespace

std::string encode_log_header(std::string_view catalog_version) {
  json j = {{"type", "header"},
            {"format", kCaptureLogFormat},
            {"version", kCaptureLogVersion},
            {"catalog_version", catalog_version}};
  return j.dump();
}

std::string encode_capture(const CaptureEntry& e) {
  const auto& r = e.record;
  json j = {{"type", "capture"},
            {"seq", r.sequence_no},
            {"visit", r.visit_no},
            {"ts", r.timestamp_ms},
            {"page_origin", r.page_origin},
            {"host", r.host},
            {"port", r.port},
            {"path", r.path},
            {"method", to_string(r.method)},
            {"scheme", to_string(r.scheme)},
            {"referer", r.referer},
            {"content_type", r.content_type},
            {"payload_size", r.payload_size()},
            {"verdict", to_string(e.decision)},
            {"delivery", to_string(e.delivery)},
            {"event", e.event}};
  put_bytes(j, "query", r.query);
  put_bytes(j, "body", r.body);
  json headers = json::array();
  for (const auto& [k, v] : r.extra_headers) {
    headers.push_back(json::array({k, codec::utf8_lossy(v)}));
  }
  j["headers"] = std::move(headers);
  j["party"] = e.party ? json(to_string(*e.party)) : json(nullptr);
  json hits = json::array();
  for (const auto& h : e.hits) hits.push_back(hit_json(h));
  j["hits"] = std::move(hits);
  json ids = json::array();
  for (const auto& f : e.fp_ids) {
    json fj = {{"label", f.label},
               {"part", to_string(f.part)},
               {"layer", f.layer_index}};
    put_bytes(fj, "value", f.value);
    ids.push_back(std::move(fj));
  }
  j["fp_ids"] = std::move(ids);
  return j.dump();
}

std::string encode_visit(const VisitRecord& v) {
  json j = {{"type", "visit"},
            {"visit", v.visit_no},
            {"site", v.site},
            {"site_index", v.site_index},
            {"status", to_string(v.status)},
            {"load_time", v.load_time_s},
            {"captures", v.capture_count},
            {"revisited", v.revisited},
            {"started", v.started_ms},
            {"ended", v.ended_ms}};
  return j.dump();
}

std::string encode_tunnel(const TunnelRecord& t) {
  json j = {{"type", "tunnel"},
            {"visit", t.visit_no},
            {"page_origin", t.page_origin},
            {"host", t.host},
            {"port", t.port},
            {"bytes_up", t.bytes_up},
            {"bytes_down", t.bytes_down},
            {"ts", t.timestamp_ms}};
  return j.dump();
}

namespace {

CaptureEntry capture_from(const json& j) {
  CaptureEntry e;
  auto& r = e.record;
  r.sequence_no = j.at("seq").get<std::uint64_t>();
  r.visit_no = j.at("visit").get<std::uint64_t>();
  r.timestamp_ms = j.at("ts").get<std::int64_t>();
  r.page_origin = j.at("page_origin").get<std::string>();
  r.host = j.at("host").get<std::string>();
  r.port = j.at("port").get<std::uint16_t>();
  r.path = j.at("path").get<std::string>();
  r.method = parse_enum<Method>(j, "method", parse_method);
  r.scheme = parse_enum<Scheme>(j, "scheme", parse_scheme);
  r.referer = j.value("referer", "");
  r.content_type = j.value("content_type", "");
  r.query = get_bytes(j, "query");
  r.body = get_bytes(j, "body");
  for (const auto& h : j.at("headers")) {
    r.extra_headers.emplace_back(h.at(0).get<std::string>(), h.at(1).get<std::string>());
  }
  e.decision = parse_enum<Decision>(j, "verdict", parse_decision);
  e.delivery = parse_enum<Delivery>(j, "delivery", parse_delivery);
  e.event = j.at("event").get<bool>();
  if (const auto& p = j.at("party"); !p.is_null()) {
    e.party = parse_enum<PartyClass>(j, "party", parse_party);
  }
  for (const auto& h : j.at("hits")) e.hits.push_back(hit_from(h));
  for (const auto& f : j.at("fp_ids")) {
    FingerprintIdHit id;
    id.label = f.at("label").get<std::string>();
    id.part = parse_enum<SourcePart>(f, "part", parse_source_part);
    id.layer_index = f.at("layer").get<std::size_t>();
    id.value = get_bytes(f, "value");
    e.fp_ids.push_back(std::move(id));
  }
  return e;
}

VisitRecord visit_from(const json& j) {
  VisitRecord v;
  v.visit_no = j.at("visit").get<std::uint64_t>();
  v.site = j.at("site").get<std::string>();
  v.site_index = j.value("site_index", std::size_t{0});
  v.status = parse_enum<VisitStatus>(j, "status", parse_visit_status);
  v.load_time_s = j.at("load_time").get<double>();
  v.capture_count = j.value("captures", std::size_t{0});
  v.revisited = j.value("revisited", false);
  v.started_ms = j.value("started", std::int64_t{0});
  v.ended_ms = j.value("ended", std::int64_t{0});
  return v;
}

TunnelRecord tunnel_from(const json& j) {
  TunnelRecord t;
  t.visit_no = j.at("visit").get<std::uint64_t>();
  t.page_origin = j.value("page_origin", "");
  t.host = j.at("host").get<std::string>();
  t.port = j.at("port").get<std::uint16_t>();
  t.bytes_up = j.value("bytes_up", std::uint64_t{0});
  t.bytes_down = j.value("bytes_down", std::uint64_t{0});
  t.timestamp_ms = j.value("ts", std::int64_t{0});
  return t;
}

void check_header(const json& j) {
  if (!j.is_object() || j.value("type", "") != "header" ||
      j.value("format", "") != kCaptureLogFormat) {
    throw ValidationError("not a capture log (missing header)");
  }
  const int version = j.value("version", 0);
  if (version != kCaptureLogVersion) {
    throw ValidationError("unsupported capture log version " + std::to_string(version));
  }
}

// Applies one non-header line to the replay. Throws on malformed content.
void apply_line(LogReplay& out, std::string_view line) {
  const json j = json::parse(line);
  const auto type = j.at("type").get<std::string>();
  if (type == "capture") {
    auto e = capture_from(j);
    out.max_sequence_no = std::max(out.max_sequence_no, e.record.sequence_no);
    out.max_visit_no = std::max(out.max_visit_no, e.record.visit_no);
    out.captures.push_back(std::move(e));
  } else if (type == "visit") {
    auto v = visit_from(j);
    out.max_visit_no = std::max(out.max_visit_no, v.visit_no);
    out.visits.push_back(std::move(v));
  } else if (type == "visit_begin") {
    out.max_visit_no = std::max(out.max_visit_no, j.at("visit").get<std::uint64_t>());
  } else if (type == "tunnel") {
    out.tunnels.push_back(tunnel_from(j));
  } else if (type == "header") {
    throw ParseError("duplicate header");
  } else {
    throw ParseError("unknown record type '" + type + "'");
  }
}

}  // namespace

VisitRecord decode_visit(std::string_view line) {
  try {
    return visit_from(json::parse(line));
  } catch (const ParseError&) {
    throw;
  } catch (const std::exception& e) {
    throw ParseError(std::string("bad visit record: ") + e.what());
  }
}

LogReplay replay_log(std::string_view bytes) {
  LogReplay out;
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  bool torn = false;
  while (start < bytes.size()) {
    const auto nl = bytes.find('\n', start);
    if (nl == std::string_view::npos) {
      lines.push_back(bytes.substr(start));
      torn = true;
      break;
    }
    lines.push_back(bytes.substr(start, nl - start));
    start = nl + 1;
  }
  if (lines.empty()) throw ValidationError("not a capture log (empty)");

  json header = json::parse(lines.front(), nullptr, false);
  if (header.is_discarded()) throw ValidationError("not a capture log (bad header)");
  check_header(header);
  out.catalog_version = header.value("catalog_version", "");

  for (std::size_t i = 1; i < lines.size(); ++i) {
    const bool last = i + 1 == lines.size();
    if (last && torn) {
      out.warnings.push_back("line " + std::to_string(i + 1) +
                             ": ignoring unterminated final record");
      break;
    }
    if (codec::trim(lines[i]).empty()) continue;
    try {
      apply_line(out, lines[i]);
    } catch (const std::exception& ex) {
      if (last) {
        out.warnings.push_back("line " + std::to_string(i + 1) +
                               ": ignoring corrupt final record: " + ex.what());
        break;
      }
      throw ParseError(std::string("corrupt capture log record: ") + ex.what(), i + 1);
    }
  }
  return out;
}

LogReplay read_log(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open capture log " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return replay_log(ss.str());
}

std::map<std::string, VisitRecord> LogReplay::effective_visits() const {
  std::map<std::string, VisitRecord> out;
  for (const auto& v : visits) out[v.site] = v;
  return out;
}

std::vector<CaptureEntry> LogReplay::effective_captures() const {
  std::set<std::uint64_t> live;
  for (const auto& [site, v] : effective_visits()) live.insert(v.visit_no);
  std::vector<CaptureEntry> out;
  for (const auto& e : captures) {
    if (e.record.visit_no != 0 && live.count(e.record.visit_no)) out.push_back(e);
  }
  return out;
}

CaptureLogWriter::CaptureLogWriter(const std::filesystem::path& path, Options options)
    : path_(path), options_(std::move(options)) {
  fd_ = ::open(path.c_str(), O_RDWR | O_CREAT | O_CLOEXEC, 0644);
  if (fd_ < 0) throw IoError("cannot open capture log " + path.string() + ": " + errno_text());

  std::string existing;
  {
    char buf[65536];
    for (;;) {
      const auto n = ::read(fd_, buf, sizeof buf);
      if (n < 0) {
        if (errno == EINTR) continue;
        const auto msg = errno_text();
        ::close(fd_);
        throw IoError("cannot read capture log " + path.string() + ": " + msg);
      }
      if (n == 0) break;
      existing.append(buf, static_cast<std::size_t>(n));
    }
  }

  try {
    if (existing.empty()) {
      write_line(encode_log_header(options_.catalog_version));
    } else {
      const auto keep = existing.rfind('\n');
      const std::size_t new_size = keep == std::string::npos ? 0 : keep + 1;
      if (new_size < existing.size()) {
        if (::ftruncate(fd_, static_cast<off_t>(new_size)) != 0) {
          throw IoError("cannot truncate torn record: " + errno_text());
        }
        existing.resize(new_size);
      }
      if (existing.empty()) {
        write_line(encode_log_header(options_.catalog_version));
      } else {
        const auto replay = replay_log(existing);
        next_sequence_no_ = replay.max_sequence_no + 1;
        next_visit_no_ = replay.max_visit_no + 1;
      }
    }
  } catch (const IoError&) {
    ::close(fd_);
    throw;
  } catch (const std::exception& ex) {
    ::close(fd_);
    throw IoError("cannot append to " + path.string() + ": " + ex.what());
  }
  // Subsequent writes go to the end regardless of the read position.
  const int flags = ::fcntl(fd_, F_GETFL);
  ::fcntl(fd_, F_SETFL, flags | O_APPEND);
}

CaptureLogWriter::~CaptureLogWriter() {
  if (fd_ >= 0) ::close(fd_);
}

void CaptureLogWriter::write_line(const std::string& line) {
  std::string buf = line;
  buf.push_back('\n');
  std::size_t off = 0;
  while (off < buf.size()) {
    const auto n = ::write(fd_, buf.data() + off, buf.size() - off);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw IoError("capture log write failed: " + errno_text());
    }
    off += static_cast<std::size_t>(n);
  }
  if (options_.sync && ::fdatasync(fd_) != 0) {
    throw IoError("capture log sync failed: " + errno_text());
  }
}

void CaptureLogWriter::append(const CaptureEntry& entry) {
  const auto line = encode_capture(entry);
  std::lock_guard lock(mutex_);
  write_line(line);
}

void CaptureLogWriter::append(const VisitRecord& visit) {
  const auto line = encode_visit(visit);
  std::lock_guard lock(mutex_);
  write_line(line);
}

void CaptureLogWriter::append(const TunnelRecord& tunnel) {
  const auto line = encode_tunnel(tunnel);
  std::lock_guard lock(mutex_);
  write_line(line);
}

void CaptureLogWriter::append_visit_begin(std::uint64_t visit_no, std::string_view site,
                                          std::int64_t timestamp_ms) {
  const json j = {{"type", "visit_begin"},
                  {"visit", visit_no},
                  {"site", site},
                  {"ts", timestamp_ms}};
  std::lock_guard lock(mutex_);
  write_line(j.dump());
}

void CaptureLogWriter::append_log(const CaptureRecord& record, const Verdict& verdict,
                                  Delivery delivery,
                                  const std::vector<AttributeHit>& hits,
                                  const std::vector<FingerprintIdHit>& fp_ids) {
  CaptureEntry e;
  e.record = record;
  e.decision = verdict.decision;
  e.delivery = delivery;
  e.event = verdict.event.has_value();
  if (verdict.event) e.party = verdict.event->party;
  e.hits = hits;
  e.fp_ids = fp_ids;
  append(e);
}

std::uint64_t CaptureLogWriter::allocate_sequence_no() {
  std::lock_guard lock(mutex_);
  return next_sequence_no_++;
}

std::uint64_t CaptureLogWriter::allocate_visit_no() {
  std::lock_guard lock(mutex_);
  return next_visit_no_++;
}

}  // namespace fpwatch

namespace fpwatch {

std::string record_digest(const CaptureRecord& r) {
  std::string buf;
  auto field = [&](std::string_view s) {
    buf += std::to_string(s.size());
    buf += ':';
    buf += s;
  };
  field(r.page_origin);
  field(to_string(r.method));
  field(to_string(r.scheme));
  field(r.host);
  field(std::to_string(r.port));
  field(r.path);
  field(r.query);
  field(r.body);
  field(r.referer);
  field(r.content_type);
  for (const auto& [k, v] : r.extra_headers) {
    field(k);
    field(v);
  }
  return codec::sha256_hex(buf);
}

}  // namespace fpwatch
