#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <string>
#include <string_view>
#include <vector>

#include "fpwatch/record.h"

namespace fpwatch {

inline constexpr std::string_view kCaptureLogFormat = "fpwatch-capture-log";
inline constexpr int kCaptureLogVersion = 1;

// Destination for everything the proxy records. Implementations must be
// safe to call from many threads; append failures throw IoError.
class CaptureSink {
 public:
  virtual ~CaptureSink() = default;
  virtual void append(const CaptureEntry& entry) = 0;
  virtual void append(const VisitRecord& visit) = 0;
  virtual void append(const TunnelRecord& tunnel) = 0;
  virtual void append_visit_begin(std::uint64_t visit_no, std::string_view site,
                                  std::int64_t timestamp_ms) = 0;
  virtual std::uint64_t allocate_sequence_no() = 0;
  virtual std::uint64_t allocate_visit_no() = 0;
};

// Newline-delimited JSON. The first line is a header record; every later
// line is one capture, visit, or tunnel record. A record exists once its
// terminating newline is written, so a crash can only tear the final line.
//
// All appends are serialized through one mutex; each record is written with
// a single write(2) on an O_APPEND descriptor and optionally fdatasync'd.
class CaptureLogWriter : public CaptureSink {
 public:
  struct Options {
    bool sync = true;
    std::string catalog_version;
  };

  // Creates the log (writing the header) or reopens an existing one for
  // appending. An unterminated final line left by a crash is truncated.
  // Throws IoError when the file cannot be opened or is not a capture log.
  CaptureLogWriter(const std::filesystem::path& path, Options options);
  ~CaptureLogWriter() override;

  CaptureLogWriter(const CaptureLogWriter&) = delete;
  CaptureLogWriter& operator=(const CaptureLogWriter&) = delete;

  // Each throws IoError on write failure.
  void append(const CaptureEntry& entry) override;
  void append(const VisitRecord& visit) override;
  void append(const TunnelRecord& tunnel) override;

  // append_log(record, verdict, ...) as a single durable capture line.
  void append_log(const CaptureRecord& record, const Verdict& verdict,
                  Delivery delivery, const std::vector<AttributeHit>& hits,
                  const std::vector<FingerprintIdHit>& fp_ids);

  // Marks the start of a visit's attribution window. Not a commit.
  void append_visit_begin(std::uint64_t visit_no, std::string_view site,
                          std::int64_t timestamp_ms) override;

  // Numbers continue past everything already in the log, so a resumed run
  // never reuses one. Allocation does not touch the file.
  std::uint64_t allocate_sequence_no() override;
  std::uint64_t allocate_visit_no() override;

  const std::filesystem::path& path() const { return path_; }

 private:
  void write_line(const std::string& line);

  std::filesystem::path path_;
  Options options_;
  int fd_ = -1;
  std::mutex mutex_;
  std::uint64_t next_sequence_no_ = 1;
  std::uint64_t next_visit_no_ = 1;
};

struct LogReplay {
  std::string catalog_version;
  std::vector<CaptureEntry> captures;
  std::vector<VisitRecord> visits;
  std::vector<TunnelRecord> tunnels;
  std::vector<std::string> warnings;
  std::uint64_t max_sequence_no = 0;
  std::uint64_t max_visit_no = 0;

  // Per site, the last committed visit record.
  std::map<std::string, VisitRecord> effective_visits() const;

  // Captures attributed to the effective visit of their page origin, in log
  // order. Captures from superseded or uncommitted visits, and captures made
  // outside any visit window, are dropped.
  std::vector<CaptureEntry> effective_captures() const;
};

// Parses a whole capture log. A torn or corrupt final line is ignored with a
// warning; a corrupt line elsewhere throws ParseError; a missing header or a
// version mismatch throws ValidationError.
LogReplay replay_log(std::string_view bytes);
LogReplay read_log(const std::filesystem::path& path);

// JSON line encodings, exposed for tests and tools.
std::string encode_capture(const CaptureEntry& entry);
std::string encode_visit(const VisitRecord& visit);
std::string encode_tunnel(const TunnelRecord& tunnel);
std::string encode_log_header(std::string_view catalog_version);
// Throws ParseError.
VisitRecord decode_visit(std::string_view line);

// SHA-256 over what the browser sent (origin, method, scheme, host, port,
// path, query, body, headers), ignoring sequence number, visit and time, so
// the same request captured twice has the same digest.
std::string record_digest(const CaptureRecord& record);

}  // namespace fpwatch
