#pragma once

// Just enough HTTP/1.1 framing for a forward proxy.

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "net.h"

namespace fpwatch::http {

using Headers = std::vector<std::pair<std::string, std::string>>;

struct RequestHead {
  std::string method;
  std::string target;
  std::string version;
  Headers headers;

  // First value of a header, case-insensitive.
  std::optional<std::string> header(std::string_view name) const;
  void remove_header(std::string_view name);
  void set_header(std::string name, std::string value);
};

// Thrown for malformed framing; carries the status to answer with.
struct WireError {
  int status;
  std::string message;
};

inline constexpr std::size_t kMaxHeadBytes = 64 * 1024;
inline constexpr std::size_t kMaxBodyBytes = 64 * 1024 * 1024;

// nullopt on EOF before any byte of a new request. Throws WireError.
std::optional<RequestHead> read_request_head(net::Reader& in);

// Reads a Content-Length or chunked body; chunked bodies are returned
// de-chunked. Throws WireError.
std::string read_body(net::Reader& in, const RequestHead& head);

struct Target {
  std::string scheme;  // "http", "https" or empty for origin-form
  std::string host;
  std::uint16_t port = 0;
  std::string path;   // without query, at least "/"
  std::string query;  // raw, without '?'
};

// Absolute-form ("http://h:p/x?q") or origin-form ("/x?q") request targets.
std::optional<Target> parse_target(std::string_view target);
// "host:port" as sent with CONNECT; also used for Host headers.
std::optional<std::pair<std::string, std::uint16_t>> parse_authority(
    std::string_view authority, std::uint16_t default_port);

std::string serialize_head(const RequestHead& head);

std::string simple_response(int status, std::string_view reason,
                            std::string_view body = {},
                            std::string_view content_type = "text/plain");

}  // namespace fpwatch::http
