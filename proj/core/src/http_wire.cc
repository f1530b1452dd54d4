#include "http_wire.h"

#include <charconv>

#include "fpwatch/codec.h"

namespace fpwatch::http {

namespace {

bool iequals(std::string_view a, std::string_view b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (std::tolower(static_cast<unsigned char>(a[i])) !=
        std::tolower(static_cast<unsigned char>(b[i])))
      return false;
  }
  return true;
}

bool is_token(std::string_view s) {
  if (s.empty()) return false;
  for (const char c : s) {
    const auto u = static_cast<unsigned char>(c);
    if (u <= 0x20 || u >= 0x7F || std::string_view("()<>@,;:\\\"/[]?={}").find(c) !=
                                      std::string_view::npos)
      return false;
  }
  return true;
}

template <typename T>
std::optional<T> parse_uint(std::string_view s, int base = 10) {
  T v{};
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v, base);
  if (ec != std::errc() || p != s.data() + s.size() || s.empty()) return std::nullopt;
  return v;
}

}  // namespace

std::optional<std::string> RequestHead::header(std::string_view name) const {
  for (const auto& [k, v] : headers) {
    if (iequals(k, name)) return v;
  }
  return std::nullopt;
}

void RequestHead::remove_header(std::string_view name) {
  std::erase_if(headers, [&](const auto& kv) { return iequals(kv.first, name); });
}

void RequestHead::set_header(std::string name, std::string value) {
  remove_header(name);
  headers.emplace_back(std::move(name), std::move(value));
}

std::optional<RequestHead> read_request_head(net::Reader& in) {
  std::string line;
  // Tolerate stray blank lines between requests.
  do {
    if (!in.read_line(line, kMaxHeadBytes)) return std::nullopt;
  } while (line.empty());

  RequestHead head;
  const auto sp1 = line.find(' ');
  const auto sp2 = line.rfind(' ');
  if (sp1 == std::string::npos || sp2 == sp1) throw WireError{400, "malformed request line"};
  head.method = line.substr(0, sp1);
  head.target = line.substr(sp1 + 1, sp2 - sp1 - 1);
  head.version = line.substr(sp2 + 1);
  if (!is_token(head.method) || head.target.empty() || !head.version.starts_with("HTTP/1.")) {
    throw WireError{400, "malformed request line"};
  }

  std::size_t total = line.size();
  for (;;) {
    if (!in.read_line(line, kMaxHeadBytes)) throw WireError{400, "truncated headers"};
    total += line.size();
    if (total > kMaxHeadBytes) throw WireError{431, "headers too large"};
    if (line.empty()) break;
    if (line.front() == ' ' || line.front() == '\t') {
      if (head.headers.empty()) throw WireError{400, "bad header continuation"};
      head.headers.back().second += " " + std::string(codec::trim(line));
      continue;
    }
    const auto colon = line.find(':');
    if (colon == std::string::npos || !is_token(line.substr(0, colon))) {
      throw WireError{400, "malformed header"};
    }
    head.headers.emplace_back(line.substr(0, colon),
                              std::string(codec::trim(std::string_view(line).substr(colon + 1))));
  }
  return head;
}

std::string read_body(net::Reader& in, const RequestHead& head) {
  std::string body;
  const auto te = head.header("Transfer-Encoding");
  if (te && codec::to_lower(*te).find("chunked") != std::string::npos) {
    std::string line;
    for (;;) {
      if (!in.read_line(line)) throw WireError{400, "truncated chunked body"};
      auto size_text = std::string_view(line);
      if (const auto semi = size_text.find(';'); semi != std::string_view::npos) {
        size_text = size_text.substr(0, semi);
      }
      const auto size = parse_uint<std::size_t>(codec::trim(size_text), 16);
      if (!size) throw WireError{400, "bad chunk size"};
      if (*size == 0) break;
      if (body.size() + *size > kMaxBodyBytes) throw WireError{413, "body too large"};
      if (!in.read_exact(body, *size)) throw WireError{400, "truncated chunk"};
      if (!in.read_line(line) || !line.empty()) throw WireError{400, "bad chunk terminator"};
    }
    // Trailers up to the blank line.
    for (;;) {
      if (!in.read_line(line)) break;
      if (line.empty()) break;
    }
    return body;
  }
  if (const auto cl = head.header("Content-Length")) {
    const auto n = parse_uint<std::size_t>(codec::trim(*cl));
    if (!n) throw WireError{400, "bad Content-Length"};
    if (*n > kMaxBodyBytes) throw WireError{413, "body too large"};
    if (!in.read_exact(body, *n)) throw WireError{400, "truncated body"};
  }
  return body;
}

std::optional<std::pair<std::string, std::uint16_t>> parse_authority(
    std::string_view authority, std::uint16_t default_port) {
  if (authority.empty()) return std::nullopt;
  std::string host;
  std::string_view rest;
  if (authority.front() == '[') {
    const auto close = authority.find(']');
    if (close == std::string_view::npos) return std::nullopt;
    host = std::string(authority.substr(0, close + 1));
    rest = authority.substr(close + 1);
  } else {
    const auto colon = authority.rfind(':');
    host = std::string(authority.substr(0, colon));
    rest = colon == std::string_view::npos ? std::string_view{} : authority.substr(colon);
  }
  std::uint16_t port = default_port;
  if (!rest.empty()) {
    if (rest.front() != ':') return std::nullopt;
    const auto p = parse_uint<std::uint16_t>(rest.substr(1));
    if (!p || *p == 0) return std::nullopt;
    port = *p;
  }
  if (host.empty()) return std::nullopt;
  return std::make_pair(codec::to_lower(host), port);
}

std::optional<Target> parse_target(std::string_view target) {
  Target t;
  std::string_view path_and_query;
  if (target.starts_with("/")) {
    path_and_query = target;
  } else {
    const auto scheme_end = target.find("://");
    if (scheme_end == std::string_view::npos) return std::nullopt;
    t.scheme = codec::to_lower(target.substr(0, scheme_end));
    if (t.scheme != "http" && t.scheme != "https") return std::nullopt;
    auto rest = target.substr(scheme_end + 3);
    const auto slash = rest.find_first_of("/?");
    const auto authority = rest.substr(0, slash);
    const auto hp = parse_authority(authority, t.scheme == "https" ? 443 : 80);
    if (!hp) return std::nullopt;
    t.host = hp->first;
    t.port = hp->second;
    path_and_query = slash == std::string_view::npos ? std::string_view{} : rest.substr(slash);
  }
  if (const auto hash = path_and_query.find('#'); hash != std::string_view::npos) {
    path_and_query = path_and_query.substr(0, hash);
  }
  const auto q = path_and_query.find('?');
  t.path = std::string(path_and_query.substr(0, q));
  if (q != std::string_view::npos) t.query = std::string(path_and_query.substr(q + 1));
  if (t.path.empty()) t.path = "/";
  return t;
}

std::string serialize_head(const RequestHead& head) {
  std::string out = head.method + " " + head.target + " " + head.version + "\r\n";
  for (const auto& [k, v] : head.headers) out += k + ": " + v + "\r\n";
  out += "\r\n";
  return out;
}

std::string simple_response(int status, std::string_view reason, std::string_view body,
                            std::string_view content_type) {
  std::string out = "HTTP/1.1 " + std::to_string(status) + " " + std::string(reason) + "\r\n";
  if (!body.empty()) out += "Content-Type: " + std::string(content_type) + "\r\n";
  out += "Content-Length: " + std::to_string(body.size()) + "\r\nConnection: close\r\n\r\n";
  out += body;
  return out;
}

}  // namespace fpwatch::http
