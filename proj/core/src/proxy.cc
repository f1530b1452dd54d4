#include "fpwatch/proxy.h"

#include <sys/socket.h>
#include <unistd.h>

#include <condition_variable>
#include <iostream>
#include <set>
#include <thread>

#include "fpwatch/codec.h"
#include "fpwatch/error.h"
#include "fpwatch/tls.h"
#include "http_wire.h"
#include "json.hpp"
#include "net.h"
#include "tls_stream.h"

namespace fpwatch {

using nlohmann::json;

std::string_view to_string(ProxyMode m) { return m == ProxyMode::Block ? "block" : "observe"; }

std::optional<ProxyMode> parse_proxy_mode(std::string_view s) {
  if (s == "observe") return ProxyMode::Observe;
  if (s == "block") return ProxyMode::Block;
  return std::nullopt;
}

std::pair<std::string, std::string> parse_resolve_entry(std::string_view spec) {
  const auto eq = spec.find('=');
  if (eq == std::string_view::npos) {
    throw ConfigError("--resolve expects host:port=address:port, got '" + std::string(spec) + "'");
  }
  const auto from = http::parse_authority(spec.substr(0, eq), 0);
  const auto to = http::parse_authority(spec.substr(eq + 1), 0);
  if (!from || !to || from->second == 0 || to->second == 0) {
    throw ConfigError("--resolve expects host:port=address:port, got '" + std::string(spec) + "'");
  }
  return {from->first + ":" + std::to_string(from->second),
          to->first + ":" + std::to_string(to->second)};
}

namespace {

constexpr std::string_view kBlockedResponse =
    "HTTP/1.1 403 Forbidden\r\nContent-Length: 0\r\nConnection: close\r\n\r\n";

std::int64_t now_ms() {
  return std::chrono::duration_cast<std::chrono::milliseconds>(
             std::chrono::system_clock::now().time_since_epoch())
      .count();
}

bool has_token(const std::optional<std::string>& header, std::string_view token) {
  if (!header) return false;
  return codec::to_lower(*header).find(token) != std::string::npos;
}

std::string_view reason_phrase(int status) {
  switch (status) {
    case 400: return "Bad Request";
    case 404: return "Not Found";
    case 413: return "Payload Too Large";
    case 431: return "Request Header Fields Too Large";
    case 502: return "Bad Gateway";
    default: return "Error";
  }
}

struct Destination {
  std::string host;
  std::uint16_t port = 0;
  Scheme scheme = Scheme::Http;
};

struct RelayResult {
  bool ok = false;
  bool keep_alive = false;
  bool upgraded = false;
};

bool copy_exact(net::Reader& from, net::Stream& to, std::uint64_t n) {
  std::string buf;
  while (n > 0) {
    buf.clear();
    const auto got = from.read_some(buf, static_cast<std::size_t>(std::min<std::uint64_t>(n, 64 * 1024)));
    if (got <= 0 || !to.write_all(buf)) return false;
    n -= static_cast<std::uint64_t>(got);
  }
  return true;
}

// Relays one response (plus any interim 1xx responses) byte for byte.
RelayResult relay_response(net::Reader& up, net::Stream& client, bool head_request) {
  for (;;) {
    std::string raw;
    if (!up.read_raw_line(raw)) return {};
    const std::string status_line(codec::trim(raw));
    if (!status_line.starts_with("HTTP/1.") || status_line.size() < 12) return {};
    const bool http10 = status_line.starts_with("HTTP/1.0");
    const int code = std::atoi(status_line.substr(9, 3).c_str());

    http::RequestHead fields;  // only the header list is used
    for (;;) {
      const auto before = raw.size();
      if (!up.read_raw_line(raw)) return {};
      const auto line = codec::trim(std::string_view(raw).substr(before));
      if (line.empty()) break;
      const auto colon = line.find(':');
      if (colon != std::string_view::npos) {
        fields.headers.emplace_back(std::string(line.substr(0, colon)),
                                    std::string(codec::trim(line.substr(colon + 1))));
      }
    }
    if (!client.write_all(raw)) return {};
    if (code >= 100 && code < 200 && code != 101) continue;
    if (code == 101) return {true, false, true};

    const auto conn = fields.header("Connection");
    const bool close = has_token(conn, "close") || (http10 && !has_token(conn, "keep-alive"));
    if (head_request || code == 204 || code == 304) return {true, !close, false};

    if (has_token(fields.header("Transfer-Encoding"), "chunked")) {
      for (;;) {
        std::string line;
        if (!up.read_raw_line(line)) return {};
        auto size_text = codec::trim(std::string_view(line));
        if (const auto semi = size_text.find(';'); semi != std::string_view::npos) {
          size_text = codec::trim(size_text.substr(0, semi));
        }
        const auto size = std::strtoull(std::string(size_text).c_str(), nullptr, 16);
        if (!client.write_all(line)) return {};
        if (size == 0) {
          // Trailers, then the terminating blank line.
          for (;;) {
            std::string t;
            if (!up.read_raw_line(t) || !client.write_all(t)) return {};
            if (codec::trim(t).empty()) break;
          }
          return {true, !close, false};
        }
        std::string crlf;
        if (!copy_exact(up, client, size) || !up.read_raw_line(crlf) || !client.write_all(crlf)) {
          return {};
        }
      }
    }
    if (const auto cl = fields.header("Content-Length")) {
      const auto n = std::strtoull(cl->c_str(), nullptr, 10);
      if (!copy_exact(up, client, n)) return {};
      return {true, !close, false};
    }
    // Delimited by connection close.
    std::string buf;
    for (;;) {
      buf.clear();
      const auto got = up.read_some(buf);
      if (got <= 0) break;
      if (!client.write_all(buf)) return {};
    }
    return {true, false, false};
  }
}

bool client_wants_keep_alive(const http::RequestHead& head) {
  const auto conn = head.header("Connection");
  if (head.version == "HTTP/1.0") return has_token(conn, "keep-alive");
  return !has_token(conn, "close");
}

}  // namespace

class Proxy::Impl {
 public:
  explicit Impl(Proxy& p) : p_(p) {}

  net::Listener listener;
  std::thread acceptor;
  std::unique_ptr<tls::MitmAuthority> mitm;
  std::unique_ptr<tls::UpstreamContext> upstream_tls;

  void accept_loop() {
    for (;;) {
      const int fd = ::accept4(listener.fd.get(), nullptr, nullptr, SOCK_CLOEXEC);
      if (fd < 0) {
        if (stopping()) return;
        if (errno == EINTR || errno == ECONNABORTED) continue;
        std::this_thread::sleep_for(std::chrono::milliseconds(10));
        continue;
      }
      {
        std::lock_guard lock(mutex_);
        if (stopping_) {
          ::close(fd);
          continue;
        }
        ++active_;
        fds_.insert(fd);
      }
      std::thread([this, fd] { serve(net::Fd(fd)); }).detach();
    }
  }

  void stop() {
    {
      std::lock_guard lock(mutex_);
      stopping_ = true;
    }
    if (listener.fd.valid()) ::shutdown(listener.fd.get(), SHUT_RDWR);
    if (acceptor.joinable()) acceptor.join();
    std::unique_lock lock(mutex_);
    for (const int fd : fds_) ::shutdown(fd, SHUT_RDWR);
    done_.wait(lock, [&] { return active_ == 0; });
    lock.unlock();
    listener.fd.reset();
  }

 private:
  // Untracks its descriptor before closing it so a reused number is never
  // shut down by stop().
  class TrackedStream : public net::Stream {
   public:
    TrackedStream(Impl& impl, std::unique_ptr<net::Stream> inner)
        : impl_(impl), inner_(std::move(inner)) {}
    ~TrackedStream() override {
      impl_.untrack(inner_->fd());
      inner_.reset();
    }
    long read(char* buf, std::size_t n) override { return inner_->read(buf, n); }
    bool write_all(std::string_view d) override { return inner_->write_all(d); }
    bool has_pending() const override { return inner_->has_pending(); }
    int fd() const override { return inner_->fd(); }
    void shutdown_write() override { inner_->shutdown_write(); }

   private:
    Impl& impl_;
    std::unique_ptr<net::Stream> inner_;
  };

  bool stopping() {
    std::lock_guard lock(mutex_);
    return stopping_;
  }

  bool track(int fd) {
    std::lock_guard lock(mutex_);
    if (stopping_) return false;
    fds_.insert(fd);
    return true;
  }

  void untrack(int fd) {
    std::lock_guard lock(mutex_);
    fds_.erase(fd);
  }

  void serve(net::Fd fd) {
    const int raw_fd = fd.get();
    net::set_io_timeout(raw_fd, p_.config_.idle_timeout);
    {
      net::PlainStream client(std::move(fd));
      net::Reader in(client);
      try {
        client_loop(client, in, std::nullopt);
      } catch (const std::exception& e) {
        // A single broken connection must never take the proxy down.
        (void)e;
      }
      untrack(raw_fd);
    }
    std::lock_guard lock(mutex_);
    --active_;
    done_.notify_all();
  }

  void client_loop(net::Stream& client, net::Reader& in, const std::optional<Destination>& tunnel) {
    for (;;) {
      std::optional<http::RequestHead> head;
      try {
        head = http::read_request_head(in);
      } catch (const http::WireError& e) {
        client.write_all(http::simple_response(e.status, reason_phrase(e.status), e.message));
        return;
      }
      if (!head) return;

      if (!tunnel && head->method == "CONNECT") {
        handle_connect(client, in, *head);
        return;
      }
      const auto target = http::parse_target(head->target);
      if (!target) {
        client.write_all(http::simple_response(400, "Bad Request", "unsupported request target"));
        return;
      }
      Destination dest;
      if (tunnel) {
        dest = *tunnel;
      } else if (target->scheme.empty()) {
        handle_control(client, in, *head, *target);
        return;
      } else {
        dest.host = target->host;
        dest.port = target->port;
        dest.scheme = target->scheme == "https" ? Scheme::Https : Scheme::Http;
      }
      if (!exchange(client, in, *head, *target, dest)) return;
    }
  }

  std::unique_ptr<net::Stream> open_upstream(const Destination& dest, bool tls, std::string& error) {
    std::string host = dest.host;
    std::uint16_t port = dest.port;
    if (auto it = p_.config_.resolve.find(dest.host + ":" + std::to_string(dest.port));
        it != p_.config_.resolve.end()) {
      const auto hp = http::parse_authority(it->second, dest.port);
      host = hp->first;
      port = hp->second;
    }
    net::Fd fd;
    try {
      fd = net::connect_tcp(host, port, p_.config_.connect_timeout);
    } catch (const IoError& e) {
      error = e.what();
      return nullptr;
    }
    net::set_io_timeout(fd.get(), p_.config_.idle_timeout);
    const int raw = fd.get();
    if (!track(raw)) {
      error = "proxy stopping";
      return nullptr;
    }
    std::unique_ptr<net::Stream> stream;
    if (tls) {
      stream = tls::TlsStream::connect(std::move(fd), upstream_tls->get(), dest.host,
                                       upstream_tls->verify(), error);
      if (!stream) {
        untrack(raw);
        return nullptr;
      }
    } else {
      stream = std::make_unique<net::PlainStream>(std::move(fd));
    }
    return std::make_unique<TrackedStream>(*this, std::move(stream));
  }

  // One request/response exchange. Returns whether the client connection
  // may carry another request.
  bool exchange(net::Stream& client, net::Reader& in, http::RequestHead head,
                const http::Target& target, const Destination& dest) {
    if (has_token(head.header("Expect"), "100-continue")) {
      if (!client.write_all("HTTP/1.1 100 Continue\r\n\r\n")) return false;
      head.remove_header("Expect");
    }
    std::string body;
    try {
      body = http::read_body(in, head);
    } catch (const http::WireError& e) {
      client.write_all(http::simple_response(e.status, reason_phrase(e.status), e.message));
      return false;
    }

    const auto method = parse_method(head.method);
    CaptureRecord rec;
    RequestOutcome outcome;
    if (method) {
      rec.host = dest.host;
      rec.port = dest.port;
      rec.path = target.path;
      rec.method = *method;
      rec.scheme = dest.scheme;
      rec.query = target.query;
      rec.body = body;
      rec.referer = head.header("Referer").value_or("");
      rec.content_type = head.header("Content-Type").value_or("");
      for (const auto& [k, v] : head.headers) {
        auto name = codec::to_lower(k);
        if (name.starts_with("x-")) rec.extra_headers.emplace_back(std::move(name), v);
      }
      outcome = p_.on_request(rec);
      if (outcome.verdict.decision == Decision::Blocked) {
        p_.append_log(rec, outcome, Delivery::NotAttempted);
        client.write_all(kBlockedResponse);
        return false;
      }
    }

    head.target = target.path + (target.query.empty() && head.target.find('?') == std::string::npos
                                     ? ""
                                     : "?" + target.query);
    head.remove_header("Proxy-Connection");
    head.remove_header("Proxy-Authorization");
    if (has_token(head.header("Transfer-Encoding"), "chunked")) {
      head.remove_header("Transfer-Encoding");
      head.set_header("Content-Length", std::to_string(body.size()));
    }

    std::string error;
    auto upstream = open_upstream(dest, dest.scheme == Scheme::Https, error);
    const bool sent = upstream && upstream->write_all(http::serialize_head(head) + body);
    if (method) p_.append_log(rec, outcome, sent ? Delivery::Delivered : Delivery::Failed);
    if (!sent) {
      client.write_all(http::simple_response(502, "Bad Gateway", error.empty() ? "upstream write failed" : error));
      return false;
    }

    net::Reader up(*upstream);
    const auto result = relay_response(up, client, method == Method::Head);
    if (result.upgraded) {
      const auto [sent_bytes, received] = net::relay_bidirectional(
          client, *upstream, p_.config_.idle_timeout, in.take_buffered(), up.take_buffered());
      TunnelRecord t;
      t.host = dest.host;
      t.port = dest.port;
      t.bytes_up = sent_bytes;
      t.bytes_down = received;
      p_.record_tunnel(std::move(t));
      return false;
    }
    return result.ok && result.keep_alive && client_wants_keep_alive(head);
  }

  void handle_connect(net::Stream& client, net::Reader& in, const http::RequestHead& head) {
    const auto hp = http::parse_authority(head.target, 443);
    if (!hp) {
      client.write_all(http::simple_response(400, "Bad Request", "bad CONNECT authority"));
      return;
    }
    Destination dest{hp->first, hp->second, Scheme::Https};

    if (mitm) {
      if (!client.write_all("HTTP/1.1 200 Connection established\r\n\r\n")) return;
      SSL_CTX* ctx = nullptr;
      try {
        ctx = mitm->server_context(dest.host);
      } catch (const Error& e) {
        p_.alert(std::string("cannot mint certificate: ") + e.what());
        return;
      }
      net::Fd dup(::dup(client.fd()));
      std::string error;
      auto tls = tls::TlsStream::accept(std::move(dup), ctx, error);
      if (!tls) return;
      net::Reader tin(*tls);
      client_loop(*tls, tin, dest);
      tls->shutdown_write();
      return;
    }

    std::string error;
    auto upstream = open_upstream(dest, false, error);
    if (!upstream) {
      client.write_all(http::simple_response(502, "Bad Gateway", error));
      return;
    }
    if (!client.write_all("HTTP/1.1 200 Connection established\r\n\r\n")) return;
    const auto [up_bytes, down_bytes] =
        net::relay_bidirectional(client, *upstream, p_.config_.idle_timeout, in.take_buffered());
    TunnelRecord t;
    t.host = dest.host;
    t.port = dest.port;
    t.bytes_up = up_bytes;
    t.bytes_down = down_bytes;
    p_.record_tunnel(std::move(t));
  }

  void handle_control(net::Stream& client, net::Reader& in, const http::RequestHead& head,
                      const http::Target& target) {
    auto reply = [&](int status, const json& j) {
      client.write_all(http::simple_response(status, status == 200 ? "OK" : reason_phrase(status),
                                             j.dump(), "application/json"));
    };
    std::string body;
    try {
      body = http::read_body(in, head);
    } catch (const http::WireError& e) {
      reply(e.status, {{"error", e.message}});
      return;
    }
    try {
      if (head.method == "POST" && target.path == "/fpwatch/visit/begin") {
        const auto j = json::parse(body);
        const auto n = p_.begin_visit(j.at("site").get<std::string>(),
                                      j.value("origin", j.at("site").get<std::string>()));
        reply(200, {{"visit", n}});
      } else if (head.method == "POST" && target.path == "/fpwatch/visit/end") {
        const auto captures = p_.end_visit(decode_visit(body));
        reply(200, {{"captures", captures}});
      } else if (head.method == "GET" && target.path == "/fpwatch/status") {
        const auto s = p_.stats();
        reply(200, {{"requests", s.requests},
                    {"captures", s.captures},
                    {"events", s.events},
                    {"blocked", s.blocked},
                    {"delivery_failures", s.delivery_failures},
                    {"tunnels", s.tunnels},
                    {"unlogged", s.unlogged},
                    {"degraded", s.degraded},
                    {"alerts", s.alerts},
                    {"mode", to_string(p_.config_.mode)}});
      } else {
        reply(404, {{"error", "unknown control path"}});
      }
    } catch (const std::exception& e) {
      reply(400, {{"error", e.what()}});
    }
  }

  Proxy& p_;
  std::mutex mutex_;
  std::condition_variable done_;
  std::set<int> fds_;
  int active_ = 0;
  bool stopping_ = false;
};

Proxy::Proxy(ProxyConfig config, const Catalog& catalog, const DeviceProfile& profile,
             const SuffixTable& suffixes)
    : config_(std::move(config)),
      catalog_(catalog),
      profile_(profile),
      suffixes_(suffixes),
      detector_(catalog, profile) {}

Proxy::~Proxy() { stop(); }

void Proxy::set_sink(std::shared_ptr<CaptureSink> sink) { sink_ = std::move(sink); }

void Proxy::on_alert(AlertHandler handler) {
  std::lock_guard lock(state_mutex_);
  alert_handler_ = std::move(handler);
}

void Proxy::start() {
  if (running_) return;
  auto impl = std::make_unique<Impl>(*this);
  if (config_.https_inspect) {
    if (!config_.ca_dir) {
      throw ConfigError("HTTPS inspection needs a CA directory (create one with `fpwatch ca init`)");
    }
    const auto files = tls::ca_files(*config_.ca_dir);
    if (!std::filesystem::exists(files.cert) || !std::filesystem::exists(files.key)) {
      throw ConfigError("no CA in " + config_.ca_dir->string() +
                        " (create one with `fpwatch ca init`)");
    }
    impl->mitm = std::make_unique<tls::MitmAuthority>(files.cert, files.key);
  }
  impl->upstream_tls =
      std::make_unique<tls::UpstreamContext>(config_.upstream_ca_file, config_.upstream_insecure);

  impl->listener = net::listen_tcp(config_.bind_host, config_.port);
  if (!sink_) {
    if (config_.log_path.empty()) throw ConfigError("no capture log path configured");
    sink_ = std::make_shared<CaptureLogWriter>(
        config_.log_path, CaptureLogWriter::Options{config_.sync_log, catalog_.version()});
  }
  port_ = impl->listener.port;
  impl_ = std::move(impl);
  running_ = true;
  impl_->acceptor = std::thread([this] { impl_->accept_loop(); });
}

void Proxy::stop() {
  if (!running_.exchange(false)) return;
  impl_->stop();
}

std::uint64_t Proxy::begin_visit(const std::string& site, const std::string& origin_host) {
  if (!sink_) throw ConfigError("proxy has no capture sink");
  const auto n = sink_->allocate_visit_no();
  {
    std::lock_guard lock(state_mutex_);
    visit_no_ = n;
    visit_origin_ = normalize_host(origin_host);
    visit_captures_ = 0;
  }
  guarded_write([&] { sink_->append_visit_begin(n, site, now_ms()); });
  return n;
}

std::size_t Proxy::end_visit(VisitRecord record) {
  {
    std::lock_guard lock(state_mutex_);
    if (record.visit_no == 0) record.visit_no = visit_no_;
    if (record.visit_no == visit_no_) {
      record.capture_count = visit_captures_;
      visit_no_ = 0;
      visit_origin_.clear();
      visit_captures_ = 0;
    }
  }
  if (record.ended_ms == 0) record.ended_ms = now_ms();
  guarded_write([&] { sink_->append(record); });
  return record.capture_count;
}

std::size_t Proxy::visit_capture_count() const {
  std::lock_guard lock(state_mutex_);
  return visit_captures_;
}

RequestOutcome Proxy::on_request(CaptureRecord& record) {
  static std::atomic<std::uint64_t> fallback_seq{0};
  record.sequence_no = sink_ ? sink_->allocate_sequence_no() : ++fallback_seq;
  {
    std::lock_guard lock(state_mutex_);
    record.visit_no = visit_no_;
    record.page_origin = visit_origin_;
  }
  record.timestamp_ms = now_ms();

  auto analysis = detector_.analyze(record);
  RequestOutcome out;
  out.hits = std::move(analysis.hits);
  out.fp_ids = std::move(analysis.fp_ids);
  if (analysis.event) {
    if (!record.page_origin.empty()) {
      analysis.event->party = classify_party(record.page_origin, record.host, suffixes_).party;
    }
    analysis.event->record = record;
  }
  out.verdict.event = std::move(analysis.event);
  out.verdict.decision = config_.mode == ProxyMode::Block && out.verdict.event
                             ? Decision::Blocked
                             : Decision::Forwarded;
  std::lock_guard lock(state_mutex_);
  ++stats_.requests;
  if (out.verdict.event) ++stats_.events;
  if (out.verdict.decision == Decision::Blocked) ++stats_.blocked;
  return out;
}

void Proxy::append_log(const CaptureRecord& record, const RequestOutcome& outcome,
                       Delivery delivery) {
  CaptureEntry e;
  e.record = record;
  e.decision = outcome.verdict.decision;
  e.delivery = delivery;
  e.event = outcome.verdict.event.has_value();
  if (outcome.verdict.event) e.party = outcome.verdict.event->party;
  e.hits = outcome.hits;
  e.fp_ids = outcome.fp_ids;
  {
    std::lock_guard lock(state_mutex_);
    if (delivery == Delivery::Failed) ++stats_.delivery_failures;
    // A request that never reached a server is logged but not counted as one
    // of the visit's transmissions.
    if (delivery != Delivery::Failed && record.visit_no != 0 && record.visit_no == visit_no_) {
      ++visit_captures_;
    }
  }
  bool ok = false;
  guarded_write([&] {
    sink_->append(e);
    ok = true;
  });
  if (ok) {
    std::lock_guard lock(state_mutex_);
    ++stats_.captures;
  }
}

void Proxy::record_tunnel(TunnelRecord t) {
  {
    std::lock_guard lock(state_mutex_);
    t.visit_no = visit_no_;
    t.page_origin = visit_origin_;
    ++stats_.tunnels;
  }
  t.timestamp_ms = now_ms();
  guarded_write([&] { sink_->append(t); });
}

template <typename F>
void Proxy::guarded_write(F&& write) {
  if (!sink_) return;
  if (degraded_) {
    std::lock_guard lock(state_mutex_);
    ++stats_.unlogged;
    return;
  }
  try {
    write();
  } catch (const std::exception& e) {
    {
      std::lock_guard lock(state_mutex_);
      ++stats_.unlogged;
    }
    if (!degraded_.exchange(true)) {
      alert(std::string("capture log failed, recording stopped, still forwarding: ") + e.what());
    }
  }
}

void Proxy::alert(const std::string& message) {
  AlertHandler handler;
  {
    std::lock_guard lock(state_mutex_);
    stats_.alerts.push_back(message);
    handler = alert_handler_;
  }
  if (handler) handler(message);
}

ProxyStats Proxy::stats() const {
  std::lock_guard lock(state_mutex_);
  auto s = stats_;
  s.degraded = degraded_;
  return s;
}

}  // namespace fpwatch
