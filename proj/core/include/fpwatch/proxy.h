#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "fpwatch/capture_log.h"
#include "fpwatch/catalog.h"
#include "fpwatch/detector.h"
#include "fpwatch/profile.h"
#include "fpwatch/record.h"
#include "fpwatch/suffix_table.h"

namespace fpwatch {

enum class ProxyMode { Observe, Block };
std::string_view to_string(ProxyMode m);
std::optional<ProxyMode> parse_proxy_mode(std::string_view s);

struct ProxyConfig {
  std::string bind_host = "127.0.0.1";
  // 0 picks a free port; see Proxy::port().
  std::uint16_t port = 8080;
  ProxyMode mode = ProxyMode::Observe;

  // Terminates CONNECT tunnels with certificates minted from the local CA
  // in `ca_dir` (see `fpwatch ca init`). Without it, CONNECT traffic is
  // tunneled untouched and only its byte counts are logged.
  bool https_inspect = false;
  std::optional<std::filesystem::path> ca_dir;
  // Trust anchors for upstream TLS; system store when unset.
  std::optional<std::filesystem::path> upstream_ca_file;
  bool upstream_insecure = false;

  std::filesystem::path log_path;
  bool sync_log = true;

  // "host:port" -> "address:port" connection overrides, like curl --resolve.
  std::map<std::string, std::string> resolve;

  std::chrono::milliseconds connect_timeout{10'000};
  std::chrono::milliseconds idle_timeout{30'000};
};

// Parses "host:port=address:port". Throws ConfigError.
std::pair<std::string, std::string> parse_resolve_entry(std::string_view spec);

struct ProxyStats {
  std::uint64_t requests = 0;
  std::uint64_t captures = 0;
  std::uint64_t events = 0;
  std::uint64_t blocked = 0;
  std::uint64_t delivery_failures = 0;
  std::uint64_t tunnels = 0;
  std::uint64_t unlogged = 0;
  bool degraded = false;
  std::vector<std::string> alerts;
};

// Result of on_request: the verdict plus everything the detector found.
struct RequestOutcome {
  Verdict verdict;
  std::vector<AttributeHit> hits;
  std::vector<FingerprintIdHit> fp_ids;
};

// Intercepting forward proxy. Requests arrive in absolute form (plain HTTP)
// or inside CONNECT tunnels; GET, POST and HEAD are analysed and recorded,
// anything else passes through unrecorded.
//
// Origin-form requests addressed to the proxy itself are the control
// endpoint used by a crawler in another process:
//   POST /fpwatch/visit/begin  {"site": S, "origin": HOST} -> {"visit": N}
//   POST /fpwatch/visit/end    visit record JSON           -> {"captures": N}
//   GET  /fpwatch/status                                   -> stats JSON
class Proxy {
 public:
  using AlertHandler = std::function<void(const std::string&)>;

  // The catalog, profile and suffix table must outlive the proxy.
  Proxy(ProxyConfig config, const Catalog& catalog, const DeviceProfile& profile,
        const SuffixTable& suffixes);
  ~Proxy();
  Proxy(const Proxy&) = delete;
  Proxy& operator=(const Proxy&) = delete;

  // Replaces the capture log with another sink; call before start().
  void set_sink(std::shared_ptr<CaptureSink> sink);
  void on_alert(AlertHandler handler);

  // Opens the log, loads TLS material and starts accepting. Throws
  // ConfigError for a missing CA with https_inspect, IoError when the port
  // is taken or the log cannot be opened.
  void start();
  // Stops accepting, aborts open connections and waits for them to finish.
  void stop();
  bool running() const { return running_; }
  std::uint16_t port() const { return port_; }
  const ProxyConfig& config() const { return config_; }

  // Opens the attribution window for a visit; requests until end_visit are
  // attributed to it. Returns the visit number.
  std::uint64_t begin_visit(const std::string& site, const std::string& origin_host);
  // Closes the window and writes the visit record, committing its captures.
  // Returns the capture count stored in the record.
  std::size_t end_visit(VisitRecord record);
  // Captures recorded for the open visit so far, excluding requests whose
  // upstream could not be reached.
  std::size_t visit_capture_count() const;

  // Stamps the record (sequence number, visit, page origin, time), runs the
  // detector and decides. Does not log or forward.
  RequestOutcome on_request(CaptureRecord& record);

  // Durably records one handled request. Failures switch the proxy to
  // degraded mode instead of propagating.
  void append_log(const CaptureRecord& record, const RequestOutcome& outcome,
                  Delivery delivery);

  ProxyStats stats() const;
  bool degraded() const { return degraded_; }

 private:
  class Impl;
  friend class Impl;

  void record_tunnel(TunnelRecord t);
  void alert(const std::string& message);
  template <typename F>
  void guarded_write(F&& write);

  ProxyConfig config_;
  const Catalog& catalog_;
  const DeviceProfile& profile_;
  const SuffixTable& suffixes_;
  Detector detector_;
  std::shared_ptr<CaptureSink> sink_;
  std::unique_ptr<Impl> impl_;
  std::atomic<bool> running_{false};
  std::atomic<bool> degraded_{false};
  std::uint16_t port_ = 0;

  mutable std::mutex state_mutex_;
  std::uint64_t visit_no_ = 0;
  std::string visit_origin_;
  std::size_t visit_captures_ = 0;
  ProxyStats stats_;
  AlertHandler alert_handler_;
};

}  // namespace fpwatch
