#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace fpwatch {

// Failure reported by the remote end. `code` is the W3C error code
// ("timeout", "unknown error", "invalid session id", ...); transport
// failures (endpoint unreachable, connection dropped) use "transport".
class WebDriverError : public std::runtime_error {
 public:
  WebDriverError(std::string code, const std::string& message)
      : std::runtime_error(message), code_(std::move(code)) {}
  const std::string& code() const { return code_; }
  bool transport() const { return code_ == "transport"; }

 private:
  std::string code_;
};

// Appends one JSON line per command sent, for auditing what the crawler
// asked the browser to do.
class CommandLog {
 public:
  explicit CommandLog(const std::filesystem::path& path);
  void record(const std::string& method, const std::string& path, const std::string& body);

 private:
  std::mutex mutex_;
  std::ofstream out_;
};

// Commands in a command log that simulate user input (pointer, keyboard,
// element interaction) or run page scripts. Empty for a clean crawl.
std::vector<std::string> audit_command_log(const std::filesystem::path& path);

struct WebDriverOptions {
  std::string endpoint = "http://127.0.0.1:4444";
  // Proxy the browser must use, "host:port".
  std::string proxy;
  bool accept_insecure_certs = false;
  // Extra W3C capabilities merged into alwaysMatch, as a JSON object.
  std::string extra_capabilities = "{}";
  std::chrono::milliseconds command_timeout{120'000};
  std::shared_ptr<CommandLog> command_log;
};

// Minimal W3C WebDriver client: one session, tab management and
// navigation. No element or input commands exist here on purpose.
class WebDriverClient {
 public:
  explicit WebDriverClient(WebDriverOptions options);
  ~WebDriverClient();
  WebDriverClient(const WebDriverClient&) = delete;
  WebDriverClient& operator=(const WebDriverClient&) = delete;

  // GET /status readiness.
  bool ready();

  void new_session();
  // Best effort; never throws.
  void delete_session();
  bool has_session() const { return !session_.empty(); }

  void set_page_load_timeout(std::chrono::milliseconds timeout);
  // Blocks until the document is complete or the page load timeout fires
  // (WebDriverError "timeout").
  void navigate(const std::string& url);

  std::string current_window();
  std::string new_tab();
  void switch_to(const std::string& handle);
  // Closes the current tab; returns the remaining handles.
  std::vector<std::string> close_window();

 private:
  std::string call(const std::string& method, const std::string& path, const std::string& body);

  WebDriverOptions options_;
  std::string session_;
  struct Http;
  std::unique_ptr<Http> http_;
};

}  // namespace fpwatch
