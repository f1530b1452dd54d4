#include "fpwatch/webdriver.h"

#include <chrono>

#include "fpwatch/error.h"
#include "httplib.h"
#include "json.hpp"

namespace fpwatch {

using nlohmann::json;

CommandLog::CommandLog(const std::filesystem::path& path) : out_(path, std::ios::app) {
  if (!out_) throw IoError("cannot open command log " + path.string());
}

void CommandLog::record(const std::string& method, const std::string& path,
                        const std::string& body) {
  const auto now = std::chrono::duration_cast<std::chrono::milliseconds>(
                       std::chrono::system_clock::now().time_since_epoch())
                       .count();
  json j = {{"ts", now}, {"method", method}, {"path", path}};
  if (!body.empty()) j["body"] = json::parse(body, nullptr, false);
  std::lock_guard lock(mutex_);
  out_ << j.dump(-1, ' ', false, json::error_handler_t::replace) << '\n';
  out_.flush();
}

std::vector<std::string> audit_command_log(const std::filesystem::path& path) {
  // Endpoint path segments that act on page content or inject input.
  static const char* kInteractive[] = {"/element", "/actions", "/execute", "/keys",
                                       "/click",   "/value",   "/alert",   "/frame"};
  std::ifstream in(path);
  if (!in) throw IoError("cannot read command log " + path.string());
  std::vector<std::string> violations;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = json::parse(line, nullptr, false);
    if (j.is_discarded()) {
      violations.push_back("unparseable entry: " + line);
      continue;
    }
    const auto p = j.value("path", "");
    for (const char* bad : kInteractive) {
      if (p.find(bad) != std::string::npos) {
        violations.push_back(j.value("method", "") + " " + p);
        break;
      }
    }
  }
  return violations;
}

struct WebDriverClient::Http {
  std::unique_ptr<httplib::Client> client;
  std::string base;  // path prefix such as "/wd/hub"
};

WebDriverClient::WebDriverClient(WebDriverOptions options)
    : options_(std::move(options)), http_(std::make_unique<Http>()) {
  std::string endpoint = options_.endpoint;
  if (!endpoint.starts_with("http://") && !endpoint.starts_with("https://")) {
    throw ConfigError("WebDriver endpoint must be an http(s) URL: " + endpoint);
  }
  while (!endpoint.empty() && endpoint.back() == '/') endpoint.pop_back();
  const auto scheme_end = endpoint.find("://");
  const auto path_start =
      endpoint.find('/', scheme_end == std::string::npos ? 0 : scheme_end + 3);
  if (path_start != std::string::npos) {
    http_->base = endpoint.substr(path_start);
    endpoint.resize(path_start);
  }
  http_->client = std::make_unique<httplib::Client>(endpoint);
  if (!http_->client->is_valid()) throw ConfigError("bad WebDriver endpoint " + options_.endpoint);
  const auto secs = std::chrono::duration_cast<std::chrono::seconds>(options_.command_timeout);
  http_->client->set_connection_timeout(10, 0);
  http_->client->set_read_timeout(secs.count(), 0);
  http_->client->set_write_timeout(secs.count(), 0);
}

WebDriverClient::~WebDriverClient() = default;

std::string WebDriverClient::call(const std::string& method, const std::string& path,
                                  const std::string& body) {
  if (options_.command_log) options_.command_log->record(method, path, body);
  const auto full = http_->base + path;
  httplib::Result r;
  auto& c = *http_->client;
  if (method == "GET") {
    r = c.Get(full);
  } else if (method == "DELETE") {
    r = c.Delete(full);
  } else {
    r = c.Post(full, body, "application/json");
  }
  if (!r) {
    throw WebDriverError("transport", "WebDriver endpoint " + options_.endpoint + ": " +
                                          httplib::to_string(r.error()));
  }
  const auto j = json::parse(r->body, nullptr, false);
  if (r->status != 200) {
    std::string code = "unknown error", message = r->body;
    if (!j.is_discarded() && j.contains("value") && j["value"].is_object()) {
      code = j["value"].value("error", code);
      message = j["value"].value("message", message);
    }
    throw WebDriverError(code, message);
  }
  if (j.is_discarded() || !j.contains("value")) {
    throw WebDriverError("unknown error", "malformed WebDriver response: " + r->body);
  }
  return j["value"].dump();
}

bool WebDriverClient::ready() {
  try {
    const auto v = json::parse(call("GET", "/status", ""));
    return v.value("ready", false);
  } catch (const WebDriverError&) {
    return false;
  }
}

void WebDriverClient::new_session() {
  json always = json::parse(options_.extra_capabilities, nullptr, false);
  if (!always.is_object()) throw ConfigError("extra capabilities must be a JSON object");
  if (!options_.proxy.empty()) {
    always["proxy"] = {{"proxyType", "manual"},
                       {"httpProxy", options_.proxy},
                       {"sslProxy", options_.proxy}};
  }
  if (options_.accept_insecure_certs) always["acceptInsecureCerts"] = true;
  always["pageLoadStrategy"] = "normal";
  const json body = {{"capabilities", {{"alwaysMatch", always}}}};
  const auto v = json::parse(call("POST", "/session", body.dump()));
  session_ = v.at("sessionId").get<std::string>();
}

void WebDriverClient::delete_session() {
  if (session_.empty()) return;
  try {
    call("DELETE", "/session/" + session_, "");
  } catch (const WebDriverError&) {
  }
  session_.clear();
}

void WebDriverClient::set_page_load_timeout(std::chrono::milliseconds timeout) {
  call("POST", "/session/" + session_ + "/timeouts",
       json{{"pageLoad", timeout.count()}}.dump());
}

void WebDriverClient::navigate(const std::string& url) {
  call("POST", "/session/" + session_ + "/url", json{{"url", url}}.dump());
}

std::string WebDriverClient::current_window() {
  return json::parse(call("GET", "/session/" + session_ + "/window", "")).get<std::string>();
}

std::string WebDriverClient::new_tab() {
  const auto v = json::parse(
      call("POST", "/session/" + session_ + "/window/new", json{{"type", "tab"}}.dump()));
  return v.at("handle").get<std::string>();
}

void WebDriverClient::switch_to(const std::string& handle) {
  call("POST", "/session/" + session_ + "/window", json{{"handle", handle}}.dump());
}

std::vector<std::string> WebDriverClient::close_window() {
  return json::parse(call("DELETE", "/session/" + session_ + "/window", ""))
      .get<std::vector<std::string>>();
}

}  // namespace fpwatch
