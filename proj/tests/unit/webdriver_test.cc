#include "fpwatch/webdriver.h"

#include <gtest/gtest.h>

#include <thread>

#include "fpwatch/error.h"
#include "harness/raw_server.h"
#include "httplib.h"
#include "json.hpp"
#include "unit/test_support.h"

namespace fpwatch {
namespace {

using nlohmann::json;

// Records every request and answers with whatever `respond` returns.
class FakeDriver {
 public:
  using Respond = std::function<void(const httplib::Request&, httplib::Response&)>;
  explicit FakeDriver(Respond respond) {
    auto h = [this, respond](const httplib::Request& req, httplib::Response& res) {
      {
        std::lock_guard lock(mutex_);
        seen_.push_back({req.method + " " + req.path, req.body});
      }
      respond(req, res);
    };
    server_.Get(".*", h);
    server_.Post(".*", h);
    server_.Delete(".*", h);
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~FakeDriver() {
    server_.stop();
    thread_.join();
  }
  int port() const { return port_; }
  std::vector<std::pair<std::string, std::string>> seen() {
    std::lock_guard lock(mutex_);
    return seen_;
  }

 private:
  httplib::Server server_;
  std::thread thread_;
  int port_ = 0;
  std::mutex mutex_;
  std::vector<std::pair<std::string, std::string>> seen_;
};

void ok(httplib::Response& res, const json& value) {
  res.set_content(json{{"value", value}}.dump(), "application/json");
}

TEST(WebDriverClientTest, NewSessionSendsProxyCapabilitiesUnderBasePath) {
  FakeDriver d([](const httplib::Request& req, httplib::Response& res) {
    if (req.path == "/wd/hub/session") {
      ok(res, {{"sessionId", "abc"}, {"capabilities", json::object()}});
    } else {
      ok(res, nullptr);
    }
  });
  WebDriverOptions o;
  o.endpoint = "http://127.0.0.1:" + std::to_string(d.port()) + "/wd/hub/";
  o.proxy = "127.0.0.1:8080";
  o.accept_insecure_certs = true;
  o.extra_capabilities = R"({"browserName":"firefox"})";
  WebDriverClient c(o);
  c.new_session();
  EXPECT_TRUE(c.has_session());
  c.set_page_load_timeout(std::chrono::milliseconds(20'000));
  c.navigate("http://example.test/");

  const auto seen = d.seen();
  ASSERT_EQ(seen.size(), 3u);
  EXPECT_EQ(seen[0].first, "POST /wd/hub/session");
  const auto caps = json::parse(seen[0].second)["capabilities"]["alwaysMatch"];
  EXPECT_EQ(caps["browserName"], "firefox");
  EXPECT_EQ(caps["acceptInsecureCerts"], true);
  EXPECT_EQ(caps["proxy"]["proxyType"], "manual");
  EXPECT_EQ(caps["proxy"]["httpProxy"], "127.0.0.1:8080");
  EXPECT_EQ(caps["proxy"]["sslProxy"], "127.0.0.1:8080");
  EXPECT_EQ(seen[1].first, "POST /wd/hub/session/abc/timeouts");
  EXPECT_EQ(json::parse(seen[1].second)["pageLoad"], 20'000);
  EXPECT_EQ(seen[2].first, "POST /wd/hub/session/abc/url");
  EXPECT_EQ(json::parse(seen[2].second)["url"], "http://example.test/");
}

TEST(WebDriverClientTest, ErrorsCarryTheW3cCode) {
  FakeDriver d([](const httplib::Request& req, httplib::Response& res) {
    if (req.path == "/session") {
      ok(res, {{"sessionId", "s1"}});
      return;
    }
    res.status = req.path.ends_with("/url") ? 500 : 404;
    const auto code = req.path.ends_with("/url") ? "timeout" : "invalid session id";
    res.set_content(json{{"value", {{"error", code}, {"message", "m"}}}}.dump(), "application/json");
  });
  WebDriverOptions o;
  o.endpoint = "http://127.0.0.1:" + std::to_string(d.port());
  WebDriverClient c(o);
  c.new_session();
  try {
    c.navigate("http://slow.test/");
    FAIL() << "navigate should throw";
  } catch (const WebDriverError& e) {
    EXPECT_EQ(e.code(), "timeout");
    EXPECT_FALSE(e.transport());
  }
  try {
    c.new_tab();
    FAIL() << "new_tab should throw";
  } catch (const WebDriverError& e) {
    EXPECT_EQ(e.code(), "invalid session id");
  }
  c.delete_session();
  EXPECT_FALSE(c.has_session());
}

TEST(WebDriverClientTest, UnreachableEndpointIsTransportError) {
  std::uint16_t port = 0;
  ::close(test::listen_loopback(port));
  WebDriverOptions o;
  o.endpoint = "http://127.0.0.1:" + std::to_string(port);
  WebDriverClient c(o);
  EXPECT_FALSE(c.ready());
  try {
    c.new_session();
    FAIL() << "new_session should throw";
  } catch (const WebDriverError& e) {
    EXPECT_TRUE(e.transport());
  }
}

TEST(WebDriverClientTest, MalformedCapabilitiesRejected) {
  WebDriverOptions o;
  o.extra_capabilities = "[1]";
  WebDriverClient c(o);
  EXPECT_THROW(c.new_session(), ConfigError);
  o.endpoint = "ftp://127.0.0.1:21";
  EXPECT_THROW(WebDriverClient{o}, ConfigError);
}

TEST(CommandLogTest, AuditFlagsInteractionCommands) {
  test::TempDir dir;
  {
    CommandLog log(dir / "cmd.jsonl");
    log.record("POST", "/session", R"({"capabilities":{}})");
    log.record("POST", "/session/1/url", R"({"url":"http://a.test/"})");
    log.record("DELETE", "/session/1/window", "");
  }
  EXPECT_TRUE(audit_command_log(dir / "cmd.jsonl").empty());
  {
    CommandLog log(dir / "cmd.jsonl");
    log.record("POST", "/session/1/element", R"({"using":"css selector","value":"a"})");
    log.record("POST", "/session/1/actions", R"({"actions":[]})");
    log.record("POST", "/session/1/execute/sync", R"js({"script":"scrollBy(0,100)"})js");
  }
  const auto v = audit_command_log(dir / "cmd.jsonl");
  EXPECT_EQ(v, (std::vector<std::string>{"POST /session/1/element", "POST /session/1/actions",
                                         "POST /session/1/execute/sync"}));
  EXPECT_THROW(audit_command_log(dir / "missing.jsonl"), IoError);
}

}  // namespace
}  // namespace fpwatch
