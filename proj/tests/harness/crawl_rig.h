#pragma once

// Fixture cluster + intercepting proxy + scripted browser, wired together the
// way a real crawl is: the browser only talks to the proxy, the proxy maps
// fixture hostnames to the loopback servers.

#include <filesystem>
#include <memory>
#include <vector>

#include "fpwatch/capture_log.h"
#include "fpwatch/crawler.h"
#include "fpwatch/proxy.h"
#include "harness/fixtures.h"
#include "harness/scripted_browser.h"
#include "unit/test_support.h"

namespace fpwatch::test {

class CrawlRig {
 public:
  CrawlRig(std::vector<FixtureSite> sites, const DeviceProfile& profile,
           ProxyMode mode = ProxyMode::Observe);
  ~CrawlRig();

  std::filesystem::path dir() const { return dir_.path(); }
  std::filesystem::path log_path() const { return dir_ / "capture.jsonl"; }
  std::filesystem::path mitm_ca_dir() const { return dir_ / "mitm-ca"; }
  FixtureCluster& cluster() { return *cluster_; }
  Proxy& proxy() { return *proxy_; }
  ScriptedBrowser& browser() { return *browser_; }

  // Browser options pointing at the scripted browser through the proxy,
  // logging commands to dir()/commands.jsonl.
  WebDriverOptions webdriver() const;
  std::filesystem::path command_log_path() const { return dir_ / "commands.jsonl"; }
  CrawlConfig config(double delay_s, double timeout_s) const;

  CrawlReport crawl(const CrawlConfig& config, CrawlHooks hooks = {});
  // Stops the proxy (flushing nothing further) and replays its log.
  LogReplay finish();

 private:
  TempDir dir_;
  const DeviceProfile& profile_;
  std::unique_ptr<FixtureCluster> cluster_;
  std::unique_ptr<Proxy> proxy_;
  std::unique_ptr<ScriptedBrowser> browser_;
  std::shared_ptr<CommandLog> commands_;
};

}  // namespace fpwatch::test
