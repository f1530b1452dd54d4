#include "harness/crawl_rig.h"

#include "fpwatch/catalog.h"
#include "fpwatch/suffix_table.h"
#include "fpwatch/tls.h"

namespace fpwatch::test {

CrawlRig::CrawlRig(std::vector<FixtureSite> sites, const DeviceProfile& profile, ProxyMode mode)
    : profile_(profile) {
  cluster_ = std::make_unique<FixtureCluster>(std::move(sites), dir_ / "fixtures");
  tls::init_ca(mitm_ca_dir(), "fpwatch test interception CA");

  ProxyConfig c;
  c.port = 0;
  c.mode = mode;
  c.https_inspect = true;
  c.ca_dir = mitm_ca_dir();
  c.upstream_ca_file = cluster_->ca().cert;
  c.log_path = log_path();
  c.sync_log = false;
  c.resolve = cluster_->resolve_map();
  proxy_ = std::make_unique<Proxy>(c, default_catalog(), profile_, default_suffix_table());
  proxy_->start();

  ScriptedBrowserOptions b;
  b.profile = profile_;
  b.trust_ca = tls::ca_files(mitm_ca_dir()).cert;
  browser_ = std::make_unique<ScriptedBrowser>(std::move(b));
  commands_ = std::make_shared<CommandLog>(command_log_path());
}

CrawlRig::~CrawlRig() {
  browser_->stop();
  proxy_->stop();
  cluster_->stop();
}

WebDriverOptions CrawlRig::webdriver() const {
  WebDriverOptions w;
  w.endpoint = browser_->endpoint();
  w.proxy = "127.0.0.1:" + std::to_string(proxy_->port());
  w.command_log = commands_;
  w.command_timeout = std::chrono::seconds(60);
  return w;
}

CrawlConfig CrawlRig::config(double delay_s, double timeout_s) const {
  CrawlConfig c;
  c.site_list = cluster_->site_list();
  c.post_load_delay_s = delay_s;
  c.page_timeout_s = timeout_s;
  return c;
}

CrawlReport CrawlRig::crawl(const CrawlConfig& config, CrawlHooks hooks) {
  LocalVisitWindow window(*proxy_);
  return run_crawl(config, webdriver(), window, std::move(hooks));
}

LogReplay CrawlRig::finish() {
  proxy_->stop();
  return read_log(log_path());
}

}  // namespace fpwatch::test
