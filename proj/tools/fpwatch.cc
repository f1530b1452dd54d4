// fpwatch: intercepting proxy, crawler driver and report generator.

#include <signal.h>

#include <atomic>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "fpwatch/analytics.h"
#include "fpwatch/capture_log.h"
#include "fpwatch/catalog.h"
#include "fpwatch/codec.h"
#include "fpwatch/crawler.h"
#include "fpwatch/detector.h"
#include "fpwatch/error.h"
#include "fpwatch/profile.h"
#include "fpwatch/proxy.h"
#include "fpwatch/reporter.h"
#include "fpwatch/suffix_table.h"
#include "fpwatch/tls.h"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace fpwatch;

namespace {

constexpr int kExitError = 1;
constexpr int kExitAborted = 3;

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot open " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& p, std::string_view content) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + p.string());
  out << content;
  if (!out.flush()) throw IoError("cannot write " + p.string());
}

// Blocks SIGINT/SIGTERM for every thread started afterwards and hands them
// to a watcher thread instead, which raises `flag`.
class SignalWatch {
 public:
  explicit SignalWatch(std::atomic<bool>& flag) : flag_(flag) {
    sigemptyset(&set_);
    sigaddset(&set_, SIGINT);
    sigaddset(&set_, SIGTERM);
    pthread_sigmask(SIG_BLOCK, &set_, nullptr);
    thread_ = std::thread([this] {
      const timespec tick{0, 200'000'000};
      while (!done_) {
        if (sigtimedwait(&set_, nullptr, &tick) > 0) flag_ = true;
      }
    });
  }
  ~SignalWatch() {
    done_ = true;
    thread_.join();
  }

 private:
  std::atomic<bool>& flag_;
  std::atomic<bool> done_{false};
  sigset_t set_;
  std::thread thread_;
};

// Options shared by `proxy` and the in-process proxy of `crawl`.
struct ProxyFlags {
  std::string bind = "127.0.0.1";
  std::uint16_t port = 8080;
  std::string mode = "observe";
  bool https_inspect = false;
  std::string ca_dir;
  std::string upstream_ca;
  bool upstream_insecure = false;
  std::string log;
  std::string catalog;
  std::string profile;
  std::vector<std::string> resolve;
  bool no_sync = false;

  void add(CLI::App* app, bool log_required) {
    app->add_option("--bind", bind, "Listen address")->capture_default_str();
    app->add_option("--port", port, "Listen port (0 picks a free one)")->capture_default_str();
    app->add_option("--mode", mode, "observe or block")
        ->check(CLI::IsMember({"observe", "block"}))
        ->capture_default_str();
    app->add_flag("--https-inspect", https_inspect,
                  "Terminate CONNECT tunnels with certificates from --ca-dir");
    app->add_option("--ca-dir", ca_dir, "Interception CA directory (see `ca init`)");
    app->add_option("--upstream-ca", upstream_ca, "PEM trust anchors for upstream TLS");
    app->add_flag("--upstream-insecure", upstream_insecure, "Skip upstream certificate checks");
    auto* l = app->add_option("--log", log, "Capture log path");
    if (log_required) l->required();
    app->add_option("--catalog", catalog, "Attribute catalog TSV (default: built in)");
    app->add_option("--profile", profile, "Device profile JSON of the crawling browser");
    app->add_option("--resolve", resolve, "host:port=address:port connection override")
        ->take_all();
    app->add_flag("--no-sync", no_sync, "Do not fsync the capture log after each record");
  }

  ProxyConfig config() const {
    ProxyConfig c;
    c.bind_host = bind;
    c.port = port;
    c.mode = *parse_proxy_mode(mode);
    c.https_inspect = https_inspect;
    if (!ca_dir.empty()) c.ca_dir = ca_dir;
    if (!upstream_ca.empty()) c.upstream_ca_file = upstream_ca;
    c.upstream_insecure = upstream_insecure;
    c.log_path = log;
    c.sync_log = !no_sync;
    for (const auto& r : resolve) c.resolve.insert(parse_resolve_entry(r));
    return c;
  }
};

// Catalog, profile and suffix table outlive any proxy built from them.
struct Inputs {
  std::unique_ptr<Catalog> owned_catalog;
  const Catalog* catalog = &default_catalog();
  DeviceProfile profile;

  void load(const std::string& catalog_path, const std::string& profile_path) {
    if (!catalog_path.empty()) {
      owned_catalog = std::make_unique<Catalog>(load_catalog(catalog_path));
      catalog = owned_catalog.get();
    }
    if (profile_path.empty()) {
      std::cerr << "warning: no --profile; only pattern and label detectors are active\n";
      return;
    }
    auto r = load_profile(profile_path, *catalog);
    for (const auto& w : r.warnings) std::cerr << "profile: " << w << "\n";
    profile = std::move(r.profile);
  }
};

void print_stats(const ProxyStats& s) {
  std::cerr << "requests " << s.requests << ", captures " << s.captures << ", events "
            << s.events << ", blocked " << s.blocked << ", delivery failures "
            << s.delivery_failures << ", tunnels " << s.tunnels << "\n";
  if (s.degraded) std::cerr << "proxy ran degraded: " << s.unlogged << " requests not logged\n";
}

int run_proxy(const ProxyFlags& flags) {
  Inputs in;
  in.load(flags.catalog, flags.profile);
  std::atomic<bool> stop{false};
  SignalWatch signals(stop);
  Proxy proxy(flags.config(), *in.catalog, in.profile, default_suffix_table());
  proxy.on_alert([](const std::string& m) { std::cerr << "ALERT: " << m << "\n"; });
  proxy.start();
  std::cout << "listening on " << flags.bind << ":" << proxy.port() << std::endl;
  while (!stop) std::this_thread::sleep_for(std::chrono::milliseconds(100));
  proxy.stop();
  print_stats(proxy.stats());
  return 0;
}

struct CrawlFlags {
  std::string sites;
  double delay = 3;
  double timeout = 20;
  std::size_t checkpoint_every = 200;
  int max_retries = 1;
  std::string scheme = "http";
  std::string checkpoint = "fpwatch-checkpoint.json";
  std::string resume;
  std::string webdriver = "http://127.0.0.1:4444";
  std::string capabilities = "{}";
  bool insecure_certs = false;
  std::string proxy_url;
  std::string command_log;
  std::string report;
};

int run_crawl_command(const CrawlFlags& f, ProxyFlags pf) {
  CrawlConfig config;
  config.site_list = read_site_list(f.sites);
  config.post_load_delay_s = f.delay;
  config.page_timeout_s = f.timeout;
  config.checkpoint_every = f.checkpoint_every;
  config.max_retries_per_site = f.max_retries;
  config.scheme = f.scheme;
  if (!f.resume.empty()) {
    config.checkpoint_path = f.resume;
    if (!fs::exists(config.checkpoint_path)) {
      std::cerr << "no checkpoint at " << f.resume << "; starting from the first site\n";
    }
  } else {
    config.checkpoint_path = f.checkpoint;
    if (fs::exists(config.checkpoint_path)) {
      throw ConfigError("checkpoint " + f.checkpoint +
                        " already exists; pass --resume to continue that run");
    }
  }
  config.validate();

  WebDriverOptions browser;
  browser.endpoint = f.webdriver;
  browser.extra_capabilities = f.capabilities;
  browser.accept_insecure_certs = f.insecure_certs;
  if (!f.command_log.empty()) browser.command_log = std::make_shared<CommandLog>(f.command_log);

  std::atomic<bool> cancel{false};
  CrawlHooks hooks;
  hooks.cancel = &cancel;
  hooks.on_outcome = [&](std::size_t index, const VisitOutcome& o) {
    std::cerr << "[" << index + 1 << "/" << config.site_list.size() << "] " << o.site << " "
              << to_string(o.status) << " " << o.capture_count << " captures"
              << (o.revisited ? " (revisited)" : "") << "\n";
  };

  Inputs in;
  std::unique_ptr<Proxy> proxy;
  std::unique_ptr<VisitWindow> window;
  SignalWatch signals(cancel);
  if (!f.proxy_url.empty()) {
    window = std::make_unique<RemoteVisitWindow>(f.proxy_url);
    auto hostport = f.proxy_url.substr(f.proxy_url.find("://") + 3);
    if (const auto slash = hostport.find('/'); slash != std::string::npos) hostport.resize(slash);
    browser.proxy = hostport;
  } else {
    if (pf.log.empty()) throw ConfigError("--log is required unless --proxy names a running proxy");
    in.load(pf.catalog, pf.profile);
    proxy = std::make_unique<Proxy>(pf.config(), *in.catalog, in.profile, default_suffix_table());
    proxy->on_alert([](const std::string& m) { std::cerr << "ALERT: " << m << "\n"; });
    proxy->start();
    browser.proxy = pf.bind + ":" + std::to_string(proxy->port());
    window = std::make_unique<LocalVisitWindow>(*proxy);
  }

  CrawlReport report;
  try {
    report = run_crawl(config, browser, *window, hooks);
  } catch (const CheckpointError& e) {
    std::cerr << "error: " << e.what() << "\n";
    if (e.last_intact()) {
      std::cerr << "last intact checkpoint: " << e.last_intact()->string() << " (next site "
                << e.last_intact_index().value_or(0) + 1 << ")\n";
    }
    return kExitError;
  }
  if (proxy) {
    proxy->stop();
    print_stats(proxy->stats());
  }
  if (!f.report.empty()) write_file(f.report, crawl_report_to_json(report));
  std::cerr << "visited " << report.outcomes.size() << " sites from index " << report.start_index
            << ": loaded " << report.count(VisitStatus::Loaded) << ", timed out "
            << report.count(VisitStatus::TimedOut) << ", navigation errors "
            << report.count(VisitStatus::NavigationError) << ", crashed "
            << report.count(VisitStatus::BrowserCrashed) << "\n";
  if (report.aborted) {
    std::cerr << "crawl aborted: " << report.abort_reason << "; resume with --resume "
              << config.checkpoint_path.string() << "\n";
    return kExitAborted;
  }
  return 0;
}

struct ReportFlags {
  std::string log;
  std::string out;
  std::string formats = "csv,json,plot";
  int top = 10;
  std::string catalog;
  std::string psl;
  bool summary = false;
};

int run_report(const ReportFlags& f) {
  const auto suffixes = f.psl.empty() ? default_suffix_table() : load_suffix_table(f.psl);
  const auto log_bytes = read_file(f.log);
  const auto replay = replay_log(log_bytes);
  for (const auto& w : replay.warnings) std::cerr << "log: " << w << "\n";
  const auto stats = aggregate(replay, suffixes);
  if (f.summary) {
    std::cout << summary_to_json(stats);
    return 0;
  }
  if (f.out.empty()) throw ConfigError("--out is required");
  const auto catalog = f.catalog.empty() ? default_catalog() : load_catalog(f.catalog);
  const auto formats = parse_report_formats(f.formats);

  ReportMetadata meta;
  meta.log_sha256 = codec::sha256_hex(log_bytes);
  meta.catalog_version = catalog.version();
  meta.suffix_table_version = suffixes.version();
  // Everything besides the log that changes the numbers.
  json settings = {{"top", f.top},
                   {"catalog_version", meta.catalog_version},
                   {"suffix_table_version", meta.suffix_table_version},
                   {"log_catalog_version", replay.catalog_version}};
  meta.config_sha256 = codec::sha256_hex(settings.dump());

  const auto bundle = build_report(stats, catalog, meta, f.top);
  for (const auto& p : emit(bundle, formats, f.out)) std::cout << p.string() << "\n";
  return 0;
}

int run_catalog(const std::string& path, bool dump) {
  const auto catalog = path.empty() ? default_catalog() : load_catalog(path);
  if (dump) {
    std::cout << catalog.serialize();
    return 0;
  }
  std::cout << "catalog " << catalog.version() << ": " << catalog.size() << " attributes\n";
  for (const auto& row : category_table(catalog)) {
    std::cout << "  " << row.category << "\t" << row.count << "\n";
  }
  const auto core = catalog.core();
  std::cout << core.size() << " core attributes:\n";
  for (const auto* d : core) std::cout << "  " << d->id << "\n";
  return 0;
}

// "scheme://host[:port]/path?query" without user info or fragments.
CaptureRecord record_from_url(const std::string& url) {
  CaptureRecord r;
  const auto sep = url.find("://");
  if (sep == std::string::npos) throw ConfigError("URL needs a scheme: " + url);
  const auto scheme = parse_scheme(codec::to_lower(url.substr(0, sep)));
  if (!scheme) throw ConfigError("unsupported scheme in " + url);
  r.scheme = *scheme;
  auto rest = url.substr(sep + 3);
  rest = rest.substr(0, rest.find('#'));
  const auto path_at = rest.find_first_of("/?");
  auto authority = rest.substr(0, path_at);
  auto target = path_at == std::string::npos ? std::string("/") : rest.substr(path_at);
  r.port = r.scheme == Scheme::Https ? 443 : 80;
  if (const auto colon = authority.rfind(':');
      colon != std::string::npos && authority.find(']', colon) == std::string::npos) {
    r.port = static_cast<std::uint16_t>(std::stoi(authority.substr(colon + 1)));
    authority.resize(colon);
  }
  r.host = codec::to_lower(authority);
  if (const auto q = target.find('?'); q != std::string::npos) {
    r.query = target.substr(q + 1);
    target.resize(q);
  }
  r.path = target.empty() ? "/" : target;
  return r;
}

struct ScanFlags {
  std::string url;
  std::string method = "GET";
  std::string body;
  std::string body_file;
  std::string content_type;
  std::vector<std::string> headers;
  std::string catalog;
  std::string profile;
};

int run_scan(const ScanFlags& f) {
  Inputs in;
  in.load(f.catalog, f.profile);
  auto r = record_from_url(f.url);
  const auto method = parse_method(f.method);
  if (!method) throw ConfigError("method must be GET, POST or HEAD");
  r.method = *method;
  r.body = f.body_file.empty() ? f.body : read_file(f.body_file);
  r.content_type = f.content_type;
  for (const auto& h : f.headers) {
    const auto colon = h.find(':');
    if (colon == std::string::npos) throw ConfigError("header must be 'Name: value'");
    r.extra_headers.emplace_back(codec::to_lower(codec::trim(h.substr(0, colon))),
                                 std::string(codec::trim(h.substr(colon + 1))));
  }
  const Detector detector(*in.catalog, in.profile);
  const auto a = detector.analyze(r);
  json hits = json::array();
  for (const auto& h : a.hits) {
    hits.push_back({{"attr", h.attribute_id},
                    {"core", h.core},
                    {"part", to_string(h.part)},
                    {"layer", h.layer_index},
                    {"text", codec::utf8_lossy(h.matched_text)}});
  }
  json ids = json::array();
  for (const auto& id : a.fp_ids) ids.push_back({{"label", id.label}, {"value", codec::utf8_lossy(id.value)}});
  json out = {{"event", a.event.has_value()}, {"hits", hits}, {"fp_ids", ids}};
  std::cout << out.dump(2) << "\n";
  return a.event ? 0 : 2;
}

int run_profile_check(const std::string& path, const std::string& catalog_path) {
  const auto catalog = catalog_path.empty() ? default_catalog() : load_catalog(catalog_path);
  const auto r = load_profile(path, catalog);
  std::size_t present = 0;
  for (const auto id : kCoreAttributeIds) {
    const bool absent = r.profile.is_absent(id);
    if (!absent) ++present;
    std::cout << (absent ? "  absent   " : "  present  ") << id << "\n";
  }
  for (const auto& w : r.warnings) std::cout << "warning: " << w << "\n";
  std::cout << present << " of " << kCoreAttributeCount << " core attributes present\n";
  return 0;
}

int run_suffix_update(const std::string& from, const std::string& to) {
  const auto text = read_file(from);
  const auto table = SuffixTable::parse(text);
  const fs::path tmp = fs::path(to).concat(".tmp");
  write_file(tmp, text);
  fs::rename(tmp, to);
  std::cout << "installed public suffix list " << (table.version().empty() ? "(unversioned)" : table.version())
            << " with " << table.rule_count() << " rules at " << to << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fpwatch: browser fingerprinting measurement"};
  app.require_subcommand(1);
  // Subcommand-level config files are not loaded by CLI11, so the option lives
  // on the top-level app; sections name the subcommand ([proxy], [crawl]).
  app.set_config("--config", "", "TOML or INI file; options go under [proxy], [crawl], ...");
  app.fallthrough();

  ProxyFlags proxy_flags;
  auto* proxy_cmd = app.add_subcommand("proxy", "Run the intercepting proxy");
  proxy_flags.add(proxy_cmd, true);

  CrawlFlags crawl_flags;
  ProxyFlags crawl_proxy;
  crawl_proxy.port = 0;
  auto* crawl_cmd = app.add_subcommand("crawl", "Visit a site list through the proxy");
  crawl_cmd->add_option("--sites", crawl_flags.sites, "Site list, one hostname per line")
      ->required()
      ->check(CLI::ExistingFile);
  crawl_cmd->add_option("--delay", crawl_flags.delay, "Seconds to wait after load")
      ->capture_default_str();
  crawl_cmd->add_option("--timeout", crawl_flags.timeout, "Page load timeout in seconds")
      ->capture_default_str();
  crawl_cmd->add_option("--checkpoint-every", crawl_flags.checkpoint_every,
                        "Checkpoint and restart the browser session every N sites")
      ->capture_default_str();
  crawl_cmd->add_option("--max-retries", crawl_flags.max_retries,
                        "Re-visits after a crash or navigation error")
      ->capture_default_str();
  crawl_cmd->add_option("--scheme", crawl_flags.scheme, "Homepage scheme")
      ->check(CLI::IsMember({"http", "https"}))
      ->capture_default_str();
  crawl_cmd->add_option("--checkpoint", crawl_flags.checkpoint, "Checkpoint file for a new run")
      ->capture_default_str();
  crawl_cmd->add_option("--resume", crawl_flags.resume, "Continue the run checkpointed at PATH");
  crawl_cmd->add_option("--webdriver", crawl_flags.webdriver, "WebDriver endpoint URL")
      ->capture_default_str();
  crawl_cmd->add_option("--capabilities", crawl_flags.capabilities,
                        "Extra W3C capabilities as a JSON object");
  crawl_cmd->add_flag("--accept-insecure-certs", crawl_flags.insecure_certs,
                      "Let the browser accept untrusted certificates");
  crawl_cmd->add_option("--proxy", crawl_flags.proxy_url,
                        "URL of a running `fpwatch proxy`; otherwise one runs in process");
  crawl_cmd->add_option("--command-log", crawl_flags.command_log,
                        "Append every WebDriver command to this JSONL file");
  crawl_cmd->add_option("--report", crawl_flags.report, "Write the crawl report JSON here");
  crawl_proxy.add(crawl_cmd, false);

  ReportFlags report_flags;
  auto* report_cmd = app.add_subcommand("report", "Aggregate a capture log into reports");
  report_cmd->add_option("--log", report_flags.log, "Capture log")->required()->check(CLI::ExistingFile);
  report_cmd->add_option("--out", report_flags.out, "Output directory");
  report_cmd->add_option("--format", report_flags.formats, "csv,json,plot in any combination")
      ->capture_default_str();
  report_cmd->add_option("--top", report_flags.top, "Rows per ranking")->capture_default_str();
  report_cmd->add_option("--catalog", report_flags.catalog, "Attribute catalog TSV");
  report_cmd->add_option("--psl", report_flags.psl, "Public suffix list (default: built in)");
  report_cmd->add_flag("--summary", report_flags.summary, "Print the summary JSON and exit");

  std::string catalog_path;
  bool catalog_dump = false;
  auto* catalog_cmd = app.add_subcommand("catalog", "Show the attribute catalog");
  catalog_cmd->add_option("--catalog", catalog_path, "Catalog TSV to check instead of the built-in one");
  catalog_cmd->add_flag("--dump", catalog_dump, "Print the catalog as TSV");

  auto* ca_cmd = app.add_subcommand("ca", "Manage the local interception CA");
  ca_cmd->require_subcommand(1);
  std::string ca_dir;
  std::string ca_name = "fpwatch local interception CA";
  bool ca_force = false;
  auto* ca_init = ca_cmd->add_subcommand("init", "Create a root certificate and key");
  ca_init->add_option("--dir", ca_dir, "Directory for ca.pem and ca.key")->required();
  ca_init->add_option("--name", ca_name, "Certificate common name")->capture_default_str();
  ca_init->add_flag("--force", ca_force, "Overwrite an existing CA");

  auto* suffix_cmd = app.add_subcommand("suffix", "Manage the public suffix list");
  suffix_cmd->require_subcommand(1);
  std::string suffix_from;
  std::string suffix_to;
  auto* suffix_update = suffix_cmd->add_subcommand("update", "Validate and install a list");
  suffix_update->add_option("--from", suffix_from, "Downloaded public_suffix_list.dat")
      ->required()
      ->check(CLI::ExistingFile);
  suffix_update->add_option("--to", suffix_to, "Where commands read it from (pass as --psl)")
      ->required();

  auto* sites_cmd = app.add_subcommand("sites", "Site list utilities");
  sites_cmd->require_subcommand(1);
  std::string sites_in;
  std::string sites_out;
  auto* sites_convert = sites_cmd->add_subcommand("convert", "Top-sites CSV to a site list");
  sites_convert->add_option("--in", sites_in, "rank,domain CSV")->required()->check(CLI::ExistingFile);
  sites_convert->add_option("--out", sites_out, "Site list output (stdout if omitted)");

  ScanFlags scan_flags;
  auto* scan_cmd = app.add_subcommand("scan", "Run the detector on one request");
  scan_cmd->add_option("--url", scan_flags.url, "Request URL")->required();
  scan_cmd->add_option("--method", scan_flags.method, "GET, POST or HEAD")->capture_default_str();
  scan_cmd->add_option("--body", scan_flags.body, "Request body");
  scan_cmd->add_option("--body-file", scan_flags.body_file, "Read the body from a file");
  scan_cmd->add_option("--content-type", scan_flags.content_type, "Content-Type of the body");
  scan_cmd->add_option("--header", scan_flags.headers, "Custom header 'X-Name: value'")->take_all();
  scan_cmd->add_option("--catalog", scan_flags.catalog, "Attribute catalog TSV");
  scan_cmd->add_option("--profile", scan_flags.profile, "Device profile JSON");

  auto* profile_cmd = app.add_subcommand("profile", "Device profile utilities");
  profile_cmd->require_subcommand(1);
  std::string profile_path;
  std::string profile_catalog;
  auto* profile_check = profile_cmd->add_subcommand("check", "Report which core attributes a profile has");
  profile_check->add_option("profile", profile_path, "Profile JSON")->required()->check(CLI::ExistingFile);
  profile_check->add_option("--catalog", profile_catalog, "Attribute catalog TSV");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*proxy_cmd) return run_proxy(proxy_flags);
    if (*crawl_cmd) return run_crawl_command(crawl_flags, crawl_proxy);
    if (*report_cmd) return run_report(report_flags);
    if (*catalog_cmd) return run_catalog(catalog_path, catalog_dump);
    if (*ca_init) {
      const auto files = tls::init_ca(ca_dir, ca_name, ca_force);
      std::cout << files.cert.string() << "\nsha256 " << tls::certificate_fingerprint(files.cert)
                << "\nInstall this certificate as a trusted root in the crawling browser only.\n";
      return 0;
    }
    if (*suffix_update) return run_suffix_update(suffix_from, suffix_to);
    if (*sites_convert) {
      std::ostringstream list;
      for (const auto& s : convert_top_sites_csv(read_file(sites_in))) list << s << "\n";
      if (sites_out.empty()) {
        std::cout << list.str();
      } else {
        write_file(sites_out, list.str());
      }
      return 0;
    }
    if (*scan_cmd) return run_scan(scan_flags);
    if (*profile_check) return run_profile_check(profile_path, profile_catalog);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitError;
  }
  return 0;
}
