#include "harness/fixtures.h"

#include <algorithm>
#include <chrono>
#include <regex>

#include "fpwatch/catalog.h"
#include "fpwatch/codec.h"
#include "harness/raw_server.h"
#include "httplib.h"

namespace fpwatch::test {

using nlohmann::json;

namespace {

const std::regex& placeholder_re() {
  static const std::regex re(R"(\$\{([^}]+)\})");
  return re;
}

std::int64_t now_ms() {
  return std::chrono::duration_cast<std::chrono::milliseconds>(
             std::chrono::system_clock::now().time_since_epoch())
      .count();
}

// What a browser's URL parser escapes in a query it was handed verbatim.
std::string escape_query(std::string_view q) {
  static constexpr char kHex[] = "0123456789ABCDEF";
  std::string out;
  for (const char ch : q) {
    const auto c = static_cast<unsigned char>(ch);
    if (c <= 0x20 || c >= 0x7F || c == '"' || c == '#' || c == '<' || c == '>' || c == '\'') {
      out += '%';
      out += kHex[c >> 4];
      out += kHex[c & 0xF];
    } else {
      out += ch;
    }
  }
  return out;
}

std::string substitute(const std::string& tmpl, const DeviceProfile& profile, bool encode_values) {
  std::string out;
  auto begin = std::sregex_iterator(tmpl.begin(), tmpl.end(), placeholder_re());
  std::size_t last = 0;
  for (auto it = begin; it != std::sregex_iterator(); ++it) {
    out += tmpl.substr(last, static_cast<std::size_t>(it->position()) - last);
    const auto v = placeholder_value(profile, (*it)[1].str());
    out += encode_values ? codec::percent_encode(v) : v;
    last = static_cast<std::size_t>(it->position() + it->length());
  }
  out += tmpl.substr(last);
  return out;
}

std::string_view obfuscation_name(Obfuscation o) {
  switch (o) {
    case Obfuscation::None: return "none";
    case Obfuscation::Percent: return "percent";
    case Obfuscation::Base64: return "base64";
  }
  return "none";
}

Obfuscation parse_obfuscation(const std::string& s) {
  if (s == "percent") return Obfuscation::Percent;
  if (s == "base64") return Obfuscation::Base64;
  return Obfuscation::None;
}

std::string strip_port(std::string host) {
  const auto colon = host.rfind(':');
  if (colon != std::string::npos && host.find(']') == std::string::npos) host.resize(colon);
  return codec::to_lower(host);
}

PlanStep step(int delay_ms, Method m, Scheme s, Role r, std::string host, std::string path,
              std::string payload, Obfuscation o = Obfuscation::None, std::string param = {},
              std::string content_type = "application/x-www-form-urlencoded") {
  PlanStep p;
  p.delay_ms = delay_ms;
  p.method = m;
  p.transport = s;
  p.role = r;
  p.host = std::move(host);
  p.path = std::move(path);
  p.payload = std::move(payload);
  p.obfuscation = o;
  p.param = std::move(param);
  p.content_type = std::move(content_type);
  return p;
}

constexpr auto Get = Method::Get;
constexpr auto Post = Method::Post;
constexpr auto Head = Method::Head;
constexpr auto Http = Scheme::Http;
constexpr auto Https = Scheme::Https;
constexpr auto First = Role::FirstParty;
constexpr auto Third = Role::ThirdParty;

}  // namespace

std::set<std::string> seeded_attributes(const PlanStep& step) {
  std::set<std::string> out;
  for (auto it = std::sregex_iterator(step.payload.begin(), step.payload.end(), placeholder_re());
       it != std::sregex_iterator(); ++it) {
    out.insert((*it)[1].str());
  }
  return out;
}

bool is_clean(const PlanStep& step) { return seeded_attributes(step).empty(); }

std::string placeholder_value(const DeviceProfile& profile, const std::string& id) {
  const auto* vs = profile.values(id);
  if (!vs) return {};
  std::string out;
  for (const auto& v : *vs) out += (out.empty() ? "" : ", ") + v;
  return out;
}

StepRequest build_request(const PlanStep& step, const DeviceProfile& profile) {
  std::string payload;
  switch (step.obfuscation) {
    case Obfuscation::None:
      payload = substitute(step.payload, profile, false);
      break;
    case Obfuscation::Percent:
      payload = substitute(step.payload, profile, true);
      break;
    case Obfuscation::Base64: {
      const auto b64 = codec::base64_encode(substitute(step.payload, profile, false));
      payload = step.param.empty() ? b64 : step.param + "=" + codec::percent_encode(b64);
      break;
    }
  }
  StepRequest r;
  r.method = step.method;
  r.url = std::string(step.transport == Scheme::Https ? "https://" : "http://") + step.host + step.path;
  if (step.method == Method::Post) {
    r.body = payload;
    r.content_type = step.content_type;
  } else if (!payload.empty()) {
    r.url += "?" + escape_query(payload);
  }
  return r;
}

json step_to_json(const PlanStep& s) {
  return {{"delay_ms", s.delay_ms},
          {"method", to_string(s.method)},
          {"transport", to_string(s.transport)},
          {"role", s.role == Role::FirstParty ? "first" : "third"},
          {"host", s.host},
          {"path", s.path},
          {"payload", s.payload},
          {"obfuscation", obfuscation_name(s.obfuscation)},
          {"param", s.param},
          {"content_type", s.content_type}};
}

PlanStep step_from_json(const json& j) {
  PlanStep s;
  s.delay_ms = j.at("delay_ms").get<int>();
  s.method = parse_method(j.at("method").get<std::string>()).value();
  s.transport = parse_scheme(j.at("transport").get<std::string>()).value();
  s.role = j.at("role").get<std::string>() == "first" ? Role::FirstParty : Role::ThirdParty;
  s.host = j.at("host").get<std::string>();
  s.path = j.at("path").get<std::string>();
  s.payload = j.at("payload").get<std::string>();
  s.obfuscation = parse_obfuscation(j.at("obfuscation").get<std::string>());
  s.param = j.at("param").get<std::string>();
  s.content_type = j.at("content_type").get<std::string>();
  return s;
}

namespace {
constexpr std::string_view kPlanOpen = "<script type=\"application/fpwatch-plan\">";
constexpr std::string_view kPlanClose = "</script>";
}  // namespace

std::string render_page(const FixtureSite& site) {
  json plan = json::array();
  for (const auto& s : site.plan) plan.push_back(step_to_json(s));
  auto text = plan.dump();
  for (std::size_t p = 0; (p = text.find("</", p)) != std::string::npos; p += 3) text.replace(p, 2, "<\\/");
  return "<!doctype html>\n<html><head><title>" + site.host + "</title>\n" + std::string(kPlanOpen) +
         text + std::string(kPlanClose) + "\n</head><body><h1>" + site.host +
         "</h1></body></html>\n";
}

std::vector<PlanStep> extract_plan(const std::string& html) {
  const auto open = html.find(kPlanOpen);
  if (open == std::string::npos) return {};
  const auto start = open + kPlanOpen.size();
  const auto close = html.find(kPlanClose, start);
  if (close == std::string::npos) return {};
  std::vector<PlanStep> out;
  for (const auto& j : json::parse(html.substr(start, close - start))) out.push_back(step_from_json(j));
  return out;
}

std::vector<FixtureSite> standard_fixtures() {
  const auto form = "application/x-www-form-urlencoded";
  std::vector<FixtureSite> sites;
  sites.push_back({"www.newsdaily.test",
                   {step(0, Get, Http, Third, "collect.trackmetrics.test", "/fp",
                         "sr=${Resolution}&lang=${Language}&cs=${Charset}"),
                    step(0, Get, Http, First, "static.newsdaily.test", "/app.js", ""),
                    step(0, Get, Http, Third, "cdn.imagehost.test", "/img",
                         "file=banner_19201080.jpeg")}});
  sites.push_back({"shop.bigretail.test",
                   {step(0, Post, Https, Third, "api.fpcollect.test", "/v1/collect",
                         R"({"ua":"${User-Agent}","plugins":"${Installed Plugins}"})",
                         Obfuscation::None, "", "application/json"),
                    step(0, Get, Https, First, "shop.bigretail.test", "/cart.json", "")}});
  sites.push_back({"www.localbank.test",
                   {step(0, Post, Http, First, "metrics.localbank.test", "/m",
                         "gpu=${GPU}&gpuv=${GPU Vendor}", Obfuscation::Percent, "", form),
                    step(0, Post, Https, First, "www.localbank.test", "/api/session",
                         R"({"event":"pageview","ref":"home"})", Obfuscation::None, "",
                         "application/json")}});
  sites.push_back({"blog.writersden.test",
                   {step(0, Get, Https, Third, "beacon.adsync.test", "/b",
                         "r=${WebGL Renderer}&v=${WebGL Vendor}&ver=${WebGL Version}",
                         Obfuscation::Base64, "d")}});
  sites.push_back({kDelayedSite,
                   {step(0, Get, Http, First, "www.weatherwatch.test", "/tiles", "z=4&x=8&y=5"),
                    step(kDelayedStepMs, Post, Http, Third, "collect.trackmetrics.test", "/late",
                         "sr=${Resolution}", Obfuscation::None, "", form)}});
  sites.push_back({"www.geoportal.test",
                   {step(0, Get, Http, Third, "geo.locatr.test", "/v",
                         "loc=${Geolocation}&city=${City}&ip=${IP Addresses}", Obfuscation::Percent)}});
  sites.push_back({"www.osdirectory.test",
                   {step(0, Head, Https, Third, "px.trackmetrics.test", "/h",
                         "os=${OS}&osv=${OS Version}&bn=${Browser Name}&bv=${Browser Version}")}});
  sites.push_back({"www.cleanrecipes.test",
                   {step(0, Get, Http, First, "www.cleanrecipes.test", "/static/site.css", ""),
                    step(0, Post, Https, Third, "analytics.pageviews.test", "/hit",
                         "event=pageview&page=home", Obfuscation::None, "", form),
                    step(0, Get, Http, Third, "cdn.imagehost.test", "/img", "file=hero.jpg&w=640"),
                    step(900, Get, Http, Third, "analytics.pageviews.test", "/ping", "t=visible")}});
  sites.push_back({"www.photodecoys.test",
                   {step(0, Get, Http, First, "www.photodecoys.test", "/gallery",
                         "img=wallpaper_19201080.jpeg&thumb=1080.jpg"),
                    step(0, Get, Https, Third, "cdn.imagehost.test", "/img", "file=IMG_1920.png"),
                    step(0, Post, Http, Third, "analytics.pageviews.test", "/hit",
                         "asset=19201080.jpeg&event=view", Obfuscation::None, "", form)}});
  sites.push_back({"www.mixedparty.test",
                   {step(0, Post, Http, First, "www.mixedparty.test", "/api/prefs", "lang=${Language}",
                         Obfuscation::None, "", form),
                    step(0, Get, Https, Third, "collect.trackmetrics.test", "/c", "cs=${Charset}")}});
  sites.push_back({"www.uasniffer.test",
                   {step(0, Get, Http, Third, "collect.trackmetrics.test", "/ua", "ua=${User-Agent}",
                         Obfuscation::Percent),
                    step(800, Post, Https, Third, "api.fpcollect.test", "/v2/late",
                         R"({"res":"${Resolution}","gpu":"${GPU}"})", Obfuscation::Base64, "",
                         "text/plain")}});
  sites.push_back({"www.stalledsite.test", {}, SiteBehavior::NeverResponds});
  sites.push_back({"www.gonesite.test", {}, SiteBehavior::Unreachable});
  return sites;
}

std::vector<ExpectedRequest> expected_requests(const std::vector<FixtureSite>& sites,
                                               double post_load_delay_s) {
  std::vector<ExpectedRequest> out;
  for (const auto& site : sites) {
    if (site.behavior == SiteBehavior::Unreachable) continue;
    ExpectedRequest page;
    page.site = site.host;
    page.host = site.host;
    page.path = "/";
    out.push_back(page);
    if (site.behavior == SiteBehavior::NeverResponds) continue;
    for (const auto& s : site.plan) {
      if (s.delay_ms > 0 && s.delay_ms >= post_load_delay_s * 1000) continue;
      ExpectedRequest e;
      e.site = site.host;
      e.step = s;
      e.host = s.host;
      e.path = s.path;
      e.method = s.method;
      e.scheme = s.transport;
      e.seeded = seeded_attributes(s);
      e.event = !e.seeded.empty();
      out.push_back(std::move(e));
    }
  }
  return out;
}

struct FixtureCluster::Servers {
  httplib::Server http;
  std::unique_ptr<httplib::SSLServer> https;
  std::thread http_thread;
  std::thread https_thread;
};

FixtureCluster::FixtureCluster(std::vector<FixtureSite> sites, const std::filesystem::path& workdir)
    : sites_(std::move(sites)), servers_(std::make_unique<Servers>()) {
  std::map<std::string, const FixtureSite*> by_host;
  for (const auto& s : sites_) {
    hosts_.insert(s.host);
    by_host[s.host] = &s;
    for (const auto& st : s.plan) hosts_.insert(st.host);
  }
  std::filesystem::create_directories(workdir);
  ca_ = tls::init_ca(workdir / "fixture-ca", "fpwatch fixture test CA", true);
  std::vector<std::string> names(hosts_.begin(), hosts_.end());
  tls::issue_certificate(ca_, names, workdir / "fixtures.crt", workdir / "fixtures.key");
  servers_->https = std::make_unique<httplib::SSLServer>((workdir / "fixtures.crt").c_str(),
                                                         (workdir / "fixtures.key").c_str());
  if (!servers_->https->is_valid()) throw std::runtime_error("fixture HTTPS server failed to load its certificate");

  {
    std::uint16_t p = 0;
    const int fd = listen_loopback(p);
    ::close(fd);
    dead_port_ = p;
  }

  auto install = [this, by_host](httplib::Server& server, Scheme scheme) {
    auto handler = [this, by_host, scheme](const httplib::Request& req, httplib::Response& res) {
      const auto host = strip_port(req.get_header_value("Host"));
      ReceivedRequest r;
      r.host = host;
      r.method = req.method;
      r.scheme = scheme;
      r.path = req.path;
      const auto q = req.target.find('?');
      if (q != std::string::npos) r.query = req.target.substr(q + 1);
      r.body = req.body;
      r.timestamp_ms = now_ms();
      {
        std::lock_guard lock(mutex_);
        received_.push_back(r);
      }
      const auto it = by_host.find(host);
      if (it != by_host.end() && req.path == "/") {
        if (it->second->behavior == SiteBehavior::NeverResponds) {
          std::unique_lock lock(mutex_);
          stopping_cv_.wait_for(lock, std::chrono::seconds(120), [this] { return stopping_; });
          return;
        }
        res.set_content(render_page(*it->second), "text/html; charset=utf-8");
        return;
      }
      res.set_content("ok", "text/plain");
    };
    server.Get(".*", handler);
    server.Post(".*", handler);
    server.Put(".*", handler);
    server.Delete(".*", handler);
    server.Options(".*", handler);
    server.set_keep_alive_max_count(1);
  };
  install(servers_->http, Scheme::Http);
  install(*servers_->https, Scheme::Https);

  const int hp = servers_->http.bind_to_any_port("127.0.0.1");
  const int sp = servers_->https->bind_to_any_port("127.0.0.1");
  if (hp <= 0 || sp <= 0) throw std::runtime_error("fixture servers could not bind");
  http_port_ = static_cast<std::uint16_t>(hp);
  https_port_ = static_cast<std::uint16_t>(sp);
  servers_->http_thread = std::thread([this] { servers_->http.listen_after_bind(); });
  servers_->https_thread = std::thread([this] { servers_->https->listen_after_bind(); });
  servers_->http.wait_until_ready();
  servers_->https->wait_until_ready();
}

FixtureCluster::~FixtureCluster() { stop(); }

void FixtureCluster::stop() {
  {
    std::lock_guard lock(mutex_);
    if (stopping_) return;
    stopping_ = true;
  }
  stopping_cv_.notify_all();
  servers_->http.stop();
  servers_->https->stop();
  if (servers_->http_thread.joinable()) servers_->http_thread.join();
  if (servers_->https_thread.joinable()) servers_->https_thread.join();
}

std::vector<std::string> FixtureCluster::site_list() const {
  std::vector<std::string> out;
  for (const auto& s : sites_) out.push_back(s.host);
  return out;
}

std::map<std::string, std::string> FixtureCluster::resolve_map() const {
  std::map<std::string, std::string> m;
  std::set<std::string> unreachable;
  for (const auto& s : sites_) {
    if (s.behavior == SiteBehavior::Unreachable) unreachable.insert(s.host);
  }
  for (const auto& h : hosts_) {
    const bool dead = unreachable.count(h) > 0;
    m[h + ":80"] = "127.0.0.1:" + std::to_string(dead ? dead_port_ : http_port_);
    m[h + ":443"] = "127.0.0.1:" + std::to_string(dead ? dead_port_ : https_port_);
  }
  return m;
}

std::vector<ReceivedRequest> FixtureCluster::received() const {
  std::lock_guard lock(mutex_);
  return received_;
}

void FixtureCluster::clear_received() {
  std::lock_guard lock(mutex_);
  received_.clear();
}

std::string FixtureCluster::receiver_log() const {
  std::vector<std::string> lines;
  for (const auto& r : received()) {
    lines.push_back(json{{"host", r.host},
                         {"method", r.method},
                         {"scheme", to_string(r.scheme)},
                         {"path", r.path},
                         {"query", r.query},
                         {"body", r.body}}
                        .dump());
  }
  // Delayed beacons race each other; arrival order is not part of the log.
  std::sort(lines.begin(), lines.end());
  std::string out;
  for (const auto& l : lines) out += l + "\n";
  return out;
}

}  // namespace fpwatch::test
