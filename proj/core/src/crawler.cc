#include "fpwatch/crawler.h"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <fstream>
#include <sstream>
#include <thread>

#include "fpwatch/capture_log.h"
#include "fpwatch/codec.h"
#include "fpwatch/proxy.h"
#include "httplib.h"
#include "json.hpp"

namespace fpwatch {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::int64_t now_ms() {
  return std::chrono::duration_cast<std::chrono::milliseconds>(
             std::chrono::system_clock::now().time_since_epoch())
      .count();
}

bool valid_host(std::string_view h) {
  if (h.empty() || h.size() > 253 || h.front() == '.' || h.back() == '.') return false;
  return std::all_of(h.begin(), h.end(), [](char c) {
    return codec::is_alnum(c) || c == '-' || c == '.' || static_cast<unsigned char>(c) >= 0x80;
  });
}

std::vector<std::string> split(std::string_view line, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto p = line.find(sep, start);
    out.emplace_back(codec::trim(line.substr(start, p == std::string_view::npos ? p : p - start)));
    if (p == std::string_view::npos) break;
    start = p + 1;
  }
  return out;
}

bool all_digits(std::string_view s) {
  return !s.empty() && std::all_of(s.begin(), s.end(), codec::is_digit);
}

// Errors meaning the browser session is gone rather than the page failing.
bool session_lost(const WebDriverError& e) {
  return e.transport() || e.code() == "invalid session id" || e.code() == "session not created";
}

json outcome_to_json(const VisitOutcome& o) {
  return {{"site", o.site},
          {"status", to_string(o.status)},
          {"load_time_s", o.load_time_s},
          {"capture_count", o.capture_count},
          {"revisited", o.revisited}};
}

VisitOutcome outcome_from_json(const json& j) {
  VisitOutcome o;
  o.site = j.at("site").get<std::string>();
  const auto status = parse_visit_status(j.at("status").get<std::string>());
  if (!status) throw ParseError("unknown visit status " + j.at("status").dump());
  o.status = *status;
  o.load_time_s = j.at("load_time_s").get<double>();
  o.capture_count = j.at("capture_count").get<std::size_t>();
  o.revisited = j.at("revisited").get<bool>();
  return o;
}

std::optional<CrawlState> try_decode_file(const fs::path& p, std::string* error) {
  std::ifstream in(p, std::ios::binary);
  if (!in) {
    if (error) *error = "cannot read " + p.string();
    return std::nullopt;
  }
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return decode_checkpoint(ss.str());
  } catch (const ParseError& e) {
    if (error) *error = e.what();
    return std::nullopt;
  }
}

fs::path prev_path(const fs::path& p) { return fs::path(p.string() + ".prev"); }

void fsync_dir(const fs::path& dir) {
  const int fd = ::open(dir.empty() ? "." : dir.c_str(), O_RDONLY | O_DIRECTORY);
  if (fd < 0) return;
  ::fsync(fd);
  ::close(fd);
}

}  // namespace

void CrawlConfig::validate() const {
  if (site_list.empty()) throw ConfigError("site list is empty");
  if (!(post_load_delay_s >= 0)) throw ConfigError("post-load delay must be >= 0");
  if (!(page_timeout_s > 0)) throw ConfigError("page timeout must be > 0");
  if (checkpoint_every < 1) throw ConfigError("checkpoint interval must be >= 1");
  if (max_retries_per_site < 0) throw ConfigError("retry count must be >= 0");
  if (scheme != "http" && scheme != "https") throw ConfigError("scheme must be http or https");
}

std::vector<std::string> read_site_list(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read site list " + path.string());
  std::vector<std::string> sites;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    auto t = codec::trim(line);
    if (n == 1 && t.starts_with("\xEF\xBB\xBF")) t.remove_prefix(3);
    if (t.empty() || t.front() == '#') continue;
    auto host = codec::to_lower(t);
    if (!valid_host(host)) throw ValidationError("site list line " + std::to_string(n) + ": bad hostname '" + host + "'");
    sites.push_back(std::move(host));
  }
  return sites;
}

std::vector<std::string> convert_top_sites_csv(std::string_view text) {
  std::vector<std::string> sites;
  std::size_t n = 0;
  for (const auto& raw : split(text, '\n')) {
    ++n;
    std::string_view line = raw;
    if (n == 1 && line.starts_with("\xEF\xBB\xBF")) line.remove_prefix(3);
    if (line.empty() || line.front() == '#') continue;
    const auto fields = split(line, ',');
    // Header row: several columns and none of them a rank.
    if (sites.empty() && fields.size() > 1 &&
        std::none_of(fields.begin(), fields.end(), [](const auto& f) { return all_digits(f); })) {
      continue;
    }
    std::string host;
    for (auto it = fields.rbegin(); it != fields.rend(); ++it) {
      if (!it->empty() && !all_digits(*it)) {
        host = codec::to_lower(*it);
        break;
      }
    }
    if (!valid_host(host)) throw ValidationError("top-sites line " + std::to_string(n) + ": no hostname");
    sites.push_back(std::move(host));
  }
  return sites;
}

std::string site_list_digest(const std::vector<std::string>& sites) {
  std::string joined;
  for (const auto& s : sites) joined += s + "\n";
  return codec::sha256_hex(joined);
}

std::string encode_checkpoint(const CrawlState& state) {
  json outcomes = json::array();
  for (const auto& o : state.outcomes) outcomes.push_back(outcome_to_json(o));
  json j = {{"format", kCheckpointFormat},
            {"version", 1},
            {"site_list_sha256", state.site_list_sha256},
            {"next_index", state.next_index},
            {"outcomes", outcomes}};
  j["sha256"] = codec::sha256_hex(j.dump());
  return j.dump(1) + "\n";
}

CrawlState decode_checkpoint(std::string_view text) {
  auto j = json::parse(text, nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw ParseError("checkpoint is not valid JSON");
  if (j.value("format", "") != kCheckpointFormat) throw ParseError("not a checkpoint file");
  if (j.value("version", 0) != 1) throw ParseError("unsupported checkpoint version");
  if (!j.contains("sha256") || !j["sha256"].is_string()) throw ParseError("checkpoint has no checksum");
  const auto sum = j["sha256"].get<std::string>();
  j.erase("sha256");
  if (codec::sha256_hex(j.dump()) != sum) throw ParseError("checkpoint checksum mismatch");
  try {
    CrawlState s;
    s.site_list_sha256 = j.at("site_list_sha256").get<std::string>();
    s.next_index = j.at("next_index").get<std::size_t>();
    for (const auto& o : j.at("outcomes")) s.outcomes.push_back(outcome_from_json(o));
    if (s.outcomes.size() != s.next_index) throw ParseError("outcome count does not match next_index");
    return s;
  } catch (const json::exception& e) {
    throw ParseError(std::string("checkpoint: ") + e.what());
  }
}

void write_checkpoint(const fs::path& path, const CrawlState& state) {
  const auto text = encode_checkpoint(state);
  const fs::path tmp = path.string() + ".tmp";
  const int fd = ::open(tmp.c_str(), O_WRONLY | O_CREAT | O_TRUNC | O_CLOEXEC, 0644);
  if (fd < 0) throw IoError("cannot write checkpoint " + tmp.string());
  std::size_t off = 0;
  while (off < text.size()) {
    const auto n = ::write(fd, text.data() + off, text.size() - off);
    if (n < 0) {
      if (errno == EINTR) continue;
      ::close(fd);
      throw IoError("cannot write checkpoint " + tmp.string());
    }
    off += static_cast<std::size_t>(n);
  }
  if (::fsync(fd) != 0) {
    ::close(fd);
    throw IoError("cannot sync checkpoint " + tmp.string());
  }
  ::close(fd);
  std::error_code ec;
  if (fs::exists(path, ec)) {
    // Link rather than rename so `path` exists at every instant.
    const auto prev = prev_path(path);
    fs::remove(prev, ec);
    fs::create_hard_link(path, prev, ec);
    if (ec) fs::copy_file(path, prev, fs::copy_options::overwrite_existing, ec);
  }
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("cannot install checkpoint " + path.string() + ": " + ec.message());
  fsync_dir(path.parent_path());
}

std::optional<CrawlState> load_checkpoint(const fs::path& path,
                                          const std::vector<std::string>& site_list) {
  std::error_code ec;
  if (!fs::exists(path, ec)) return std::nullopt;
  std::string error;
  auto state = try_decode_file(path, &error);
  if (!state) {
    const auto prev = prev_path(path);
    std::string ignored;
    if (fs::exists(prev, ec)) {
      if (auto older = try_decode_file(prev, &ignored)) {
        throw CheckpointError("checkpoint " + path.string() + " is corrupt (" + error +
                                  "); last intact checkpoint is " + prev.string() +
                                  " (resumes at site " + std::to_string(older->next_index + 1) + ")",
                              prev, older->next_index);
      }
    }
    throw CheckpointError("checkpoint " + path.string() + " is corrupt (" + error +
                              "); no intact checkpoint remains",
                          std::nullopt, std::nullopt);
  }
  if (state->site_list_sha256 != site_list_digest(site_list)) {
    throw ValidationError("checkpoint " + path.string() + " belongs to a different site list");
  }
  if (state->next_index > site_list.size()) {
    throw ValidationError("checkpoint " + path.string() + " is past the end of the site list");
  }
  for (std::size_t i = 0; i < state->outcomes.size(); ++i) {
    if (state->outcomes[i].site != site_list[i]) {
      throw ValidationError("checkpoint outcome " + std::to_string(i) + " names another site");
    }
  }
  return state;
}

std::uint64_t LocalVisitWindow::begin(const std::string& site, const std::string& origin_host) {
  return proxy_.begin_visit(site, origin_host);
}

std::size_t LocalVisitWindow::end(const VisitRecord& record) { return proxy_.end_visit(record); }

struct RemoteVisitWindow::Http {
  std::unique_ptr<httplib::Client> client;
  std::string url;

  json post(const std::string& path, const std::string& body) {
    auto r = client->Post(path, body, "application/json");
    if (!r) throw IoError("proxy control endpoint " + url + ": " + httplib::to_string(r.error()));
    if (r->status != 200) {
      throw IoError("proxy control endpoint " + url + path + " returned " +
                    std::to_string(r->status) + ": " + r->body);
    }
    auto j = json::parse(r->body, nullptr, false);
    if (j.is_discarded()) throw IoError("proxy control endpoint returned malformed JSON");
    return j;
  }
};

RemoteVisitWindow::RemoteVisitWindow(const std::string& proxy_url) : http_(std::make_unique<Http>()) {
  http_->url = proxy_url.find("://") == std::string::npos ? "http://" + proxy_url : proxy_url;
  http_->client = std::make_unique<httplib::Client>(http_->url);
  if (!http_->client->is_valid()) throw ConfigError("bad proxy URL " + proxy_url);
  http_->client->set_connection_timeout(10, 0);
  http_->client->set_read_timeout(30, 0);
}

RemoteVisitWindow::~RemoteVisitWindow() = default;

std::uint64_t RemoteVisitWindow::begin(const std::string& site, const std::string& origin_host) {
  const auto j = http_->post("/fpwatch/visit/begin", json{{"site", site}, {"origin", origin_host}}.dump());
  return j.at("visit").get<std::uint64_t>();
}

std::size_t RemoteVisitWindow::end(const VisitRecord& record) {
  return http_->post("/fpwatch/visit/end", encode_visit(record)).at("captures").get<std::size_t>();
}

std::size_t CrawlReport::count(VisitStatus s) const {
  return static_cast<std::size_t>(
      std::count_if(outcomes.begin(), outcomes.end(), [&](const auto& o) { return o.status == s; }));
}

Crawler::Crawler(CrawlConfig config, WebDriverOptions browser, VisitWindow& window, CrawlHooks hooks)
    : config_(std::move(config)), browser_(std::move(browser)), window_(window), hooks_(std::move(hooks)) {
  config_.validate();
}

Crawler::~Crawler() { browser_.delete_session(); }

void Crawler::open_session() {
  browser_.new_session();
  browser_.set_page_load_timeout(
      std::chrono::milliseconds(static_cast<std::int64_t>(config_.page_timeout_s * 1000)));
  main_window_ = browser_.current_window();
  session_lost_ = false;
}

void Crawler::restart_session() {
  browser_.delete_session();
  // A browser that just died can take a moment before the driver accepts a
  // new session.
  for (int attempt = 0;; ++attempt) {
    try {
      open_session();
      return;
    } catch (const WebDriverError&) {
      if (attempt == 2) throw;
      std::this_thread::sleep_for(std::chrono::milliseconds(500 * (attempt + 1)));
    }
  }
}

VisitOutcome Crawler::visit(const std::string& site, std::size_t site_index, bool revisited) {
  VisitRecord rec;
  rec.site = site;
  rec.site_index = site_index;
  rec.revisited = revisited;
  rec.started_ms = now_ms();
  rec.visit_no = window_.begin(site, site);

  const auto t0 = std::chrono::steady_clock::now();
  auto elapsed = [&] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  };
  std::string tab;
  try {
    tab = browser_.new_tab();
    browser_.switch_to(tab);
    browser_.navigate(config_.scheme + "://" + site + "/");
    // Round trips to the driver can push the measured time a little past a
    // load the browser itself reported within the timeout.
    rec.load_time_s = std::min(elapsed(), config_.page_timeout_s);
    rec.status = VisitStatus::Loaded;
    std::this_thread::sleep_for(std::chrono::duration<double>(config_.post_load_delay_s));
  } catch (const WebDriverError& e) {
    rec.load_time_s = elapsed();
    if (session_lost(e)) {
      rec.status = VisitStatus::BrowserCrashed;
      session_lost_ = true;
    } else if (e.code() == "timeout") {
      rec.status = VisitStatus::TimedOut;
    } else {
      rec.status = VisitStatus::NavigationError;
      // Drivers often report a dying browser as a generic error first.
      try {
        browser_.current_window();
      } catch (const WebDriverError& probe) {
        if (session_lost(probe)) {
          rec.status = VisitStatus::BrowserCrashed;
          session_lost_ = true;
        }
      }
    }
  }
  if (!session_lost_ && !tab.empty()) {
    try {
      browser_.close_window();
      browser_.switch_to(main_window_);
    } catch (const WebDriverError& e) {
      // The page's captures are already in; only the next visit needs a
      // working session.
      if (session_lost(e)) session_lost_ = true;
    }
  }
  rec.ended_ms = now_ms();
  rec.capture_count = window_.end(rec);
  return {site, rec.status, rec.load_time_s, rec.capture_count, revisited};
}

CrawlReport Crawler::run(std::optional<CrawlState> resume) {
  const auto digest = site_list_digest(config_.site_list);
  CrawlState state = resume.value_or(CrawlState{digest, 0, {}});
  if (state.site_list_sha256 != digest) throw ValidationError("checkpoint belongs to a different site list");
  if (state.next_index > config_.site_list.size()) throw ValidationError("checkpoint is past the end of the site list");

  CrawlReport report;
  report.start_index = state.next_index;
  auto save = [&] {
    if (config_.checkpoint_path.empty()) return;
    write_checkpoint(config_.checkpoint_path, state);
    ++report.checkpoints_written;
  };
  auto abort = [&](const std::string& reason) {
    report.aborted = true;
    report.abort_reason = reason;
    save();
  };

  if (state.next_index < config_.site_list.size()) {
    try {
      open_session();
    } catch (const WebDriverError& e) {
      abort(std::string("browser automation endpoint unavailable: ") + e.what());
    }
  }

  std::size_t since_checkpoint = 0;
  for (std::size_t i = state.next_index; !report.aborted && i < config_.site_list.size(); ++i) {
    if (hooks_.cancel && hooks_.cancel->load()) {
      abort("cancelled");
      break;
    }
    const auto& site = config_.site_list[i];
    VisitOutcome out;
    try {
      out = visit(site, i, false);
      ++report.attempts;
      for (int retry = 0; retry < config_.max_retries_per_site &&
                          (out.status == VisitStatus::BrowserCrashed ||
                           out.status == VisitStatus::NavigationError);
           ++retry) {
        if (session_lost_) restart_session();
        out = visit(site, i, true);
        ++report.attempts;
      }
      if (session_lost_) restart_session();
    } catch (const WebDriverError& e) {
      // Only session (re)creation gets here; the checkpoint points at this
      // site so a resumed run visits it again.
      abort(std::string("browser automation endpoint unavailable: ") + e.what());
      break;
    } catch (const IoError& e) {
      abort(std::string("proxy unavailable: ") + e.what());
      break;
    }
    state.outcomes.push_back(out);
    state.next_index = i + 1;
    if (hooks_.on_outcome) hooks_.on_outcome(i, out);
    if (++since_checkpoint == config_.checkpoint_every && i + 1 < config_.site_list.size()) {
      since_checkpoint = 0;
      save();
      // Each batch starts from a fresh browser session.
      try {
        restart_session();
      } catch (const WebDriverError& e) {
        report.aborted = true;
        report.abort_reason = std::string("browser automation endpoint unavailable: ") + e.what();
      }
    }
  }
  if (!report.aborted) save();
  browser_.delete_session();
  report.outcomes = std::move(state.outcomes);
  return report;
}

CrawlReport run_crawl(const CrawlConfig& config, const WebDriverOptions& browser,
                      VisitWindow& window, CrawlHooks hooks) {
  config.validate();
  std::optional<CrawlState> resume;
  if (!config.checkpoint_path.empty()) resume = load_checkpoint(config.checkpoint_path, config.site_list);
  Crawler crawler(config, browser, window, std::move(hooks));
  return crawler.run(std::move(resume));
}

std::string crawl_report_to_json(const CrawlReport& report) {
  json outcomes = json::array();
  for (const auto& o : report.outcomes) outcomes.push_back(outcome_to_json(o));
  json counts = json::object();
  for (auto s : {VisitStatus::Loaded, VisitStatus::TimedOut, VisitStatus::BrowserCrashed,
                 VisitStatus::NavigationError}) {
    counts[std::string(to_string(s))] = report.count(s);
  }
  return json{{"format", "fpwatch-crawl-report"},
              {"start_index", report.start_index},
              {"attempts", report.attempts},
              {"checkpoints_written", report.checkpoints_written},
              {"aborted", report.aborted},
              {"abort_reason", report.abort_reason},
              {"counts", counts},
              {"outcomes", outcomes}}
      .dump(2);
}

}  // namespace fpwatch
