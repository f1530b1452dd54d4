#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "fpwatch/error.h"
#include "fpwatch/record.h"
#include "fpwatch/webdriver.h"

namespace fpwatch {

class Proxy;

struct CrawlConfig {
  // Rank-ordered hostnames.
  std::vector<std::string> site_list;
  double post_load_delay_s = 3;
  double page_timeout_s = 20;
  std::size_t checkpoint_every = 200;
  int max_retries_per_site = 1;
  // Homepage URL is scheme + "://" + site + "/".
  std::string scheme = "http";
  // Empty disables checkpointing.
  std::filesystem::path checkpoint_path;

  // Throws ConfigError.
  void validate() const;
};

// One hostname per line; blank lines and '#' comments skipped, surrounding
// whitespace trimmed, hosts lowercased. Throws IoError / ValidationError.
std::vector<std::string> read_site_list(const std::filesystem::path& path);
// Strips rank columns from a top-sites CSV ("1,google.com" or plain host
// lines) and returns the hosts in file order.
std::vector<std::string> convert_top_sites_csv(std::string_view text);
std::string site_list_digest(const std::vector<std::string>& sites);

struct VisitOutcome {
  std::string site;
  VisitStatus status = VisitStatus::Loaded;
  double load_time_s = 0;
  std::size_t capture_count = 0;
  bool revisited = false;

  bool operator==(const VisitOutcome&) const = default;
};

struct CrawlState {
  std::string site_list_sha256;
  // Index of the first site not yet covered by this checkpoint.
  std::size_t next_index = 0;
  // Final outcome of sites [0, next_index).
  std::vector<VisitOutcome> outcomes;

  bool operator==(const CrawlState&) const = default;
};

inline constexpr std::string_view kCheckpointFormat = "fpwatch-checkpoint";

// The checkpoint at `path` cannot be trusted. `last_intact` names the
// newest checkpoint that still verifies, if any.
class CheckpointError : public Error {
 public:
  CheckpointError(const std::string& what, std::optional<std::filesystem::path> last_intact,
                  std::optional<std::size_t> last_intact_index)
      : Error(what), last_intact_(std::move(last_intact)), last_intact_index_(last_intact_index) {}
  const std::optional<std::filesystem::path>& last_intact() const { return last_intact_; }
  std::optional<std::size_t> last_intact_index() const { return last_intact_index_; }

 private:
  std::optional<std::filesystem::path> last_intact_;
  std::optional<std::size_t> last_intact_index_;
};

std::string encode_checkpoint(const CrawlState& state);
// Throws ParseError when the text is not an intact checkpoint.
CrawlState decode_checkpoint(std::string_view text);

// Writes temp, fsyncs, keeps the previous checkpoint as `path.prev`, then
// renames into place. Throws IoError.
void write_checkpoint(const std::filesystem::path& path, const CrawlState& state);

// nullopt when no checkpoint exists (cold start). Throws CheckpointError
// when the file is corrupt, and ValidationError when it belongs to a
// different site list.
std::optional<CrawlState> load_checkpoint(const std::filesystem::path& path,
                                          const std::vector<std::string>& site_list);

// How the crawler declares attribution windows to the proxy.
class VisitWindow {
 public:
  virtual ~VisitWindow() = default;
  virtual std::uint64_t begin(const std::string& site, const std::string& origin_host) = 0;
  // Commits the visit record; returns its capture count.
  virtual std::size_t end(const VisitRecord& record) = 0;
};

// Proxy in the same process.
class LocalVisitWindow : public VisitWindow {
 public:
  explicit LocalVisitWindow(Proxy& proxy) : proxy_(proxy) {}
  std::uint64_t begin(const std::string& site, const std::string& origin_host) override;
  std::size_t end(const VisitRecord& record) override;

 private:
  Proxy& proxy_;
};

// Proxy in another process, through its control endpoint. Throws IoError
// when the proxy cannot be reached.
class RemoteVisitWindow : public VisitWindow {
 public:
  // `proxy_url` like "http://127.0.0.1:8080".
  explicit RemoteVisitWindow(const std::string& proxy_url);
  ~RemoteVisitWindow() override;
  std::uint64_t begin(const std::string& site, const std::string& origin_host) override;
  std::size_t end(const VisitRecord& record) override;

 private:
  struct Http;
  std::unique_ptr<Http> http_;
};

struct CrawlReport {
  std::vector<VisitOutcome> outcomes;
  // Site index the run started at (non-zero after resume).
  std::size_t start_index = 0;
  // Navigations issued, retries included.
  std::size_t attempts = 0;
  std::size_t checkpoints_written = 0;
  bool aborted = false;
  std::string abort_reason;

  std::size_t count(VisitStatus s) const;
};

struct CrawlHooks {
  // Called after each site's final outcome is known.
  std::function<void(std::size_t index, const VisitOutcome&)> on_outcome;
  // Polled between sites; a true value stops the run after a checkpoint.
  const std::atomic<bool>* cancel = nullptr;
};

// Drives one browser session through the site list, one site at a time.
class Crawler {
 public:
  Crawler(CrawlConfig config, WebDriverOptions browser, VisitWindow& window,
          CrawlHooks hooks = {});
  ~Crawler();

  // Runs from `resume` (or site 0). Individual site failures never abort;
  // losing the browser endpoint does, after writing a checkpoint at the
  // first unfinished site.
  CrawlReport run(std::optional<CrawlState> resume = std::nullopt);

  // Visits one site: opens the window, navigates a fresh tab, waits out the
  // post-load delay, closes the tab and commits. Requires a session.
  VisitOutcome visit(const std::string& site, std::size_t site_index, bool revisited);

 private:
  void open_session();
  void restart_session();

  CrawlConfig config_;
  WebDriverClient browser_;
  VisitWindow& window_;
  CrawlHooks hooks_;
  std::string main_window_;
  bool session_lost_ = false;
};

// Loads the checkpoint (when configured) and runs the crawl.
CrawlReport run_crawl(const CrawlConfig& config, const WebDriverOptions& browser,
                      VisitWindow& window, CrawlHooks hooks = {});

std::string crawl_report_to_json(const CrawlReport& report);

}  // namespace fpwatch
