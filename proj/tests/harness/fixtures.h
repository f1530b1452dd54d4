#pragma once

// Fixture sites with known ground truth, and the servers that host them.
// A fixture page carries its exfiltration plan as JSON; the scripted browser
// executes the plan the way a page script would.

#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "fpwatch/profile.h"
#include "fpwatch/record.h"
#include "fpwatch/tls.h"
#include "json.hpp"

namespace fpwatch::test {

enum class Obfuscation { None, Percent, Base64 };
enum class Role { FirstParty, ThirdParty };

struct PlanStep {
  // 0 runs while the page loads; anything else runs on a timer after load.
  int delay_ms = 0;
  Method method = Method::Get;
  Scheme transport = Scheme::Http;
  Role role = Role::ThirdParty;
  std::string host;
  std::string path = "/";
  // Query (GET, HEAD) or body (POST) with ${Attribute Id} placeholders.
  std::string payload;
  Obfuscation obfuscation = Obfuscation::None;
  // Base64 payloads go out as param=<b64> when set.
  std::string param;
  std::string content_type = "application/x-www-form-urlencoded";

  bool operator==(const PlanStep&) const = default;
};

enum class SiteBehavior { Normal, NeverResponds, Unreachable };

struct FixtureSite {
  std::string host;
  std::vector<PlanStep> plan;
  SiteBehavior behavior = SiteBehavior::Normal;
};

// Core attribute ids named by the step's placeholders.
std::set<std::string> seeded_attributes(const PlanStep& step);
bool is_clean(const PlanStep& step);

// The request a browser with `profile` sends for a step.
struct StepRequest {
  Method method = Method::Get;
  std::string url;
  std::string body;
  std::string content_type;
};
StepRequest build_request(const PlanStep& step, const DeviceProfile& profile);
// Profile value substituted for a placeholder: multi-valued attributes are
// joined with ", "; absent ones render empty.
std::string placeholder_value(const DeviceProfile& profile, const std::string& id);

nlohmann::json step_to_json(const PlanStep& step);
PlanStep step_from_json(const nlohmann::json& j);
// Page served at "/" of a fixture site.
std::string render_page(const FixtureSite& site);
// Plan embedded in a page; empty when there is none.
std::vector<PlanStep> extract_plan(const std::string& html);

// The standard corpus: every core attribute, GET/POST/HEAD, both transports,
// every obfuscation, first/third/both party sites, decoys, a clean control
// site, a 2.5 s delayed beacon, a never-responding site and an unreachable
// site.
std::vector<FixtureSite> standard_fixtures();
inline constexpr const char* kDelayedSite = "www.weatherwatch.test";
inline constexpr int kDelayedStepMs = 2500;

// One request the browser is expected to make while a site's window is
// open. `step` is empty for the page load itself.
struct ExpectedRequest {
  std::string site;
  std::optional<PlanStep> step;
  std::string host;
  std::string path;
  Method method = Method::Get;
  Scheme scheme = Scheme::Http;
  bool event = false;
  std::set<std::string> seeded;
};

// Ground truth for a crawl with the given post-load delay, derived from the
// plans alone. Timed-out and unreachable sites contribute only their page
// request (unreachable: nothing that reaches a server).
std::vector<ExpectedRequest> expected_requests(const std::vector<FixtureSite>& sites,
                                               double post_load_delay_s);

struct ReceivedRequest {
  std::string host;
  std::string method;
  Scheme scheme = Scheme::Http;
  std::string path;
  std::string query;
  std::string body;
  std::int64_t timestamp_ms = 0;
};

// HTTP and HTTPS virtual-host servers on loopback for every fixture and
// receiver host. Receivers answer 200 and log exactly what arrived.
class FixtureCluster {
 public:
  FixtureCluster(std::vector<FixtureSite> sites, const std::filesystem::path& workdir);
  ~FixtureCluster();
  FixtureCluster(const FixtureCluster&) = delete;
  FixtureCluster& operator=(const FixtureCluster&) = delete;

  void stop();

  const std::vector<FixtureSite>& sites() const { return sites_; }
  std::vector<std::string> site_list() const;
  std::uint16_t http_port() const { return http_port_; }
  std::uint16_t https_port() const { return https_port_; }
  // Test CA that signed the HTTPS server certificate.
  const tls::CaFiles& ca() const { return ca_; }
  // "host:80"/"host:443" to the loopback servers, for ProxyConfig::resolve.
  std::map<std::string, std::string> resolve_map() const;

  std::vector<ReceivedRequest> received() const;
  void clear_received();
  // Received requests as JSON lines, without timestamps.
  std::string receiver_log() const;

 private:
  struct Servers;

  std::vector<FixtureSite> sites_;
  std::set<std::string> hosts_;
  tls::CaFiles ca_;
  std::unique_ptr<Servers> servers_;
  std::uint16_t http_port_ = 0;
  std::uint16_t https_port_ = 0;
  std::uint16_t dead_port_ = 0;

  mutable std::mutex mutex_;
  std::condition_variable stopping_cv_;
  bool stopping_ = false;
  std::vector<ReceivedRequest> received_;
};

}  // namespace fpwatch::test
