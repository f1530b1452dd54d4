#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <regex>
#include <string>
#include <string_view>
#include <vector>

namespace fpwatch {

enum class Category {
  WebGL,
  Features,
  Media,
  InputOutput,
  Network,
  Miscellaneous,
};

inline constexpr std::array<Category, 6> kAllCategories = {
    Category::WebGL,   Category::Features, Category::Media,
    Category::InputOutput, Category::Network, Category::Miscellaneous};

std::string_view to_string(Category c);
std::optional<Category> parse_category(std::string_view name);

enum class DetectorKind {
  // Fires when the device profile's value for the attribute occurs in the
  // payload between non-alphanumeric boundaries.
  ProfileBound,
  // Fires on a syntactic pattern; see PatternMatcher.
  Pattern,
  // Fires when a key/value key equals one of the label tokens.
  LabeledKey,
};

std::string_view to_string(DetectorKind k);
std::optional<DetectorKind> parse_detector_kind(std::string_view s);

enum class PatternMatcher {
  None,
  // WxH screen dimensions, cross-checked against the profile.
  Dimensions,
  // A latitude/longitude decimal pair equal to the profile to 2 places.
  Coordinates,
  // Plain regular expression, no profile involvement.
  Regex,
};

struct AttributeDescriptor {
  std::string id;
  std::string display_name;
  Category category = Category::Miscellaneous;
  bool core = false;
  DetectorKind detector_kind = DetectorKind::LabeledKey;
  PatternMatcher matcher = PatternMatcher::None;
  std::optional<std::string> pattern;
  std::vector<std::string> label_tokens;

  // Compiled form of `pattern`; not part of the descriptor's identity.
  std::shared_ptr<const std::regex> compiled;

  bool operator==(const AttributeDescriptor& o) const {
    return id == o.id && display_name == o.display_name &&
           category == o.category && core == o.core &&
           detector_kind == o.detector_kind && matcher == o.matcher &&
           pattern == o.pattern && label_tokens == o.label_tokens;
  }
};

// The attributes whose presence in a transmission marks it as
// fingerprinting.
inline constexpr std::array<std::string_view, 17> kCoreAttributeIds = {
    "Resolution",     "OS",          "OS Version",      "User-Agent",
    "Browser Name",   "Browser Version", "WebGL Renderer", "WebGL Vendor",
    "WebGL Version",  "GPU",         "GPU Vendor",      "Installed Plugins",
    "Language",       "Geolocation", "City",            "IP Addresses",
    "Charset"};

inline constexpr std::size_t kCoreAttributeCount = kCoreAttributeIds.size();

// Immutable attribute taxonomy. Safe to share between threads once built.
class Catalog {
 public:
  Catalog(std::string version, std::vector<AttributeDescriptor> descriptors);

  const std::string& version() const { return version_; }
  const std::vector<AttributeDescriptor>& descriptors() const {
    return descriptors_;
  }
  std::size_t size() const { return descriptors_.size(); }

  const AttributeDescriptor* find(std::string_view id) const;
  std::vector<const AttributeDescriptor*> core() const;

  std::size_t category_count(Category c) const;
  std::map<Category, std::size_t> category_counts() const;

  // Descriptor indices whose label tokens normalize to `normalized_key`.
  const std::vector<std::size_t>& by_label(std::string_view normalized_key) const;

  // Canonical text form; parse_catalog(serialize()) == *this.
  std::string serialize() const;

  bool operator==(const Catalog& o) const {
    return version_ == o.version_ && descriptors_ == o.descriptors_;
  }

 private:
  std::string version_;
  std::vector<AttributeDescriptor> descriptors_;
  std::map<std::string, std::size_t, std::less<>> by_id_;
  std::map<std::string, std::vector<std::size_t>, std::less<>> by_label_;
};

// Parses the line-oriented catalog format. Throws ParseError (with line
// number) on malformed records and ValidationError on duplicate ids, an empty
// catalog, or a core set that is not exactly the 17 core attributes.
Catalog parse_catalog(std::string_view text);
Catalog load_catalog(const std::filesystem::path& source);

// The bundled catalog built into the library.
const Catalog& default_catalog();

}  // namespace fpwatch
