#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "fpwatch/catalog.h"

namespace fpwatch {

struct GeoPoint {
  double latitude = 0;
  double longitude = 0;
  bool operator==(const GeoPoint&) const = default;
};

struct ScreenSize {
  int width = 0;
  int height = 0;
  bool operator==(const ScreenSize&) const = default;
};

// Ground-truth attribute values of the crawling browser. Multi-valued
// attributes (plugin list, IP addresses, language list) hold one entry per
// value; a match on any of them counts.
class DeviceProfile {
 public:
  DeviceProfile() = default;

  void set(std::string id, std::vector<std::string> values);
  void set(std::string id, std::string value) {
    set(std::move(id), std::vector<std::string>{std::move(value)});
  }
  void mark_absent(std::string id);

  // nullptr when the attribute is absent (explicitly or by omission).
  const std::vector<std::string>* values(std::string_view id) const;
  bool is_absent(std::string_view id) const { return values(id) == nullptr; }
  bool explicitly_absent(std::string_view id) const {
    return absent_.count(std::string(id)) > 0;
  }

  std::optional<ScreenSize> screen() const;
  std::optional<GeoPoint> geolocation() const;

  const std::map<std::string, std::vector<std::string>, std::less<>>& entries()
      const {
    return values_;
  }
  const std::set<std::string, std::less<>>& absent() const { return absent_; }

  std::string captured_at;

  bool operator==(const DeviceProfile&) const = default;

 private:
  std::map<std::string, std::vector<std::string>, std::less<>> values_;
  std::set<std::string, std::less<>> absent_;
};

std::optional<ScreenSize> parse_screen_size(std::string_view text);
// Accepts "lat,lon", "(lat, lon)" and "lat lon".
std::optional<GeoPoint> parse_geo_point(std::string_view text);

struct ProfileLoadResult {
  DeviceProfile profile;
  std::vector<std::string> warnings;
};

// Profile file: JSON object
//   {"format": "fpwatch-profile", "version": 1, "captured_at": "...",
//    "attributes": {"Resolution": "1920x1080", "Installed Plugins": [...],
//                   "Geolocation": "51.4167,-0.5667", "City": null, ...}}
// A top-level object without "attributes" is read as the attribute map
// itself. null marks an attribute explicitly absent. Missing core attributes
// are marked absent and reported as warnings.
//
// Throws ParseError for unparseable input and ValidationError for a
// malformed resolution or out-of-range geolocation.
ProfileLoadResult parse_profile(std::string_view json, const Catalog& catalog);
ProfileLoadResult load_profile(const std::filesystem::path& source,
                               const Catalog& catalog);

std::string serialize_profile(const DeviceProfile& profile);

}  // namespace fpwatch
