#include "fpwatch/profile.h"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "fpwatch/codec.h"
#include "fpwatch/error.h"
#include "json.hpp"

namespace fpwatch {

using nlohmann::json;

namespace {

std::optional<double> parse_double(std::string_view s) {
  s = codec::trim(s);
  if (s.empty()) return std::nullopt;
  // from_chars rejects a leading '+'.
  if (s.front() == '+') s.remove_prefix(1);
  double v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v))
    return std::nullopt;
  return v;
}

std::string scalar_text(const json& v) {
  if (v.is_string()) return v.get<std::string>();
  return v.dump();
}

}  // namespace

void DeviceProfile::set(std::string id, std::vector<std::string> values) {
  absent_.erase(id);
  values_[std::move(id)] = std::move(values);
}

void DeviceProfile::mark_absent(std::string id) {
  values_.erase(id);
  absent_.insert(std::move(id));
}

const std::vector<std::string>* DeviceProfile::values(std::string_view id) const {
  const auto it = values_.find(id);
  if (it == values_.end() || it->second.empty()) return nullptr;
  return &it->second;
}

std::optional<ScreenSize> DeviceProfile::screen() const {
  const auto* v = values("Resolution");
  if (!v) return std::nullopt;
  return parse_screen_size(v->front());
}

std::optional<GeoPoint> DeviceProfile::geolocation() const {
  const auto* v = values("Geolocation");
  if (!v) return std::nullopt;
  return parse_geo_point(v->front());
}

std::optional<ScreenSize> parse_screen_size(std::string_view text) {
  text = codec::trim(text);
  const auto x = text.find('x');
  if (x == std::string_view::npos || x == 0 || x + 1 >= text.size())
    return std::nullopt;
  ScreenSize out;
  const auto w = text.substr(0, x);
  const auto h = text.substr(x + 1);
  for (const char c : w)
    if (!codec::is_digit(c)) return std::nullopt;
  for (const char c : h)
    if (!codec::is_digit(c)) return std::nullopt;
  if (std::from_chars(w.data(), w.data() + w.size(), out.width).ec != std::errc() ||
      std::from_chars(h.data(), h.data() + h.size(), out.height).ec != std::errc())
    return std::nullopt;
  return out;
}

std::optional<GeoPoint> parse_geo_point(std::string_view text) {
  text = codec::trim(text);
  if (text.size() >= 2 && text.front() == '(' && text.back() == ')') {
    text = text.substr(1, text.size() - 2);
  }
  auto sep = text.find(',');
  if (sep == std::string_view::npos) sep = text.find(' ');
  if (sep == std::string_view::npos) return std::nullopt;
  const auto lat = parse_double(text.substr(0, sep));
  const auto lon = parse_double(text.substr(sep + 1));
  if (!lat || !lon) return std::nullopt;
  return GeoPoint{*lat, *lon};
}

ProfileLoadResult parse_profile(std::string_view text, const Catalog& catalog) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("profile is not valid JSON: ") + e.what());
  }
  if (!doc.is_object()) throw ParseError("profile must be a JSON object");

  ProfileLoadResult result;
  auto& profile = result.profile;

  if (doc.contains("format") && doc["format"] != "fpwatch-profile") {
    throw ParseError("unexpected profile format tag");
  }
  if (doc.contains("version") && doc["version"] != 1) {
    throw ParseError("unsupported profile version");
  }
  if (doc.contains("captured_at") && doc["captured_at"].is_string()) {
    profile.captured_at = doc["captured_at"].get<std::string>();
  }

  const json* attrs = &doc;
  if (doc.contains("attributes")) {
    attrs = &doc["attributes"];
    if (!attrs->is_object()) throw ParseError("'attributes' must be an object");
  }

  for (const auto& [key, value] : attrs->items()) {
    if (attrs == &doc &&
        (key == "format" || key == "version" || key == "captured_at")) {
      continue;
    }
    if (value.is_null()) {
      profile.mark_absent(key);
      continue;
    }
    std::vector<std::string> values;
    if (value.is_array()) {
      for (const auto& item : value) {
        if (item.is_null()) continue;
        if (item.is_object() || item.is_array()) {
          throw ParseError("attribute '" + key + "' has a nested value");
        }
        values.push_back(scalar_text(item));
      }
    } else if (value.is_object()) {
      if (key == "Geolocation" && value.contains("lat") && value.contains("lon")) {
        values.push_back(scalar_text(value["lat"]) + "," + scalar_text(value["lon"]));
      } else {
        throw ParseError("attribute '" + key + "' has a nested value");
      }
    } else {
      values.push_back(scalar_text(value));
    }
    std::erase_if(values, [](const std::string& s) { return codec::trim(s).empty(); });
    if (values.empty()) {
      profile.mark_absent(key);
    } else {
      profile.set(key, std::move(values));
    }
  }

  if (const auto* res = profile.values("Resolution")) {
    for (const auto& v : *res) {
      if (!parse_screen_size(v)) {
        throw ValidationError("Resolution '" + v + "' is not of the form WIDTHxHEIGHT");
      }
    }
  }
  if (const auto* geo = profile.values("Geolocation")) {
    const auto point = parse_geo_point(geo->front());
    if (!point) {
      throw ValidationError("Geolocation '" + geo->front() +
                            "' is not a latitude/longitude pair");
    }
    if (point->latitude < -90 || point->latitude > 90) {
      throw ValidationError("Geolocation latitude " + std::to_string(point->latitude) +
                            " outside [-90, 90]");
    }
    if (point->longitude < -180 || point->longitude > 180) {
      throw ValidationError("Geolocation longitude " +
                            std::to_string(point->longitude) + " outside [-180, 180]");
    }
  }

  for (const auto* d : catalog.core()) {
    if (d->detector_kind == DetectorKind::LabeledKey) continue;
    if (profile.values(d->id)) continue;
    if (!profile.explicitly_absent(d->id)) profile.mark_absent(d->id);
    const bool unchecked = d->matcher == PatternMatcher::Dimensions;
    result.warnings.push_back("profile has no value for core attribute '" + d->id +
                              (unchecked ? "'; matches are not cross-checked"
                                         : "'; its detector is disabled"));
  }
  return result;
}

ProfileLoadResult load_profile(const std::filesystem::path& source,
                               const Catalog& catalog) {
  std::ifstream in(source, std::ios::binary);
  if (!in) throw IoError("cannot read profile file " + source.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_profile(buf.str(), catalog);
}

std::string serialize_profile(const DeviceProfile& profile) {
  json attrs = json::object();
  for (const auto& [id, values] : profile.entries()) {
    if (values.size() == 1) {
      attrs[id] = values.front();
    } else {
      attrs[id] = values;
    }
  }
  for (const auto& id : profile.absent()) attrs[id] = nullptr;
  json doc = {{"format", "fpwatch-profile"},
              {"version", 1},
              {"captured_at", profile.captured_at},
              {"attributes", std::move(attrs)}};
  return doc.dump(2) + "\n";
}

}  // namespace fpwatch
