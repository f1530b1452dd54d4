#include "fpwatch/detector.h"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <set>
#include <tuple>

#include "fpwatch/codec.h"

namespace fpwatch {

namespace {

// Last segment of a flattened key path with any array index removed:
// "nav.plugins[2]" -> "plugins".
std::string_view last_key_segment(std::string_view key) {
  while (!key.empty() && key.back() == ']') {
    const auto open = key.rfind('[');
    if (open == std::string_view::npos) break;
    key = key.substr(0, open);
  }
  const auto dot = key.rfind('.');
  return dot == std::string_view::npos ? key : key.substr(dot + 1);
}

bool bounded(std::string_view text, std::size_t pos, std::size_t len,
             std::string_view needle) {
  if (pos > 0 && codec::is_alnum(needle.front()) && codec::is_alnum(text[pos - 1]))
    return false;
  const std::size_t end = pos + len;
  if (end < text.size() && codec::is_alnum(needle.back()) &&
      codec::is_alnum(text[end]))
    return false;
  return true;
}

// ".jpeg", ".png", ".js": a dot followed by 1-5 alphanumerics containing a
// letter, then the end of the token.
bool file_extension_follows(std::string_view text, std::size_t end) {
  if (end >= text.size() || text[end] != '.') return false;
  std::size_t i = end + 1;
  bool letter = false;
  while (i < text.size() && codec::is_alnum(text[i])) {
    if (!codec::is_digit(text[i])) letter = true;
    ++i;
  }
  const std::size_t len = i - end - 1;
  return letter && len >= 1 && len <= 5;
}

long long round2(double v) { return std::llround(v * 100.0); }

std::optional<double> to_double(std::string_view s) {
  double v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

class LayerScanner {
 public:
  LayerScanner(const PayloadView& view, const Catalog& catalog,
               const DeviceProfile& profile, std::vector<AttributeHit>& out)
      : view_(view), catalog_(catalog), profile_(profile), out_(out) {}

  void scan(std::size_t layer_index) {
    const auto& layer = view_.layers[layer_index];
    const std::string lowered = codec::to_lower(layer.text);
    for (const auto& d : catalog_.descriptors()) {
      switch (d.detector_kind) {
        case DetectorKind::ProfileBound:
          profile_bound(d, layer, layer_index, lowered);
          break;
        case DetectorKind::Pattern:
          pattern(d, layer, layer_index);
          break;
        case DetectorKind::LabeledKey:
          break;
      }
    }
    labeled_keys(layer, layer_index);
  }

 private:
  void emit(const AttributeDescriptor& d, const PayloadLayer& layer,
            std::size_t layer_index, std::size_t offset, std::size_t len) {
    AttributeHit hit;
    hit.attribute_id = d.id;
    hit.matched_text = layer.text.substr(offset, len);
    hit.part = view_.source_part;
    hit.part_key = view_.part_key;
    hit.layer_index = layer_index;
    hit.byte_offset = offset;
    hit.kind = d.detector_kind;
    hit.core = d.core;
    out_.push_back(std::move(hit));
  }

  bool key_matches(const AttributeDescriptor& d, std::string_view key) const {
    const auto norm = codec::normalize_label(last_key_segment(key));
    for (const auto& label : d.label_tokens) {
      if (codec::normalize_label(label) == norm) return true;
    }
    return false;
  }

  void profile_bound(const AttributeDescriptor& d, const PayloadLayer& layer,
                     std::size_t layer_index, const std::string& lowered) {
    const auto* values = profile_.values(d.id);
    if (!values) return;
    for (const auto& value : *values) {
      if (value.empty()) continue;
      const std::string needle = codec::to_lower(value);
      if (needle.size() >= kMinProfileValueLength) {
        for (auto pos = lowered.find(needle); pos != std::string::npos;
             pos = lowered.find(needle, pos + 1)) {
          if (bounded(lowered, pos, needle.size(), needle)) {
            emit(d, layer, layer_index, pos, needle.size());
          }
        }
        continue;
      }
      // Short values need the attribute's own key next to them.
      for (const auto& kv : layer.pairs) {
        if (!key_matches(d, kv.key)) continue;
        if (codec::to_lower(codec::trim(kv.value)) != needle) continue;
        const auto lead = kv.value.find_first_not_of(" \t");
        emit(d, layer, layer_index, kv.value_offset + lead, needle.size());
      }
    }
  }

  void pattern(const AttributeDescriptor& d, const PayloadLayer& layer,
               std::size_t layer_index) {
    if (!d.compiled) return;
    switch (d.matcher) {
      case PatternMatcher::Dimensions:
        dimensions(d, layer, layer_index);
        break;
      case PatternMatcher::Coordinates:
        coordinates(d, layer, layer_index);
        break;
      case PatternMatcher::Regex:
      case PatternMatcher::None:
        for (auto it = std::sregex_iterator(layer.text.begin(), layer.text.end(),
                                            *d.compiled);
             it != std::sregex_iterator(); ++it) {
          if (it->length() == 0) continue;
          emit(d, layer, layer_index, static_cast<std::size_t>(it->position()),
               static_cast<std::size_t>(it->length()));
        }
        break;
    }
  }

  void dimensions(const AttributeDescriptor& d, const PayloadLayer& layer,
                  std::size_t layer_index) {
    const auto screen = profile_.screen();
    std::vector<std::pair<std::size_t, std::size_t>> spans;
    for (auto it = std::sregex_iterator(layer.text.begin(), layer.text.end(),
                                        *d.compiled);
         it != std::sregex_iterator(); ++it) {
      const auto pos = static_cast<std::size_t>(it->position());
      const auto len = static_cast<std::size_t>(it->length());
      if (len == 0) continue;
      spans.emplace_back(pos, pos + len);
      if (screen) {
        const auto size = parse_screen_size(codec::to_lower(it->str()));
        if (!size) continue;
        const bool same = (size->width == screen->width && size->height == screen->height) ||
                          (size->width == screen->height && size->height == screen->width);
        if (!same) continue;
      }
      emit(d, layer, layer_index, pos, len);
    }
    if (!screen) return;

    // Bare width or height digits. These are deliberately unbounded here;
    // filter_false_positives removes the embedded ones.
    std::set<std::string> dims;
    for (const int v : {screen->width, screen->height}) {
      auto s = std::to_string(v);
      if (s.size() >= 3) dims.insert(std::move(s));
    }
    for (const auto& dim : dims) {
      for (auto pos = layer.text.find(dim); pos != std::string::npos;
           pos = layer.text.find(dim, pos + 1)) {
        const bool inside = std::any_of(spans.begin(), spans.end(), [&](const auto& s) {
          return pos >= s.first && pos < s.second;
        });
        if (!inside) emit(d, layer, layer_index, pos, dim.size());
      }
    }
  }

  void coordinates(const AttributeDescriptor& d, const PayloadLayer& layer,
                   std::size_t layer_index) {
    const auto geo = profile_.geolocation();
    if (!geo) return;
    struct Number {
      std::size_t begin, end;
      double value;
    };
    std::vector<Number> numbers;
    for (auto it = std::sregex_iterator(layer.text.begin(), layer.text.end(),
                                        *d.compiled);
         it != std::sregex_iterator(); ++it) {
      const auto v = to_double(it->str());
      if (!v) continue;
      const auto pos = static_cast<std::size_t>(it->position());
      numbers.push_back({pos, pos + static_cast<std::size_t>(it->length()), *v});
    }
    constexpr std::size_t kMaxGap = 16;
    for (std::size_t i = 0; i + 1 < numbers.size(); ++i) {
      const auto& lat = numbers[i];
      const auto& lon = numbers[i + 1];
      if (lon.begin < lat.end || lon.begin - lat.end > kMaxGap) continue;
      const auto gap = std::string_view(layer.text).substr(lat.end, lon.begin - lat.end);
      if (std::any_of(gap.begin(), gap.end(), codec::is_digit)) continue;
      if (lat.value < -90 || lat.value > 90 || lon.value < -180 || lon.value > 180)
        continue;
      if (round2(lat.value) != round2(geo->latitude) ||
          round2(lon.value) != round2(geo->longitude))
        continue;
      emit(d, layer, layer_index, lat.begin, lon.end - lat.begin);
    }
  }

  void labeled_keys(const PayloadLayer& layer, std::size_t layer_index) {
    for (const auto& kv : layer.pairs) {
      const auto norm = codec::normalize_label(last_key_segment(kv.key));
      if (norm.empty()) continue;
      for (const auto index : catalog_.by_label(norm)) {
        const auto& d = catalog_.descriptors()[index];
        if (d.detector_kind != DetectorKind::LabeledKey) continue;
        emit(d, layer, layer_index, kv.key_offset, kv.key.size());
      }
    }
  }

  const PayloadView& view_;
  const Catalog& catalog_;
  const DeviceProfile& profile_;
  std::vector<AttributeHit>& out_;
};

}  // namespace

std::vector<AttributeHit> scan_payload(const PayloadView& view, const Catalog& catalog,
                                       const DeviceProfile& profile) {
  std::vector<AttributeHit> hits;
  LayerScanner scanner(view, catalog, profile, hits);
  for (std::size_t i = 0; i < view.layers.size(); ++i) scanner.scan(i);

  std::stable_sort(hits.begin(), hits.end(), [](const auto& a, const auto& b) {
    return std::tie(a.layer_index, a.byte_offset, a.attribute_id) <
           std::tie(b.layer_index, b.byte_offset, b.attribute_id);
  });
  hits.erase(std::unique(hits.begin(), hits.end(),
                         [](const auto& a, const auto& b) {
                           return a.layer_index == b.layer_index &&
                                  a.byte_offset == b.byte_offset &&
                                  a.attribute_id == b.attribute_id;
                         }),
             hits.end());
  return hits;
}

std::vector<AttributeHit> filter_false_positives(std::vector<AttributeHit> hits,
                                                 const PayloadView& view) {
  std::erase_if(hits, [&](const AttributeHit& hit) {
    if (hit.kind != DetectorKind::Pattern) return false;
    if (hit.layer_index >= view.layers.size()) return false;
    const std::string_view text = view.layers[hit.layer_index].text;
    const std::size_t begin = hit.byte_offset;
    const std::size_t end = begin + hit.matched_text.size();
    if (end > text.size()) return false;
    if (begin > 0 && codec::is_alnum(text[begin - 1])) return true;
    if (end < text.size() && codec::is_alnum(text[end])) return true;
    return file_extension_follows(text, end);
  });
  return hits;
}

std::vector<FingerprintIdHit> detect_fp_id(const PayloadView& view) {
  std::vector<FingerprintIdHit> out;
  std::set<std::pair<std::string, std::string>> seen;
  for (std::size_t i = 0; i < view.layers.size(); ++i) {
    for (const auto& kv : view.layers[i].pairs) {
      const auto label = codec::to_lower(last_key_segment(kv.key));
      if (label != "fp" && label != "fingerprint") continue;
      const auto value = std::string(codec::trim(kv.value));
      if (value.empty()) continue;
      const auto alnum = std::count_if(value.begin(), value.end(), codec::is_alnum);
      if (static_cast<double>(alnum) < 0.8 * static_cast<double>(value.size())) continue;
      if (!seen.emplace(label, value).second) continue;
      out.push_back({label, value, view.source_part, i});
    }
  }
  return out;
}

std::optional<FingerprintingEvent> classify_message(const CaptureRecord& record,
                                                    std::vector<AttributeHit> hits,
                                                    std::vector<FingerprintIdHit> fp_ids) {
  const bool any_core =
      std::any_of(hits.begin(), hits.end(), [](const auto& h) { return h.core; });
  if (!any_core) return std::nullopt;
  FingerprintingEvent event;
  event.record = record;
  event.hits = std::move(hits);
  event.fp_ids = std::move(fp_ids);
  return event;
}

std::vector<PayloadView> Detector::views(const CaptureRecord& record) const {
  std::vector<PayloadView> out;
  if (!record.query.empty()) {
    out.push_back(decode_layers(record.query, SourcePart::UrlQuery));
  }
  if (record.method != Method::Head && !record.body.empty()) {
    out.push_back(decode_layers(record.body, SourcePart::Body));
  }
  for (const auto& [name, value] : record.extra_headers) {
    if (!value.empty()) {
      out.push_back(decode_layers(value, SourcePart::HeaderValue, name));
    }
  }
  return out;
}

Detector::Analysis Detector::analyze(const CaptureRecord& record) const {
  Analysis result;
  for (const auto& view : views(record)) {
    auto hits = filter_false_positives(scan_payload(view, catalog_, profile_), view);
    result.hits.insert(result.hits.end(), std::make_move_iterator(hits.begin()),
                       std::make_move_iterator(hits.end()));
    auto ids = detect_fp_id(view);
    for (auto& id : ids) {
      const bool dup = std::any_of(result.fp_ids.begin(), result.fp_ids.end(),
                                   [&](const auto& o) {
                                     return o.label == id.label && o.value == id.value;
                                   });
      if (!dup) result.fp_ids.push_back(std::move(id));
    }
  }
  result.event = classify_message(record, result.hits, result.fp_ids);
  return result;
}

std::size_t FingerprintingEvent::core_hit_count() const {
  return static_cast<std::size_t>(
      std::count_if(hits.begin(), hits.end(), [](const auto& h) { return h.core; }));
}

std::vector<std::string> FingerprintingEvent::core_attributes() const {
  std::set<std::string> ids;
  for (const auto& h : hits) {
    if (h.core) ids.insert(h.attribute_id);
  }
  return {ids.begin(), ids.end()};
}

}  // namespace fpwatch
