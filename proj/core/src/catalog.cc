#include "fpwatch/catalog.h"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "fpwatch/codec.h"
#include "fpwatch/error.h"

namespace fpwatch {

namespace embedded {
std::string_view default_catalog_text();
}

namespace {

constexpr std::string_view kHeaderTag = "fpwatch-catalog";
constexpr int kFormatVersion = 1;

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    if (pos == std::string_view::npos) {
      out.push_back(s.substr(start));
      return out;
    }
    out.push_back(s.substr(start, pos - start));
    start = pos + 1;
  }
}

struct KindSpec {
  DetectorKind kind;
  PatternMatcher matcher;
};

std::optional<KindSpec> parse_kind(std::string_view s) {
  if (s == "profile") return KindSpec{DetectorKind::ProfileBound, PatternMatcher::None};
  if (s == "label") return KindSpec{DetectorKind::LabeledKey, PatternMatcher::None};
  if (s == "pattern:dimensions")
    return KindSpec{DetectorKind::Pattern, PatternMatcher::Dimensions};
  if (s == "pattern:coordinates")
    return KindSpec{DetectorKind::Pattern, PatternMatcher::Coordinates};
  if (s == "pattern:regex") return KindSpec{DetectorKind::Pattern, PatternMatcher::Regex};
  return std::nullopt;
}

std::string kind_column(const AttributeDescriptor& d) {
  switch (d.detector_kind) {
    case DetectorKind::ProfileBound:
      return "profile";
    case DetectorKind::LabeledKey:
      return "label";
    case DetectorKind::Pattern:
      switch (d.matcher) {
        case PatternMatcher::Dimensions:
          return "pattern:dimensions";
        case PatternMatcher::Coordinates:
          return "pattern:coordinates";
        default:
          return "pattern:regex";
      }
  }
  return "label";
}

std::shared_ptr<const std::regex> compile(const std::string& pattern,
                                          std::size_t line) {
  try {
    return std::make_shared<const std::regex>(pattern, std::regex::ECMAScript |
                                                           std::regex::optimize);
  } catch (const std::regex_error& e) {
    throw ParseError("invalid pattern '" + pattern + "': " + e.what(), line);
  }
}

void validate(const std::vector<AttributeDescriptor>& descriptors) {
  if (descriptors.empty()) throw ValidationError("no attributes");

  std::set<std::string_view> core_ids;
  for (const auto& d : descriptors) {
    if (!d.core) continue;
    core_ids.insert(d.id);
    const bool has_rule =
        d.detector_kind == DetectorKind::ProfileBound ||
        (d.detector_kind == DetectorKind::Pattern && d.pattern) ||
        (d.detector_kind == DetectorKind::LabeledKey && !d.label_tokens.empty());
    if (!has_rule) {
      throw ValidationError("core attribute '" + d.id +
                            "' has no matching rule");
    }
  }
  if (core_ids.size() != kCoreAttributeCount) {
    throw ValidationError("expected " + std::to_string(kCoreAttributeCount) +
                          " core attributes, found " +
                          std::to_string(core_ids.size()));
  }
  for (const auto id : kCoreAttributeIds) {
    if (!core_ids.count(id)) {
      throw ValidationError("core attribute '" + std::string(id) +
                            "' is missing from the core set");
    }
  }
}

}  // namespace

std::string_view to_string(Category c) {
  switch (c) {
    case Category::WebGL:
      return "WebGL";
    case Category::Features:
      return "Features";
    case Category::Media:
      return "Media";
    case Category::InputOutput:
      return "InputOutput";
    case Category::Network:
      return "Network";
    case Category::Miscellaneous:
      return "Miscellaneous";
  }
  return "Miscellaneous";
}

std::optional<Category> parse_category(std::string_view name) {
  for (const auto c : kAllCategories) {
    if (to_string(c) == name) return c;
  }
  if (name == "IO" || name == "Input/Output") return Category::InputOutput;
  if (name == "Misc" || name == "Misc.") return Category::Miscellaneous;
  return std::nullopt;
}

std::string_view to_string(DetectorKind k) {
  switch (k) {
    case DetectorKind::ProfileBound:
      return "profile";
    case DetectorKind::Pattern:
      return "pattern";
    case DetectorKind::LabeledKey:
      return "label";
  }
  return "label";
}

std::optional<DetectorKind> parse_detector_kind(std::string_view s) {
  if (s == "profile") return DetectorKind::ProfileBound;
  if (s == "pattern") return DetectorKind::Pattern;
  if (s == "label") return DetectorKind::LabeledKey;
  return std::nullopt;
}

Catalog::Catalog(std::string version, std::vector<AttributeDescriptor> descriptors)
    : version_(std::move(version)), descriptors_(std::move(descriptors)) {
  for (std::size_t i = 0; i < descriptors_.size(); ++i) {
    auto& d = descriptors_[i];
    if (!by_id_.emplace(d.id, i).second) {
      throw ValidationError("duplicate attribute id '" + d.id + "'");
    }
    if (d.pattern && !d.compiled) d.compiled = compile(*d.pattern, 0);
    for (const auto& label : d.label_tokens) {
      auto key = codec::normalize_label(label);
      if (key.empty()) continue;
      auto& slot = by_label_[key];
      if (std::find(slot.begin(), slot.end(), i) == slot.end()) slot.push_back(i);
    }
  }
}

const AttributeDescriptor* Catalog::find(std::string_view id) const {
  const auto it = by_id_.find(id);
  return it == by_id_.end() ? nullptr : &descriptors_[it->second];
}

std::vector<const AttributeDescriptor*> Catalog::core() const {
  std::vector<const AttributeDescriptor*> out;
  for (const auto& d : descriptors_) {
    if (d.core) out.push_back(&d);
  }
  return out;
}

std::size_t Catalog::category_count(Category c) const {
  return static_cast<std::size_t>(
      std::count_if(descriptors_.begin(), descriptors_.end(),
                    [c](const auto& d) { return d.category == c; }));
}

std::map<Category, std::size_t> Catalog::category_counts() const {
  std::map<Category, std::size_t> out;
  for (const auto c : kAllCategories) out[c] = 0;
  for (const auto& d : descriptors_) ++out[d.category];
  return out;
}

const std::vector<std::size_t>& Catalog::by_label(
    std::string_view normalized_key) const {
  static const std::vector<std::size_t> kNone;
  const auto it = by_label_.find(normalized_key);
  return it == by_label_.end() ? kNone : it->second;
}

std::string Catalog::serialize() const {
  std::ostringstream out;
  out << kHeaderTag << '\t' << kFormatVersion << '\t' << version_ << '\n';
  for (const auto& d : descriptors_) {
    out << d.id << '\t' << to_string(d.category) << '\t'
        << (d.core ? "core" : "aux") << '\t' << kind_column(d) << '\t';
    if (d.detector_kind == DetectorKind::Pattern) {
      out << d.pattern.value_or("");
    } else if (d.label_tokens.empty()) {
      out << '-';
    } else {
      for (std::size_t i = 0; i < d.label_tokens.size(); ++i) {
        if (i) out << ',';
        out << d.label_tokens[i];
      }
    }
    if (d.display_name != d.id) out << '\t' << d.display_name;
    out << '\n';
  }
  return out.str();
}

Catalog parse_catalog(std::string_view text) {
  std::optional<std::string> version;
  std::vector<AttributeDescriptor> descriptors;
  std::set<std::string, std::less<>> seen;

  std::size_t line_no = 0;
  for (auto raw : split(text, '\n')) {
    ++line_no;
    if (!raw.empty() && raw.back() == '\r') raw.remove_suffix(1);
    if (codec::trim(raw).empty() || raw.front() == '#') continue;

    const auto fields = split(raw, '\t');
    if (!version) {
      if (fields.size() != 3 || fields[0] != kHeaderTag) {
        throw ParseError("expected version header 'fpwatch-catalog<TAB>1<TAB>label'",
                         line_no);
      }
      if (fields[1] != std::to_string(kFormatVersion)) {
        throw ParseError("unsupported catalog format version '" +
                             std::string(fields[1]) + "'",
                         line_no);
      }
      version = std::string(fields[2]);
      continue;
    }

    if (fields.size() < 5 || fields.size() > 6) {
      throw ParseError("expected 5 or 6 tab-separated fields, found " +
                           std::to_string(fields.size()),
                       line_no);
    }
    AttributeDescriptor d;
    d.id = std::string(codec::trim(fields[0]));
    if (d.id.empty()) throw ParseError("empty attribute id", line_no);

    const auto category = parse_category(fields[1]);
    if (!category) {
      throw ParseError("unknown category '" + std::string(fields[1]) + "'", line_no);
    }
    d.category = *category;

    if (fields[2] == "core") {
      d.core = true;
    } else if (fields[2] != "aux") {
      throw ParseError("third field must be 'core' or 'aux'", line_no);
    }

    const auto kind = parse_kind(fields[3]);
    if (!kind) {
      throw ParseError("unknown detector kind '" + std::string(fields[3]) + "'",
                       line_no);
    }
    d.detector_kind = kind->kind;
    d.matcher = kind->matcher;

    const std::string_view rule = fields[4];
    if (d.detector_kind == DetectorKind::Pattern) {
      if (rule.empty()) throw ParseError("pattern attribute without pattern", line_no);
      d.pattern = std::string(rule);
      d.compiled = compile(*d.pattern, line_no);
    } else if (rule != "-") {
      for (const auto label : split(rule, ',')) {
        const auto t = codec::trim(label);
        if (!t.empty()) d.label_tokens.emplace_back(t);
      }
    }
    if (d.detector_kind == DetectorKind::LabeledKey && d.label_tokens.empty()) {
      throw ParseError("label attribute without labels", line_no);
    }
    d.display_name = fields.size() == 6 && !codec::trim(fields[5]).empty()
                         ? std::string(codec::trim(fields[5]))
                         : d.id;

    if (!seen.insert(d.id).second) {
      throw ValidationError("line " + std::to_string(line_no) +
                            ": duplicate attribute id '" + d.id + "'");
    }
    descriptors.push_back(std::move(d));
  }

  validate(descriptors);
  return Catalog(*version, std::move(descriptors));
}

Catalog load_catalog(const std::filesystem::path& source) {
  std::ifstream in(source, std::ios::binary);
  if (!in) throw IoError("cannot read catalog file " + source.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_catalog(buf.str());
}

const Catalog& default_catalog() {
  static const Catalog catalog = parse_catalog(embedded::default_catalog_text());
  return catalog;
}

}  // namespace fpwatch
