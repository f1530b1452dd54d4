#include <set>
#include <tuple>

#include "fpwatch/codec.h"
#include "fpwatch/detector.h"
#include "json.hpp"

namespace fpwatch {

using nlohmann::json;

std::string_view to_string(Decoding d) {
  switch (d) {
    case Decoding::Percent:
      return "percent";
    case Decoding::Form:
      return "form";
    case Decoding::Json:
      return "json";
    case Decoding::Base64:
      return "base64";
  }
  return "percent";
}

namespace {

bool is_form_key_char(char c) {
  const auto u = static_cast<unsigned char>(c);
  if (u <= 0x20 || u == 0x7F) return false;
  return c != '"' && c != '{' && c != '}' && c != '<' && c != '>' && c != '=' &&
         c != '&';
}

// key=value pairs separated by '&', every part carrying a plausible key.
bool looks_like_form(std::string_view t) {
  t = codec::trim(t);
  if (t.empty() || t.front() == '{' || t.front() == '[') return false;
  if (t.find('=') == std::string_view::npos) return false;
  std::size_t start = 0;
  bool any = false;
  while (start <= t.size()) {
    auto end = t.find('&', start);
    if (end == std::string_view::npos) end = t.size();
    const auto part = t.substr(start, end - start);
    if (!part.empty()) {
      const auto eq = part.find('=');
      if (eq == 0 || eq > 128) return false;
      const auto key = part.substr(0, eq == std::string_view::npos ? part.size() : eq);
      for (const char c : key) {
        if (!is_form_key_char(c)) return false;
      }
      if (eq != std::string_view::npos) any = true;
      // A value holding raw control characters is not form data.
      for (const char c : part) {
        const auto u = static_cast<unsigned char>(c);
        if (u < 0x20 && c != '\t') return false;
      }
    }
    start = end + 1;
  }
  return any;
}

std::vector<std::pair<std::string, std::string>> split_form(std::string_view t) {
  t = codec::trim(t);
  std::vector<std::pair<std::string, std::string>> out;
  std::size_t start = 0;
  while (start <= t.size()) {
    auto end = t.find('&', start);
    if (end == std::string_view::npos) end = t.size();
    const auto part = t.substr(start, end - start);
    if (!part.empty()) {
      const auto eq = part.find('=');
      if (eq == std::string_view::npos) {
        out.emplace_back(codec::percent_decode(part, true), "");
      } else {
        out.emplace_back(codec::percent_decode(part.substr(0, eq), true),
                         codec::percent_decode(part.substr(eq + 1), true));
      }
    }
    start = end + 1;
  }
  return out;
}

void flatten_json(const json& node, const std::string& path,
                  std::vector<std::pair<std::string, std::string>>& out) {
  if (node.is_object()) {
    for (const auto& [k, v] : node.items()) {
      flatten_json(v, path.empty() ? k : path + "." + k, out);
    }
  } else if (node.is_array()) {
    std::size_t i = 0;
    for (const auto& v : node) {
      flatten_json(v, path + "[" + std::to_string(i++) + "]", out);
    }
  } else if (node.is_string()) {
    out.emplace_back(path, node.get<std::string>());
  } else {
    out.emplace_back(path, node.dump());
  }
}

std::optional<std::vector<std::pair<std::string, std::string>>> parse_json_pairs(
    std::string_view t) {
  t = codec::trim(t);
  if (t.size() < 2 || (t.front() != '{' && t.front() != '[')) return std::nullopt;
  const json doc = json::parse(t, nullptr, /*allow_exceptions=*/false);
  if (doc.is_discarded()) return std::nullopt;
  std::vector<std::pair<std::string, std::string>> out;
  flatten_json(doc, "", out);
  if (out.empty()) return std::nullopt;
  return out;
}

bool is_base64_char(char c) {
  return codec::is_alnum(c) || c == '+' || c == '/' || c == '-' || c == '_';
}

// Fraction of bytes that are printable ASCII, common whitespace, or part of
// a valid multi-byte UTF-8 sequence.
double printable_ratio(std::string_view s) {
  if (s.empty()) return 0;
  std::size_t good = 0;
  for (std::size_t i = 0; i < s.size();) {
    const auto c = static_cast<unsigned char>(s[i]);
    if (c < 0x80) {
      if ((c >= 0x20 && c < 0x7F) || c == '\t' || c == '\n' || c == '\r') ++good;
      ++i;
      continue;
    }
    std::size_t n = 1;
    if ((c & 0xE0) == 0xC0) n = 2;
    else if ((c & 0xF0) == 0xE0) n = 3;
    else if ((c & 0xF8) == 0xF0) n = 4;
    if (n > 1 && i + n <= s.size() &&
        codec::is_valid_utf8(s.substr(i, n))) {
      good += n;
      i += n;
    } else {
      ++i;
    }
  }
  return static_cast<double>(good) / static_cast<double>(s.size());
}

std::optional<std::string> sniff_base64(std::string_view token) {
  std::size_t body = token.size();
  while (body > 0 && token[body - 1] == '=') --body;
  if (body < kMinBase64Length) return std::nullopt;
  auto decoded = codec::base64_decode(token);
  if (!decoded || decoded->empty()) return std::nullopt;
  if (printable_ratio(*decoded) < kMinBase64Printable) return std::nullopt;
  return decoded;
}

// Maximal runs of base64 alphabet characters plus trailing padding.
std::vector<std::string_view> base64_tokens(std::string_view t) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < t.size()) {
    if (!is_base64_char(t[i])) {
      ++i;
      continue;
    }
    const std::size_t start = i;
    while (i < t.size() && is_base64_char(t[i])) ++i;
    std::size_t pad = 0;
    while (i < t.size() && t[i] == '=' && pad < 2) {
      ++i;
      ++pad;
    }
    out.push_back(t.substr(start, i - start));
  }
  return out;
}

class LayerBuilder {
 public:
  explicit LayerBuilder(PayloadView& view) : view_(view) {}

  void run() {
    for (std::size_t i = 0; i < view_.layers.size(); ++i) {
      // Copy: expanding appends to the vector.
      const PayloadLayer layer = view_.layers[i];
      if (layer.chain.size() >= kMaxDecodeDepth) continue;
      if (layer.is_key_value()) {
        for (const auto& kv : layer.pairs) {
          decode_text(kv.value, layer.chain, kv.key, /*whole_value=*/true);
        }
      } else {
        decode_text(layer.text, layer.chain, layer.key_path, /*whole_value=*/false);
      }
    }
  }

 private:
  void decode_text(std::string_view text, const std::vector<Decoding>& chain,
                   const std::string& key_path, bool whole_value) {
    if (text.empty()) return;
    if (codec::has_percent_escape(text)) {
      add_text(codec::percent_decode(text), chain, Decoding::Percent, key_path);
    }
    if (looks_like_form(text)) {
      add_pairs(split_form(text), chain, Decoding::Form, key_path, false);
    }
    if (auto pairs = parse_json_pairs(text)) {
      add_pairs(std::move(*pairs), chain, Decoding::Json, key_path, true);
    }
    if (whole_value) {
      const auto t = codec::trim(text);
      const auto tokens = base64_tokens(t);
      if (tokens.size() == 1 && tokens.front().size() == t.size()) {
        if (auto decoded = sniff_base64(t)) {
          add_text(std::move(*decoded), chain, Decoding::Base64, key_path);
        }
        return;
      }
    }
    for (const auto token : base64_tokens(text)) {
      if (auto decoded = sniff_base64(token)) {
        add_text(std::move(*decoded), chain, Decoding::Base64, key_path);
      }
    }
  }

  bool admit(const std::string& text, bool kv, const std::string& key_path) {
    if (view_.layers.size() >= kMaxLayers) return false;
    return seen_.emplace(text, kv, key_path).second;
  }

  void add_text(std::string text, const std::vector<Decoding>& chain, Decoding step,
                const std::string& key_path) {
    text = codec::utf8_lossy(text);
    if (!admit(text, false, key_path)) return;
    PayloadLayer layer;
    layer.text = std::move(text);
    layer.chain = chain;
    layer.chain.push_back(step);
    layer.key_path = key_path;
    view_.layers.push_back(std::move(layer));
  }

  void add_pairs(std::vector<std::pair<std::string, std::string>> pairs,
                 const std::vector<Decoding>& chain, Decoding step,
                 const std::string& key_path, bool prefix_keys) {
    PayloadLayer layer;
    layer.chain = chain;
    layer.chain.push_back(step);
    layer.key_path = key_path;
    for (auto& [k, v] : pairs) {
      KeyValue kv;
      kv.key = codec::utf8_lossy(prefix_keys && !key_path.empty()
                                     ? (k.empty() || k.front() == '['
                                            ? key_path + k
                                            : key_path + "." + k)
                                     : k);
      kv.value = codec::utf8_lossy(v);
      if (!layer.text.empty()) layer.text.push_back('&');
      kv.key_offset = layer.text.size();
      layer.text += kv.key;
      layer.text.push_back('=');
      kv.value_offset = layer.text.size();
      layer.text += kv.value;
      layer.pairs.push_back(std::move(kv));
    }
    if (layer.pairs.empty() || !admit(layer.text, true, key_path)) return;
    view_.layers.push_back(std::move(layer));
  }

  PayloadView& view_;
  std::set<std::tuple<std::string, bool, std::string>> seen_;
};

}  // namespace

PayloadView decode_layers(std::string_view raw, SourcePart part,
                          std::string part_key) {
  PayloadView view;
  view.raw = std::string(raw);
  view.source_part = part;
  view.part_key = std::move(part_key);

  PayloadLayer base;
  base.text = codec::utf8_lossy(raw);
  view.layers.push_back(std::move(base));

  LayerBuilder builder(view);
  builder.run();
  return view;
}

}  // namespace fpwatch
