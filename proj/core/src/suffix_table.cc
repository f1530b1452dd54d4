#include "fpwatch/suffix_table.h"

#include <arpa/inet.h>

#include <fstream>
#include <sstream>
#include <vector>

#include "fpwatch/codec.h"
#include "fpwatch/error.h"

namespace fpwatch {

namespace embedded {
std::string_view default_suffix_list_text();
}

namespace {

std::vector<std::string_view> split_labels(std::string_view host) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (start <= host.size()) {
    auto dot = host.find('.', start);
    if (dot == std::string_view::npos) dot = host.size();
    out.push_back(host.substr(start, dot - start));
    start = dot + 1;
  }
  return out;
}

// Suffix of `host` made of its last `n` labels.
std::string last_labels(const std::vector<std::string_view>& labels, std::size_t n) {
  std::string out;
  for (std::size_t i = labels.size() - n; i < labels.size(); ++i) {
    if (!out.empty()) out.push_back('.');
    out.append(labels[i]);
  }
  return out;
}

}  // namespace

std::string normalize_host(std::string_view host) {
  host = codec::trim(host);
  if (host.size() >= 2 && host.front() == '[' && host.back() == ']') {
    host = host.substr(1, host.size() - 2);
  }
  while (!host.empty() && host.back() == '.') host.remove_suffix(1);
  return codec::to_lower(host);
}

bool is_ip_literal(std::string_view host) {
  const auto h = normalize_host(host);
  in_addr v4;
  in6_addr v6;
  return inet_pton(AF_INET, h.c_str(), &v4) == 1 || inet_pton(AF_INET6, h.c_str(), &v6) == 1;
}

SuffixTable SuffixTable::parse(std::string_view text) {
  SuffixTable t;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start < text.size()) {
    auto nl = text.find('\n', start);
    if (nl == std::string_view::npos) nl = text.size();
    auto line = codec::trim(text.substr(start, nl - start));
    start = nl + 1;
    ++line_no;
    if (line.empty()) continue;
    if (line.starts_with("//")) {
      constexpr std::string_view kVersion = "// VERSION:";
      if (line.starts_with(kVersion) && t.version_.empty()) {
        t.version_ = std::string(codec::trim(line.substr(kVersion.size())));
      }
      continue;
    }
    // Only the first whitespace-delimited token is the rule.
    if (const auto ws = line.find_first_of(" \t"); ws != std::string_view::npos) {
      line = line.substr(0, ws);
    }
    const auto rule = codec::to_lower(line);
    if (rule.starts_with("!")) {
      if (rule.size() < 2 || rule.find('*') != std::string::npos) {
        throw ParseError("bad exception rule '" + rule + "'", line_no);
      }
      t.exception_.insert(rule.substr(1));
    } else if (rule.starts_with("*.")) {
      const auto parent = rule.substr(2);
      if (parent.empty() || parent.find('*') != std::string::npos) {
        throw ParseError("bad wildcard rule '" + rule + "'", line_no);
      }
      t.wildcard_.insert(parent);
    } else {
      if (rule.find('*') != std::string::npos || rule.find('!') != std::string::npos ||
          rule.starts_with(".") || rule.ends_with(".")) {
        throw ParseError("bad rule '" + rule + "'", line_no);
      }
      t.normal_.insert(rule);
    }
  }
  if (t.rule_count() == 0) throw ValidationError("public suffix list has no rules");
  return t;
}

std::string SuffixTable::public_suffix(std::string_view host) const {
  const auto h = normalize_host(host);
  if (h.empty()) return {};
  const auto labels = split_labels(h);
  const std::size_t n = labels.size();

  // An exception rule wins outright; its suffix drops the leftmost label.
  for (std::size_t k = n; k >= 1; --k) {
    if (exception_.count(last_labels(labels, k))) return last_labels(labels, k - 1);
  }
  std::size_t best = 1;
  for (std::size_t k = 1; k <= n; ++k) {
    const auto candidate = last_labels(labels, k);
    if (normal_.count(candidate)) best = std::max(best, k);
    if (k < n && wildcard_.count(candidate)) best = std::max(best, k + 1);
  }
  return last_labels(labels, best);
}

std::optional<std::string> SuffixTable::registrable_domain(std::string_view host) const {
  const auto h = normalize_host(host);
  if (h.empty() || is_ip_literal(h)) return std::nullopt;
  const auto labels = split_labels(h);
  for (const auto l : labels) {
    if (l.empty()) return std::nullopt;
  }
  const auto suffix = public_suffix(h);
  const auto suffix_labels = split_labels(suffix).size();
  if (suffix.empty() || suffix_labels >= labels.size()) return std::nullopt;
  return last_labels(labels, suffix_labels + 1);
}

SuffixTable load_suffix_table(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open public suffix list " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return SuffixTable::parse(ss.str());
}

const SuffixTable& default_suffix_table() {
  static const SuffixTable table = SuffixTable::parse(embedded::default_suffix_list_text());
  return table;
}

PartyDecision classify_party(std::string_view page_origin_host,
                             std::string_view destination_host,
                             const SuffixTable& table) {
  const auto a = table.registrable_domain(page_origin_host);
  const auto b = table.registrable_domain(destination_host);
  PartyDecision d;
  if (a && b) {
    d.party = *a == *b ? PartyClass::FirstParty : PartyClass::ThirdParty;
    return d;
  }
  d.fallback = true;
  d.party = normalize_host(page_origin_host) == normalize_host(destination_host)
                ? PartyClass::FirstParty
                : PartyClass::ThirdParty;
  return d;
}

std::string recipient_domain(std::string_view host, const SuffixTable& table) {
  if (auto r = table.registrable_domain(host)) return *r;
  return normalize_host(host);
}

}  // namespace fpwatch
