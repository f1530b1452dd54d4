#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_set>

#include "fpwatch/record.h"

namespace fpwatch {

// Public suffix rules in the publicsuffix.org list format: one rule per
// line, "//" comments, "*." wildcard and "!" exception rules. ICANN and
// private sections are both used. Rules are matched label-wise against
// lowercased ASCII hostnames; IDN rules only match hosts written in the same
// Unicode form.
class SuffixTable {
 public:
  SuffixTable() = default;

  // Throws ParseError for malformed rules, ValidationError when no rules.
  static SuffixTable parse(std::string_view text);

  // "VERSION:" comment of the list, empty when absent.
  const std::string& version() const { return version_; }
  std::size_t rule_count() const {
    return normal_.size() + wildcard_.size() + exception_.size();
  }

  // Public suffix of `host`; the implicit "*" rule applies when nothing
  // matches. Empty for an empty host.
  std::string public_suffix(std::string_view host) const;

  // Public suffix plus one label. nullopt for IP literals, bare suffixes and
  // empty hosts.
  std::optional<std::string> registrable_domain(std::string_view host) const;

 private:
  std::string version_;
  std::unordered_set<std::string> normal_;
  // "*.ck" stored as "ck".
  std::unordered_set<std::string> wildcard_;
  // "!www.ck" stored as "www.ck".
  std::unordered_set<std::string> exception_;
};

SuffixTable load_suffix_table(const std::filesystem::path& path);

// The list bundled at build time.
const SuffixTable& default_suffix_table();

// Lowercases and strips a trailing dot and any IPv6 brackets.
std::string normalize_host(std::string_view host);
bool is_ip_literal(std::string_view host);

struct PartyDecision {
  PartyClass party = PartyClass::ThirdParty;
  // Set when either host had no registrable domain and exact host equality
  // was used instead.
  bool fallback = false;
};

PartyDecision classify_party(std::string_view page_origin_host,
                             std::string_view destination_host,
                             const SuffixTable& table);

// Registrable domain, or the normalized host itself when it has none. The
// recipient identity used throughout analytics.
std::string recipient_domain(std::string_view host, const SuffixTable& table);

}  // namespace fpwatch
