#include "fpwatch/record.h"

#include <array>

namespace fpwatch {

namespace {

template <typename E, std::size_t N>
std::optional<E> lookup(const std::array<std::pair<E, std::string_view>, N>& table,
                        std::string_view s) {
  for (const auto& [e, name] : table) {
    if (name == s) return e;
  }
  return std::nullopt;
}

template <typename E, std::size_t N>
std::string_view name_of(const std::array<std::pair<E, std::string_view>, N>& table,
                         E e) {
  for (const auto& [v, name] : table) {
    if (v == e) return name;
  }
  return table.front().second;
}

constexpr std::array<std::pair<Method, std::string_view>, 3> kMethods{{
    {Method::Get, "GET"},
    {Method::Post, "POST"},
    {Method::Head, "HEAD"},
}};
constexpr std::array<std::pair<Scheme, std::string_view>, 2> kSchemes{{
    {Scheme::Http, "http"},
    {Scheme::Https, "https"},
}};
constexpr std::array<std::pair<SourcePart, std::string_view>, 3> kParts{{
    {SourcePart::UrlQuery, "query"},
    {SourcePart::Body, "body"},
    {SourcePart::HeaderValue, "header"},
}};
constexpr std::array<std::pair<PartyClass, std::string_view>, 2> kParties{{
    {PartyClass::FirstParty, "first"},
    {PartyClass::ThirdParty, "third"},
}};
constexpr std::array<std::pair<Decision, std::string_view>, 2> kDecisions{{
    {Decision::Forwarded, "forwarded"},
    {Decision::Blocked, "blocked"},
}};
constexpr std::array<std::pair<Delivery, std::string_view>, 3> kDeliveries{{
    {Delivery::Delivered, "delivered"},
    {Delivery::Failed, "failed"},
    {Delivery::NotAttempted, "not_attempted"},
}};
constexpr std::array<std::pair<VisitStatus, std::string_view>, 4> kStatuses{{
    {VisitStatus::Loaded, "loaded"},
    {VisitStatus::TimedOut, "timed_out"},
    {VisitStatus::BrowserCrashed, "browser_crashed"},
    {VisitStatus::NavigationError, "navigation_error"},
}};

}  // namespace

std::string_view to_string(Method m) { return name_of(kMethods, m); }
std::string_view to_string(Scheme s) { return name_of(kSchemes, s); }
std::string_view to_string(SourcePart p) { return name_of(kParts, p); }
std::string_view to_string(PartyClass p) { return name_of(kParties, p); }
std::string_view to_string(Decision d) { return name_of(kDecisions, d); }
std::string_view to_string(Delivery d) { return name_of(kDeliveries, d); }
std::string_view to_string(VisitStatus s) { return name_of(kStatuses, s); }

std::optional<Method> parse_method(std::string_view s) { return lookup(kMethods, s); }
std::optional<Scheme> parse_scheme(std::string_view s) { return lookup(kSchemes, s); }
std::optional<SourcePart> parse_source_part(std::string_view s) {
  return lookup(kParts, s);
}
std::optional<PartyClass> parse_party(std::string_view s) {
  return lookup(kParties, s);
}
std::optional<Decision> parse_decision(std::string_view s) {
  return lookup(kDecisions, s);
}
std::optional<Delivery> parse_delivery(std::string_view s) {
  return lookup(kDeliveries, s);
}
std::optional<VisitStatus> parse_visit_status(std::string_view s) {
  return lookup(kStatuses, s);
}

}  // namespace fpwatch
