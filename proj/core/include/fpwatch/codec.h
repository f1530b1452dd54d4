#pragma once

// Small text codecs shared by the detector, the capture log and the reporter.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>

namespace fpwatch::codec {

// Decodes %XX escapes. Malformed escapes are copied through unchanged. When
// `plus_as_space` is set, '+' decodes to ' ' (application/x-www-form-urlencoded).
std::string percent_decode(std::string_view in, bool plus_as_space = false);

// Escapes every byte outside the RFC 3986 unreserved set.
std::string percent_encode(std::string_view in);

// Form encoding: like percent_encode but spaces become '+'.
std::string form_encode(std::string_view in);

bool has_percent_escape(std::string_view in);

std::string base64_encode(std::string_view in);

// Accepts the standard and URL-safe alphabets, with or without padding.
// Returns nullopt for anything that is not a well-formed base64 string.
std::optional<std::string> base64_decode(std::string_view in);

// Replaces invalid UTF-8 sequences with U+FFFD.
std::string utf8_lossy(std::string_view in);
bool is_valid_utf8(std::string_view in);

std::string to_lower(std::string_view in);

// Lowercases and keeps only ASCII letters and digits: "hardwareConcurrency",
// "hardware_concurrency" and "hardware concurrency" all normalize alike.
std::string normalize_label(std::string_view in);

inline bool is_alnum(char c) {
  return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'z') ||
         (c >= 'A' && c <= 'Z');
}

inline bool is_digit(char c) { return c >= '0' && c <= '9'; }

std::string_view trim(std::string_view in);

// Hex-encoded SHA-256.
std::string sha256_hex(std::string_view data);

}  // namespace fpwatch::codec
