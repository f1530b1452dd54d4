#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "fpwatch/catalog.h"
#include "fpwatch/profile.h"
#include "fpwatch/record.h"

namespace fpwatch {

enum class Decoding { Percent, Form, Json, Base64 };
std::string_view to_string(Decoding d);

struct KeyValue {
  std::string key;
  std::string value;
  // Offsets of key and value inside the owning layer's text.
  std::size_t key_offset = 0;
  std::size_t value_offset = 0;
};

struct PayloadLayer {
  std::string text;
  std::vector<Decoding> chain;
  // Key whose value this layer was decoded from; empty at top level.
  std::string key_path;
  // Populated for form and JSON layers. `text` then renders the pairs as
  // key=value joined with '&'.
  std::vector<KeyValue> pairs;

  bool is_key_value() const { return !pairs.empty(); }
};

// Best-effort layered decoding of one request part. Layer 0 is always the
// raw bytes rendered as lossy UTF-8.
struct PayloadView {
  std::string raw;
  SourcePart source_part = SourcePart::Body;
  std::string part_key;
  std::vector<PayloadLayer> layers;
};

inline constexpr std::size_t kMaxDecodeDepth = 4;
inline constexpr std::size_t kMaxLayers = 128;
inline constexpr std::size_t kMinBase64Length = 8;
inline constexpr double kMinBase64Printable = 0.9;
// Profile values shorter than this only match next to one of the
// attribute's key labels.
inline constexpr std::size_t kMinProfileValueLength = 4;
inline constexpr std::size_t kMinFingerprintIdLength = 8;

// Applies percent-decoding, form splitting, JSON flattening and base64
// sniffing, recursively, up to kMaxDecodeDepth chained decodings. Never
// fails: undecodable input yields only layer 0.
PayloadView decode_layers(std::string_view raw, SourcePart part,
                          std::string part_key = {});

// All attribute hits across all layers, deduplicated per
// (attribute, layer, offset) and ordered by (layer, offset, attribute).
std::vector<AttributeHit> scan_payload(const PayloadView& view,
                                       const Catalog& catalog,
                                       const DeviceProfile& profile);

// Drops Pattern hits embedded in a longer alphanumeric token or followed by
// a file extension. Output is always a subsequence of the input.
std::vector<AttributeHit> filter_false_positives(std::vector<AttributeHit> hits,
                                                 const PayloadView& view);

// Values sent under a key that is exactly "fp" or "fingerprint".
std::vector<FingerprintIdHit> detect_fp_id(const PayloadView& view);

// An event iff at least one hit is a core-attribute hit.
std::optional<FingerprintingEvent> classify_message(
    const CaptureRecord& record, std::vector<AttributeHit> hits,
    std::vector<FingerprintIdHit> fp_ids = {});

// Runs the full pipeline over every scanned part of a record. Holds
// references to immutable inputs; analyze() is safe to call concurrently.
class Detector {
 public:
  struct Analysis {
    std::vector<AttributeHit> hits;
    std::vector<FingerprintIdHit> fp_ids;
    std::optional<FingerprintingEvent> event;
  };

  Detector(const Catalog& catalog, const DeviceProfile& profile)
      : catalog_(catalog), profile_(profile) {}

  // Query string, body (not for HEAD) and custom header values.
  std::vector<PayloadView> views(const CaptureRecord& record) const;
  Analysis analyze(const CaptureRecord& record) const;

  const Catalog& catalog() const { return catalog_; }
  const DeviceProfile& profile() const { return profile_; }

 private:
  const Catalog& catalog_;
  const DeviceProfile& profile_;
};

}  // namespace fpwatch
