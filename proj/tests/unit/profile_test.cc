#include "fpwatch/profile.h"

#include <gtest/gtest.h>

#include "fpwatch/error.h"
#include "unit/test_support.h"

namespace fpwatch {
namespace {

const Catalog& cat() { return default_catalog(); }

TEST(LoadProfile, SeededFixtureHasEveryCoreValue) {
  const auto r = load_profile(test::data_dir() / "profile.json", cat());
  EXPECT_TRUE(r.warnings.empty());
  ASSERT_NE(r.profile.values("Resolution"), nullptr);
  EXPECT_EQ(r.profile.values("Resolution")->front(), "1920x1080");
  EXPECT_EQ(r.profile.screen(), (ScreenSize{1920, 1080}));
  EXPECT_EQ(r.profile.values("Installed Plugins")->size(), 3u);
  EXPECT_EQ(r.profile.captured_at, "2026-10-01T09:00:00Z");
}

TEST(ParseProfile, MissingGeolocationMarkedAbsentWithWarning) {
  const auto r = parse_profile(R"({"Resolution":"1920x1080"})", cat());
  EXPECT_TRUE(r.profile.is_absent("Geolocation"));
  EXPECT_TRUE(r.profile.explicitly_absent("Geolocation"));
  bool warned = false;
  for (const auto& w : r.warnings) warned |= w.find("Geolocation") != std::string::npos;
  EXPECT_TRUE(warned);
  EXPECT_FALSE(r.profile.geolocation());
}

TEST(ParseProfile, LatitudeOutOfRange) {
  EXPECT_THROW(parse_profile(R"j({"Geolocation":"(91.0, 0.0)"})j", cat()), ValidationError);
  EXPECT_THROW(parse_profile(R"({"Geolocation":"0.0,180.5"})", cat()), ValidationError);
}

TEST(ParseProfile, GeolocationForms) {
  for (const char* text : {R"({"Geolocation":"51.4167,-0.5667"})",
                           R"j({"Geolocation":"(51.4167, -0.5667)"})j",
                           R"({"Geolocation":"51.4167 -0.5667"})",
                           R"({"Geolocation":{"lat":51.4167,"lon":-0.5667}})"}) {
    const auto g = parse_profile(text, cat()).profile.geolocation();
    ASSERT_TRUE(g) << text;
    EXPECT_DOUBLE_EQ(g->latitude, 51.4167);
    EXPECT_DOUBLE_EQ(g->longitude, -0.5667);
  }
}

TEST(ParseProfile, BadResolutionRejected) {
  EXPECT_THROW(parse_profile(R"({"Resolution":"wide"})", cat()), ValidationError);
  EXPECT_THROW(parse_profile(R"({"Resolution":"1920*1080"})", cat()), ValidationError);
}

TEST(ParseProfile, UnparseableInput) {
  EXPECT_THROW(parse_profile("{not json", cat()), ParseError);
  EXPECT_THROW(parse_profile("[1,2]", cat()), ParseError);
  EXPECT_THROW(parse_profile(R"({"OS":{"a":1}})", cat()), ParseError);
}

TEST(ParseProfile, NullMeansAbsent) {
  const auto r = parse_profile(R"({"City":null,"OS":"Linux"})", cat());
  EXPECT_TRUE(r.profile.explicitly_absent("City"));
  EXPECT_EQ(r.profile.values("OS")->front(), "Linux");
}

TEST(SerializeProfile, RoundTrips) {
  const auto& p = test::seeded_profile();
  const auto again = parse_profile(serialize_profile(p), cat()).profile;
  EXPECT_EQ(again, p);
}

TEST(LoadProfile, MissingFileIsIoError) {
  EXPECT_THROW(load_profile("/nonexistent/profile.json", cat()), IoError);
}

}  // namespace
}  // namespace fpwatch
