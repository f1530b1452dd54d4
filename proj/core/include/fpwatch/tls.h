#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace fpwatch::tls {

struct CaFiles {
  std::filesystem::path cert;
  std::filesystem::path key;
};

// Conventional file names inside a CA directory.
CaFiles ca_files(const std::filesystem::path& dir);

// Creates a self-signed root (P-256, 10 years) in `dir` for HTTPS
// inspection. Refuses to overwrite unless `overwrite` is set. The key file
// is written with mode 0600. Throws IoError / ConfigError.
CaFiles init_ca(const std::filesystem::path& dir, std::string_view common_name,
                bool overwrite = false);

// Issues a server certificate for `names` (DNS names or IP literals)
// signed by the CA. Throws ConfigError when the CA files are unusable.
void issue_certificate(const CaFiles& ca, const std::vector<std::string>& names,
                       const std::filesystem::path& cert_out,
                       const std::filesystem::path& key_out);

// SHA-256 fingerprint of a PEM certificate, lowercase hex.
std::string certificate_fingerprint(const std::filesystem::path& cert);

}  // namespace fpwatch::tls
