#include "fpwatch/tls.h"

#include <arpa/inet.h>
#include <openssl/bn.h>
#include <openssl/err.h>
#include <openssl/evp.h>
#include <openssl/pem.h>
#include <openssl/rand.h>
#include <openssl/ssl.h>
#include <openssl/x509.h>
#include <openssl/x509v3.h>
#include <sys/stat.h>

#include <cstdio>
#include <memory>

#include "fpwatch/error.h"
#include "tls_stream.h"

namespace fpwatch::tls {

namespace {

struct Deleter {
  void operator()(X509* p) const { X509_free(p); }
  void operator()(EVP_PKEY* p) const { EVP_PKEY_free(p); }
  void operator()(BIO* p) const { BIO_free(p); }
  void operator()(std::FILE* p) const { std::fclose(p); }
};
template <typename T>
using Owned = std::unique_ptr<T, Deleter>;

std::string openssl_error() {
  std::string out;
  while (const auto e = ERR_get_error()) {
    char buf[256];
    ERR_error_string_n(e, buf, sizeof buf);
    if (!out.empty()) out += "; ";
    out += buf;
  }
  return out.empty() ? "unknown TLS error" : out;
}

Owned<EVP_PKEY> new_key() {
  Owned<EVP_PKEY> key(EVP_EC_gen("P-256"));
  if (!key) throw ConfigError("key generation failed: " + openssl_error());
  return key;
}

bool is_ip(const std::string& name) {
  unsigned char buf[16];
  return inet_pton(AF_INET, name.c_str(), buf) == 1 || inet_pton(AF_INET6, name.c_str(), buf) == 1;
}

void add_ext(X509* cert, X509* issuer, int nid, const std::string& value) {
  X509V3_CTX ctx;
  X509V3_set_ctx_nodb(&ctx);
  X509V3_set_ctx(&ctx, issuer, cert, nullptr, nullptr, 0);
  X509_EXTENSION* ext = X509V3_EXT_conf_nid(nullptr, &ctx, nid, value.c_str());
  if (!ext) throw ConfigError("bad certificate extension '" + value + "': " + openssl_error());
  X509_add_ext(cert, ext, -1);
  X509_EXTENSION_free(ext);
}

Owned<X509> new_cert(EVP_PKEY* subject_key, const std::string& cn, long days) {
  Owned<X509> cert(X509_new());
  X509_set_version(cert.get(), 2);
  unsigned char serial[16];
  RAND_bytes(serial, sizeof serial);
  serial[0] &= 0x7F;
  BIGNUM* bn = BN_bin2bn(serial, sizeof serial, nullptr);
  BN_to_ASN1_INTEGER(bn, X509_get_serialNumber(cert.get()));
  BN_free(bn);
  X509_gmtime_adj(X509_getm_notBefore(cert.get()), -24 * 3600);
  X509_gmtime_adj(X509_getm_notAfter(cert.get()), days * 24 * 3600);
  X509_set_pubkey(cert.get(), subject_key);
  X509_NAME* name = X509_get_subject_name(cert.get());
  X509_NAME_add_entry_by_txt(name, "CN", MBSTRING_UTF8,
                             reinterpret_cast<const unsigned char*>(cn.c_str()), -1, -1, 0);
  return cert;
}

Owned<X509> mint_leaf(X509* ca, EVP_PKEY* ca_key, EVP_PKEY* leaf_key,
                      const std::vector<std::string>& names) {
  auto cert = new_cert(leaf_key, names.front().substr(0, 64), 397);
  X509_set_issuer_name(cert.get(), X509_get_subject_name(ca));
  add_ext(cert.get(), ca, NID_basic_constraints, "critical,CA:FALSE");
  add_ext(cert.get(), ca, NID_key_usage, "critical,digitalSignature,keyEncipherment");
  add_ext(cert.get(), ca, NID_ext_key_usage, "serverAuth");
  add_ext(cert.get(), ca, NID_subject_key_identifier, "hash");
  add_ext(cert.get(), ca, NID_authority_key_identifier, "keyid");
  std::string san;
  for (const auto& n : names) {
    if (!san.empty()) san += ",";
    san += (is_ip(n) ? "IP:" : "DNS:") + n;
  }
  add_ext(cert.get(), ca, NID_subject_alt_name, san);
  if (!X509_sign(cert.get(), ca_key, EVP_sha256())) {
    throw ConfigError("certificate signing failed: " + openssl_error());
  }
  return cert;
}

Owned<X509> read_cert(const std::filesystem::path& p) {
  Owned<std::FILE> f(std::fopen(p.c_str(), "rb"));
  if (!f) throw ConfigError("cannot read certificate " + p.string());
  Owned<X509> cert(PEM_read_X509(f.get(), nullptr, nullptr, nullptr));
  if (!cert) throw ConfigError("invalid certificate " + p.string() + ": " + openssl_error());
  return cert;
}

Owned<EVP_PKEY> read_key(const std::filesystem::path& p) {
  Owned<std::FILE> f(std::fopen(p.c_str(), "rb"));
  if (!f) throw ConfigError("cannot read key " + p.string());
  Owned<EVP_PKEY> key(PEM_read_PrivateKey(f.get(), nullptr, nullptr, nullptr));
  if (!key) throw ConfigError("invalid key " + p.string() + ": " + openssl_error());
  return key;
}

void write_pem(const std::filesystem::path& p, X509* cert, EVP_PKEY* key, bool private_file) {
  const mode_t old = private_file ? ::umask(077) : ::umask(022);
  Owned<std::FILE> f(std::fopen(p.c_str(), "wb"));
  ::umask(old);
  if (!f) throw IoError("cannot write " + p.string());
  const bool ok = cert ? PEM_write_X509(f.get(), cert)
                       : PEM_write_PrivateKey(f.get(), key, nullptr, nullptr, 0, nullptr, nullptr);
  if (!ok) throw IoError("cannot write " + p.string() + ": " + openssl_error());
}

}  // namespace

CaFiles ca_files(const std::filesystem::path& dir) {
  return {dir / "ca.pem", dir / "ca-key.pem"};
}

CaFiles init_ca(const std::filesystem::path& dir, std::string_view common_name,
                bool overwrite) {
  const auto files = ca_files(dir);
  if (!overwrite && (std::filesystem::exists(files.cert) || std::filesystem::exists(files.key))) {
    throw ConfigError("CA already exists in " + dir.string());
  }
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());

  auto key = new_key();
  auto cert = new_cert(key.get(), std::string(common_name), 3650);
  X509_set_issuer_name(cert.get(), X509_get_subject_name(cert.get()));
  add_ext(cert.get(), cert.get(), NID_basic_constraints, "critical,CA:TRUE,pathlen:0");
  add_ext(cert.get(), cert.get(), NID_key_usage, "critical,keyCertSign,cRLSign");
  add_ext(cert.get(), cert.get(), NID_subject_key_identifier, "hash");
  if (!X509_sign(cert.get(), key.get(), EVP_sha256())) {
    throw ConfigError("CA signing failed: " + openssl_error());
  }
  write_pem(files.key, nullptr, key.get(), true);
  write_pem(files.cert, cert.get(), nullptr, false);
  return files;
}

void issue_certificate(const CaFiles& ca, const std::vector<std::string>& names,
                       const std::filesystem::path& cert_out,
                       const std::filesystem::path& key_out) {
  if (names.empty()) throw ConfigError("certificate needs at least one name");
  const auto ca_cert = read_cert(ca.cert);
  const auto ca_key = read_key(ca.key);
  auto key = new_key();
  const auto cert = mint_leaf(ca_cert.get(), ca_key.get(), key.get(), names);
  write_pem(key_out, nullptr, key.get(), true);
  write_pem(cert_out, cert.get(), nullptr, false);
}

std::string certificate_fingerprint(const std::filesystem::path& path) {
  const auto cert = read_cert(path);
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  X509_digest(cert.get(), EVP_sha256(), md, &len);
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned i = 0; i < len; ++i) {
    out.push_back(hex[md[i] >> 4]);
    out.push_back(hex[md[i] & 15]);
  }
  return out;
}

// ---- streams ----

TlsStream::~TlsStream() {
  if (ssl_) SSL_free(ssl_);
}

long TlsStream::read(char* buf, std::size_t n) {
  std::size_t got = 0;
  const int rc = SSL_read_ex(ssl_, buf, n, &got);
  if (rc == 1) return static_cast<long>(got);
  const int err = SSL_get_error(ssl_, rc);
  if (err == SSL_ERROR_ZERO_RETURN) return 0;
  // Peers that close without close_notify.
  if (err == SSL_ERROR_SYSCALL || err == SSL_ERROR_SSL) {
    ERR_clear_error();
    return errno == EAGAIN || errno == EWOULDBLOCK ? -1 : 0;
  }
  return -1;
}

bool TlsStream::write_all(std::string_view data) {
  while (!data.empty()) {
    std::size_t written = 0;
    if (SSL_write_ex(ssl_, data.data(), data.size(), &written) != 1) {
      ERR_clear_error();
      return false;
    }
    data.remove_prefix(written);
  }
  return true;
}

bool TlsStream::has_pending() const { return SSL_pending(ssl_) > 0; }

void TlsStream::shutdown_write() {
  if (shut_) return;
  shut_ = true;
  SSL_shutdown(ssl_);
  ERR_clear_error();
}

std::unique_ptr<TlsStream> TlsStream::accept(net::Fd fd, SSL_CTX* ctx, std::string& error) {
  SSL* ssl = SSL_new(ctx);
  SSL_set_fd(ssl, fd.get());
  if (SSL_accept(ssl) != 1) {
    error = "TLS handshake with client failed: " + openssl_error();
    SSL_free(ssl);
    return nullptr;
  }
  return std::unique_ptr<TlsStream>(new TlsStream(std::move(fd), ssl));
}

std::unique_ptr<TlsStream> TlsStream::connect(net::Fd fd, SSL_CTX* ctx, const std::string& host,
                                              bool verify, std::string& error) {
  SSL* ssl = SSL_new(ctx);
  SSL_set_fd(ssl, fd.get());
  if (!is_ip(host)) SSL_set_tlsext_host_name(ssl, host.c_str());
  if (verify) {
    if (is_ip(host)) {
      X509_VERIFY_PARAM_set1_ip_asc(SSL_get0_param(ssl), host.c_str());
    } else {
      SSL_set1_host(ssl, host.c_str());
    }
  }
  if (SSL_connect(ssl) != 1) {
    const long vr = SSL_get_verify_result(ssl);
    error = "TLS handshake with " + host + " failed: " +
            (vr != X509_V_OK ? std::string(X509_verify_cert_error_string(vr)) : openssl_error());
    ERR_clear_error();
    SSL_free(ssl);
    return nullptr;
  }
  return std::unique_ptr<TlsStream>(new TlsStream(std::move(fd), ssl));
}

MitmAuthority::MitmAuthority(const std::filesystem::path& ca_cert,
                             const std::filesystem::path& ca_key) {
  ca_cert_ = read_cert(ca_cert).release();
  ca_key_ = read_key(ca_key).release();
  if (X509_check_private_key(ca_cert_, ca_key_) != 1) {
    X509_free(ca_cert_);
    EVP_PKEY_free(ca_key_);
    throw ConfigError("CA key does not match CA certificate");
  }
  leaf_key_ = new_key().release();
}

MitmAuthority::~MitmAuthority() {
  for (auto& [host, ctx] : contexts_) SSL_CTX_free(ctx);
  X509_free(ca_cert_);
  EVP_PKEY_free(ca_key_);
  EVP_PKEY_free(leaf_key_);
}

SSL_CTX* MitmAuthority::server_context(const std::string& host) {
  std::lock_guard lock(mutex_);
  if (auto it = contexts_.find(host); it != contexts_.end()) return it->second;
  auto cert = mint_leaf(ca_cert_, ca_key_, leaf_key_, {host});
  SSL_CTX* ctx = SSL_CTX_new(TLS_server_method());
  SSL_CTX_set_min_proto_version(ctx, TLS1_2_VERSION);
  if (SSL_CTX_use_certificate(ctx, cert.get()) != 1 ||
      SSL_CTX_use_PrivateKey(ctx, leaf_key_) != 1 ||
      SSL_CTX_add1_chain_cert(ctx, ca_cert_) != 1) {
    SSL_CTX_free(ctx);
    throw ConfigError("cannot build TLS context for " + host + ": " + openssl_error());
  }
  contexts_.emplace(host, ctx);
  return ctx;
}

std::size_t MitmAuthority::cached() const {
  std::lock_guard lock(mutex_);
  return contexts_.size();
}

UpstreamContext::UpstreamContext(const std::optional<std::filesystem::path>& ca_file,
                                 bool insecure)
    : insecure_(insecure) {
  ctx_ = SSL_CTX_new(TLS_client_method());
  SSL_CTX_set_min_proto_version(ctx_, TLS1_2_VERSION);
  if (insecure) {
    SSL_CTX_set_verify(ctx_, SSL_VERIFY_NONE, nullptr);
    return;
  }
  SSL_CTX_set_verify(ctx_, SSL_VERIFY_PEER, nullptr);
  const bool ok = ca_file ? SSL_CTX_load_verify_locations(ctx_, ca_file->c_str(), nullptr) == 1
                          : SSL_CTX_set_default_verify_paths(ctx_) == 1;
  if (!ok) {
    const auto msg = openssl_error();
    SSL_CTX_free(ctx_);
    throw ConfigError("cannot load upstream trust anchors: " + msg);
  }
}

UpstreamContext::~UpstreamContext() { SSL_CTX_free(ctx_); }

}  // namespace fpwatch::tls
