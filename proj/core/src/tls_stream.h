#pragma once

// OpenSSL-backed streams for HTTPS inspection.

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>

#include "net.h"

typedef struct ssl_st SSL;
typedef struct ssl_ctx_st SSL_CTX;
typedef struct x509_st X509;
typedef struct evp_pkey_st EVP_PKEY;

namespace fpwatch::tls {

class TlsStream : public net::Stream {
 public:
  ~TlsStream() override;
  long read(char* buf, std::size_t n) override;
  bool write_all(std::string_view data) override;
  bool has_pending() const override;
  int fd() const override { return fd_.get(); }
  void shutdown_write() override;

  // Server side of an intercepted connection. nullptr when the handshake
  // fails; `error` then says why.
  static std::unique_ptr<TlsStream> accept(net::Fd fd, SSL_CTX* ctx, std::string& error);
  // Client side towards the real server, with SNI and hostname checks
  // unless the context is insecure.
  static std::unique_ptr<TlsStream> connect(net::Fd fd, SSL_CTX* ctx, const std::string& host,
                                            bool verify, std::string& error);

 private:
  TlsStream(net::Fd fd, SSL* ssl) : fd_(std::move(fd)), ssl_(ssl) {}
  net::Fd fd_;
  SSL* ssl_;
  bool shut_ = false;
};

// Mints and caches per-host leaf certificates signed by the local CA.
class MitmAuthority {
 public:
  MitmAuthority(const std::filesystem::path& ca_cert, const std::filesystem::path& ca_key);
  ~MitmAuthority();
  MitmAuthority(const MitmAuthority&) = delete;
  MitmAuthority& operator=(const MitmAuthority&) = delete;

  SSL_CTX* server_context(const std::string& host);
  std::size_t cached() const;

 private:
  X509* ca_cert_ = nullptr;
  EVP_PKEY* ca_key_ = nullptr;
  EVP_PKEY* leaf_key_ = nullptr;
  mutable std::mutex mutex_;
  std::map<std::string, SSL_CTX*> contexts_;
};

// Client context for upstream connections.
class UpstreamContext {
 public:
  // `ca_file` empty: system trust store. `insecure`: no verification.
  UpstreamContext(const std::optional<std::filesystem::path>& ca_file, bool insecure);
  ~UpstreamContext();
  UpstreamContext(const UpstreamContext&) = delete;
  UpstreamContext& operator=(const UpstreamContext&) = delete;

  SSL_CTX* get() const { return ctx_; }
  bool verify() const { return !insecure_; }

 private:
  SSL_CTX* ctx_ = nullptr;
  bool insecure_ = false;
};

}  // namespace fpwatch::tls
