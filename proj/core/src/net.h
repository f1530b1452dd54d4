#pragma once

// Blocking TCP plumbing shared by the proxy and the TLS layer.

#include <chrono>
#include <cstdint>
#include <memory>
#include <string>
#include <string_view>

namespace fpwatch::net {

// Owns a file descriptor.
class Fd {
 public:
  Fd() = default;
  explicit Fd(int fd) : fd_(fd) {}
  ~Fd() { reset(); }
  Fd(Fd&& o) noexcept : fd_(o.release()) {}
  Fd& operator=(Fd&& o) noexcept {
    if (this != &o) {
      reset();
      fd_ = o.release();
    }
    return *this;
  }
  Fd(const Fd&) = delete;
  Fd& operator=(const Fd&) = delete;

  int get() const { return fd_; }
  bool valid() const { return fd_ >= 0; }
  int release() {
    const int f = fd_;
    fd_ = -1;
    return f;
  }
  void reset();

 private:
  int fd_ = -1;
};

// Byte stream over a socket, plain or TLS. read() returns 0 at EOF and -1 on
// error or timeout.
class Stream {
 public:
  virtual ~Stream() = default;
  virtual long read(char* buf, std::size_t n) = 0;
  virtual bool write_all(std::string_view data) = 0;
  // Bytes already decrypted/buffered inside the stream (TLS records).
  virtual bool has_pending() const { return false; }
  virtual int fd() const = 0;
  // Half-close or close-notify; the descriptor stays open.
  virtual void shutdown_write() = 0;
};

class PlainStream : public Stream {
 public:
  explicit PlainStream(Fd fd) : fd_(std::move(fd)) {}
  long read(char* buf, std::size_t n) override;
  bool write_all(std::string_view data) override;
  int fd() const override { return fd_.get(); }
  void shutdown_write() override;

 private:
  Fd fd_;
};

// Buffered reads on top of a stream.
class Reader {
 public:
  explicit Reader(Stream& s) : stream_(s) {}

  // Reads up to and excluding "\r\n" (or "\n"). false on EOF/error or when
  // the line exceeds max_len.
  bool read_line(std::string& line, std::size_t max_len = 16 * 1024);
  // Appends one line including its terminator.
  bool read_raw_line(std::string& out, std::size_t max_len = 16 * 1024);
  bool read_exact(std::string& out, std::size_t n);
  // Appends whatever is available (buffered first). 0 at EOF, -1 on error.
  long read_some(std::string& out, std::size_t max = 64 * 1024);

  // Bytes buffered but not yet consumed.
  std::string take_buffered();
  bool has_buffered() const { return pos_ < buf_.size(); }

 private:
  bool fill();

  Stream& stream_;
  std::string buf_;
  std::size_t pos_ = 0;
};

struct Listener {
  Fd fd;
  std::uint16_t port = 0;
};

// Binds and listens; port 0 picks a free port. Throws IoError.
Listener listen_tcp(const std::string& host, std::uint16_t port, int backlog = 128);

// Resolves and connects with a timeout. Throws IoError.
Fd connect_tcp(const std::string& host, std::uint16_t port,
               std::chrono::milliseconds timeout);

void set_io_timeout(int fd, std::chrono::milliseconds timeout);

// Copies bytes in both directions until both sides reach EOF or `idle`
// passes without traffic. Returns {client->server, server->client} counts.
std::pair<std::uint64_t, std::uint64_t> relay_bidirectional(
    Stream& a, Stream& b, std::chrono::milliseconds idle, std::string a_prefix = {},
    std::string b_prefix = {});

}  // namespace fpwatch::net
