#include "net.h"

#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>

#include "fpwatch/error.h"

namespace fpwatch::net {

void Fd::reset() {
  if (fd_ >= 0) ::close(fd_);
  fd_ = -1;
}

long PlainStream::read(char* buf, std::size_t n) {
  for (;;) {
    const auto r = ::recv(fd_.get(), buf, n, 0);
    if (r < 0 && errno == EINTR) continue;
    return r < 0 ? -1 : static_cast<long>(r);
  }
}

bool PlainStream::write_all(std::string_view data) {
  while (!data.empty()) {
    const auto w = ::send(fd_.get(), data.data(), data.size(), MSG_NOSIGNAL);
    if (w < 0) {
      if (errno == EINTR) continue;
      return false;
    }
    data.remove_prefix(static_cast<std::size_t>(w));
  }
  return true;
}

void PlainStream::shutdown_write() { ::shutdown(fd_.get(), SHUT_WR); }

bool Reader::fill() {
  if (pos_ > 0 && pos_ == buf_.size()) {
    buf_.clear();
    pos_ = 0;
  }
  char tmp[16 * 1024];
  const auto n = stream_.read(tmp, sizeof tmp);
  if (n <= 0) return false;
  buf_.append(tmp, static_cast<std::size_t>(n));
  return true;
}

bool Reader::read_line(std::string& line, std::size_t max_len) {
  for (;;) {
    const auto nl = buf_.find('\n', pos_);
    if (nl != std::string::npos) {
      std::size_t end = nl;
      if (end > pos_ && buf_[end - 1] == '\r') --end;
      line.assign(buf_, pos_, end - pos_);
      pos_ = nl + 1;
      return true;
    }
    if (buf_.size() - pos_ > max_len) return false;
    if (!fill()) return false;
  }
}

bool Reader::read_raw_line(std::string& out, std::size_t max_len) {
  for (;;) {
    const auto nl = buf_.find('\n', pos_);
    if (nl != std::string::npos) {
      out.append(buf_, pos_, nl + 1 - pos_);
      pos_ = nl + 1;
      return true;
    }
    if (buf_.size() - pos_ > max_len) return false;
    if (!fill()) return false;
  }
}

bool Reader::read_exact(std::string& out, std::size_t n) {
  while (buf_.size() - pos_ < n) {
    if (!fill()) return false;
  }
  out.append(buf_, pos_, n);
  pos_ += n;
  return true;
}

long Reader::read_some(std::string& out, std::size_t max) {
  if (pos_ == buf_.size() && !fill()) return 0;
  const auto n = std::min(max, buf_.size() - pos_);
  out.append(buf_, pos_, n);
  pos_ += n;
  return static_cast<long>(n);
}

std::string Reader::take_buffered() {
  std::string out = buf_.substr(pos_);
  buf_.clear();
  pos_ = 0;
  return out;
}

namespace {

std::string errno_text() { return std::strerror(errno); }

struct AddrInfo {
  addrinfo* list = nullptr;
  ~AddrInfo() {
    if (list) freeaddrinfo(list);
  }
};

AddrInfo resolve(const std::string& host, std::uint16_t port, bool passive) {
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  if (passive) hints.ai_flags = AI_PASSIVE;
  AddrInfo out;
  std::string h = host;
  if (h.size() >= 2 && h.front() == '[' && h.back() == ']') h = h.substr(1, h.size() - 2);
  const int rc = getaddrinfo(h.empty() ? nullptr : h.c_str(), std::to_string(port).c_str(),
                             &hints, &out.list);
  if (rc != 0) {
    throw IoError("cannot resolve " + host + ": " + gai_strerror(rc));
  }
  return out;
}

}  // namespace

Listener listen_tcp(const std::string& host, std::uint16_t port, int backlog) {
  const auto addrs = resolve(host, port, true);
  std::string last_error = "no addresses";
  for (auto* ai = addrs.list; ai; ai = ai->ai_next) {
    Fd fd(::socket(ai->ai_family, ai->ai_socktype | SOCK_CLOEXEC, ai->ai_protocol));
    if (!fd.valid()) {
      last_error = errno_text();
      continue;
    }
    const int one = 1;
    ::setsockopt(fd.get(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    if (::bind(fd.get(), ai->ai_addr, ai->ai_addrlen) != 0 ||
        ::listen(fd.get(), backlog) != 0) {
      last_error = errno_text();
      continue;
    }
    sockaddr_storage ss{};
    socklen_t len = sizeof ss;
    ::getsockname(fd.get(), reinterpret_cast<sockaddr*>(&ss), &len);
    Listener l;
    l.port = ntohs(ss.ss_family == AF_INET6
                       ? reinterpret_cast<sockaddr_in6*>(&ss)->sin6_port
                       : reinterpret_cast<sockaddr_in*>(&ss)->sin_port);
    l.fd = std::move(fd);
    return l;
  }
  throw IoError("cannot listen on " + host + ":" + std::to_string(port) + ": " + last_error);
}

Fd connect_tcp(const std::string& host, std::uint16_t port,
               std::chrono::milliseconds timeout) {
  const auto addrs = resolve(host, port, false);
  std::string last_error = "no addresses";
  for (auto* ai = addrs.list; ai; ai = ai->ai_next) {
    Fd fd(::socket(ai->ai_family, ai->ai_socktype | SOCK_CLOEXEC | SOCK_NONBLOCK,
                   ai->ai_protocol));
    if (!fd.valid()) {
      last_error = errno_text();
      continue;
    }
    int rc = ::connect(fd.get(), ai->ai_addr, ai->ai_addrlen);
    if (rc != 0 && errno == EINPROGRESS) {
      pollfd p{fd.get(), POLLOUT, 0};
      rc = ::poll(&p, 1, static_cast<int>(timeout.count()));
      if (rc == 0) {
        last_error = "connect timed out";
        continue;
      }
      int err = 0;
      socklen_t len = sizeof err;
      ::getsockopt(fd.get(), SOL_SOCKET, SO_ERROR, &err, &len);
      if (rc < 0 || err != 0) {
        last_error = std::strerror(err ? err : errno);
        continue;
      }
    } else if (rc != 0) {
      last_error = errno_text();
      continue;
    }
    const int flags = ::fcntl(fd.get(), F_GETFL);
    ::fcntl(fd.get(), F_SETFL, flags & ~O_NONBLOCK);
    const int one = 1;
    ::setsockopt(fd.get(), IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
    return fd;
  }
  throw IoError("cannot connect to " + host + ":" + std::to_string(port) + ": " +
                last_error);
}

void set_io_timeout(int fd, std::chrono::milliseconds timeout) {
  timeval tv{};
  tv.tv_sec = static_cast<time_t>(timeout.count() / 1000);
  tv.tv_usec = static_cast<suseconds_t>((timeout.count() % 1000) * 1000);
  ::setsockopt(fd, SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof tv);
  ::setsockopt(fd, SOL_SOCKET, SO_SNDTIMEO, &tv, sizeof tv);
}

std::pair<std::uint64_t, std::uint64_t> relay_bidirectional(
    Stream& a, Stream& b, std::chrono::milliseconds idle, std::string a_prefix,
    std::string b_prefix) {
  std::uint64_t a_to_b = 0, b_to_a = 0;
  // Bytes already read from one side before the relay started.
  if (!a_prefix.empty()) {
    if (!b.write_all(a_prefix)) return {a_to_b, b_to_a};
    a_to_b += a_prefix.size();
  }
  if (!b_prefix.empty()) {
    if (!a.write_all(b_prefix)) return {a_to_b, b_to_a};
    b_to_a += b_prefix.size();
  }
  bool a_open = true, b_open = true;
  char buf[32 * 1024];
  while (a_open || b_open) {
    // TLS may hold decrypted bytes that poll() cannot see.
    const bool a_ready = a_open && a.has_pending();
    const bool b_ready = b_open && b.has_pending();
    pollfd fds[2] = {{a.fd(), static_cast<short>(a_open ? POLLIN : 0), 0},
                     {b.fd(), static_cast<short>(b_open ? POLLIN : 0), 0}};
    int rc = 0;
    if (!a_ready && !b_ready) {
      rc = ::poll(fds, 2, static_cast<int>(idle.count()));
      if (rc < 0 && errno == EINTR) continue;
      if (rc <= 0) break;
    }
    auto pump = [&](Stream& from, Stream& to, bool& open, std::uint64_t& count) {
      const auto n = from.read(buf, sizeof buf);
      if (n <= 0) {
        open = false;
        to.shutdown_write();
        return true;
      }
      count += static_cast<std::uint64_t>(n);
      return to.write_all(std::string_view(buf, static_cast<std::size_t>(n)));
    };
    if (a_open && (a_ready || (fds[0].revents & (POLLIN | POLLHUP | POLLERR)))) {
      if (!pump(a, b, a_open, a_to_b)) break;
    }
    if (b_open && (b_ready || (fds[1].revents & (POLLIN | POLLHUP | POLLERR)))) {
      if (!pump(b, a, b_open, b_to_a)) break;
    }
  }
  return {a_to_b, b_to_a};
}

}  // namespace fpwatch::net
