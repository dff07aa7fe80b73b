/* Copyright 2026 The mw Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#include "mw/net.hpp"

#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <sys/uio.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <system_error>
#include <thread>

namespace mw::net {

void Socket::reset() {
  if (fd_ >= 0) {
    ::close(fd_);
    fd_ = -1;
  }
}

void Socket::shutdown() {
  if (fd_ >= 0) ::shutdown(fd_, SHUT_RDWR);
}

namespace {

sockaddr_in resolve(const Endpoint& addr) {
  sockaddr_in sa{};
  sa.sin_family = AF_INET;
  sa.sin_port = htons(addr.port);
  std::string host = addr.host.empty() ? "0.0.0.0" : addr.host;
  if (inet_pton(AF_INET, host.c_str(), &sa.sin_addr) == 1) return sa;

  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  int rc = getaddrinfo(host.c_str(), nullptr, &hints, &res);
  if (rc != 0 || res == nullptr) {
    throw std::system_error(std::make_error_code(std::errc::host_unreachable),
                            "cannot resolve host '" + host + "': " + gai_strerror(rc));
  }
  sa.sin_addr = reinterpret_cast<sockaddr_in*>(res->ai_addr)->sin_addr;
  freeaddrinfo(res);
  return sa;
}

int remaining_ms(Deadline deadline) {
  if (!deadline) return -1;
  auto left = std::chrono::duration_cast<Millis>(*deadline - Clock::now()).count();
  if (left <= 0) return 0;
  return static_cast<int>(std::min<long long>(left, 1 << 30));
}

IoStatus wait_for(int fd, short events, Deadline deadline) {
  for (;;) {
    int ms = remaining_ms(deadline);
    if (deadline && ms == 0 && Clock::now() >= *deadline) return IoStatus::kTimeout;
    pollfd p{fd, events, 0};
    int rc = ::poll(&p, 1, ms == 0 ? 1 : ms);
    if (rc < 0) {
      if (errno == EINTR) continue;
      return IoStatus::kError;
    }
    if (rc == 0) {
      if (deadline && Clock::now() >= *deadline) return IoStatus::kTimeout;
      continue;
    }
    return IoStatus::kOk;
  }
}

}  // namespace

void set_nonblocking(int fd) {
  int flags = ::fcntl(fd, F_GETFL, 0);
  ::fcntl(fd, F_SETFL, flags | O_NONBLOCK);
}

void set_nodelay(int fd) {
  int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
}

Socket listen_tcp(const Endpoint& addr, int backlog) {
  sockaddr_in sa = resolve(addr);
  Socket s(::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0));
  if (!s.valid()) throw std::system_error(errno, std::generic_category(), "socket");
  int one = 1;
  ::setsockopt(s.fd(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
  if (::bind(s.fd(), reinterpret_cast<sockaddr*>(&sa), sizeof(sa)) != 0) {
    throw std::system_error(errno, std::generic_category(),
                            "bind " + addr.to_string());
  }
  if (::listen(s.fd(), backlog) != 0) {
    throw std::system_error(errno, std::generic_category(),
                            "listen " + addr.to_string());
  }
  set_nonblocking(s.fd());
  return s;
}

Endpoint local_endpoint(const Socket& s) {
  sockaddr_in sa{};
  socklen_t len = sizeof(sa);
  if (::getsockname(s.fd(), reinterpret_cast<sockaddr*>(&sa), &len) != 0) {
    throw std::system_error(errno, std::generic_category(), "getsockname");
  }
  char buf[INET_ADDRSTRLEN] = {};
  ::inet_ntop(AF_INET, &sa.sin_addr, buf, sizeof(buf));
  return Endpoint{buf, ntohs(sa.sin_port)};
}

Socket connect_tcp(const Endpoint& addr, Clock::time_point deadline,
                   std::string* err, bool retry) {
  sockaddr_in sa{};
  try {
    sa = resolve(addr);
  } catch (const std::exception& e) {
    if (err) *err = e.what();
    return Socket();
  }
  auto backoff = Millis(5);
  for (;;) {
    Socket s(::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0));
    if (!s.valid()) {
      if (err) *err = std::strerror(errno);
      return Socket();
    }
    set_nonblocking(s.fd());
    int rc = ::connect(s.fd(), reinterpret_cast<sockaddr*>(&sa), sizeof(sa));
    int code = rc == 0 ? 0 : errno;
    if (code == EINPROGRESS) {
      IoStatus st = wait_for(s.fd(), POLLOUT, deadline);
      if (st == IoStatus::kTimeout) {
        if (err) *err = "connect to " + addr.to_string() + " timed out";
        return Socket();
      }
      socklen_t len = sizeof(code);
      ::getsockopt(s.fd(), SOL_SOCKET, SO_ERROR, &code, &len);
    }
    if (code == 0) {
      set_nodelay(s.fd());
      return s;
    }
    bool transient = code == ECONNREFUSED || code == ECONNRESET ||
                     code == ETIMEDOUT || code == EAGAIN;
    if (!retry || !transient || Clock::now() + backoff >= deadline) {
      if (err) {
        *err = "connect to " + addr.to_string() + ": " + std::strerror(code);
      }
      return Socket();
    }
    std::this_thread::sleep_for(backoff);
    backoff = std::min(backoff * 2, Millis(100));
  }
}

IoStatus send_some(int fd, std::span<const std::byte> a,
                   std::span<const std::byte> b, std::size_t* done) {
  *done = 0;
  iovec iov[2];
  int n = 0;
  if (!a.empty()) iov[n++] = {const_cast<std::byte*>(a.data()), a.size()};
  if (!b.empty()) iov[n++] = {const_cast<std::byte*>(b.data()), b.size()};
  if (n == 0) return IoStatus::kOk;
  msghdr msg{};
  msg.msg_iov = iov;
  msg.msg_iovlen = static_cast<std::size_t>(n);
  for (;;) {
    ssize_t rc = ::sendmsg(fd, &msg, MSG_NOSIGNAL | MSG_DONTWAIT);
    if (rc >= 0) {
      *done = static_cast<std::size_t>(rc);
      return IoStatus::kOk;
    }
    if (errno == EINTR) continue;
    if (errno == EAGAIN || errno == EWOULDBLOCK) return IoStatus::kWouldBlock;
    if (errno == EPIPE || errno == ECONNRESET) return IoStatus::kClosed;
    return IoStatus::kError;
  }
}

IoStatus recv_some(int fd, std::span<std::byte> dst, std::size_t* done) {
  *done = 0;
  if (dst.empty()) return IoStatus::kOk;
  for (;;) {
    ssize_t rc = ::recv(fd, dst.data(), dst.size(), MSG_DONTWAIT);
    if (rc > 0) {
      *done = static_cast<std::size_t>(rc);
      return IoStatus::kOk;
    }
    if (rc == 0) return IoStatus::kClosed;
    if (errno == EINTR) continue;
    if (errno == EAGAIN || errno == EWOULDBLOCK) return IoStatus::kWouldBlock;
    if (errno == ECONNRESET || errno == EPIPE) return IoStatus::kClosed;
    return IoStatus::kError;
  }
}

IoStatus wait_readable(int fd, Deadline deadline) { return wait_for(fd, POLLIN, deadline); }

IoStatus wait_writable(int fd, Deadline deadline) { return wait_for(fd, POLLOUT, deadline); }

IoStatus send_all(int fd, std::span<const std::byte> data, Deadline deadline) {
  while (!data.empty()) {
    std::size_t n = 0;
    IoStatus st = send_some(fd, data, {}, &n);
    if (st == IoStatus::kWouldBlock) {
      st = wait_writable(fd, deadline);
      if (st != IoStatus::kOk) return st;
      continue;
    }
    if (st != IoStatus::kOk) return st;
    data = data.subspan(n);
  }
  return IoStatus::kOk;
}

IoStatus recv_all(int fd, std::span<std::byte> data, Deadline deadline) {
  while (!data.empty()) {
    std::size_t n = 0;
    IoStatus st = recv_some(fd, data, &n);
    if (st == IoStatus::kWouldBlock) {
      st = wait_readable(fd, deadline);
      if (st != IoStatus::kOk) return st;
      continue;
    }
    if (st != IoStatus::kOk) return st;
    data = data.subspan(n);
  }
  return IoStatus::kOk;
}

}  // namespace mw::net
