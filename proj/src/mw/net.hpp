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

#ifndef MW_NET_HPP_
#define MW_NET_HPP_

#include <chrono>
#include <cstddef>
#include <optional>
#include <span>

#include "mw/core.hpp"

namespace mw::net {

// Owning file descriptor.
class Socket {
 public:
  Socket() = default;
  explicit Socket(int fd) : fd_(fd) {}
  ~Socket() { reset(); }
  Socket(Socket&& other) noexcept : fd_(other.release()) {}
  Socket& operator=(Socket&& other) noexcept {
    if (this != &other) {
      reset();
      fd_ = other.release();
    }
    return *this;
  }
  Socket(const Socket&) = delete;
  Socket& operator=(const Socket&) = delete;

  int fd() const { return fd_; }
  bool valid() const { return fd_ >= 0; }
  int release() {
    int fd = fd_;
    fd_ = -1;
    return fd;
  }
  void reset();
  // Wakes any thread blocked on this socket without releasing the fd.
  void shutdown();

 private:
  int fd_ = -1;
};

using Deadline = std::optional<Clock::time_point>;

inline Deadline deadline_after(std::optional<Millis> timeout) {
  if (!timeout) return std::nullopt;
  return Clock::now() + *timeout;
}

// Bound, listening, non-blocking socket. Throws std::system_error on failure.
Socket listen_tcp(const Endpoint& addr, int backlog = 64);
Endpoint local_endpoint(const Socket& s);

// Connects with retry on ECONNREFUSED until the deadline. Returns an invalid
// socket on failure and fills `err` with a description.
Socket connect_tcp(const Endpoint& addr, Clock::time_point deadline,
                   std::string* err, bool retry = true);

void set_nonblocking(int fd);
void set_nodelay(int fd);

enum class IoStatus { kOk, kWouldBlock, kTimeout, kClosed, kError };

// Non-blocking single attempts. `done` receives the number of bytes moved.
IoStatus send_some(int fd, std::span<const std::byte> a,
                   std::span<const std::byte> b, std::size_t* done);
IoStatus recv_some(int fd, std::span<std::byte> dst, std::size_t* done);

// Waits for readiness; kTimeout past the deadline.
IoStatus wait_readable(int fd, Deadline deadline);
IoStatus wait_writable(int fd, Deadline deadline);

// Blocking helpers on top of the non-blocking primitives.
IoStatus send_all(int fd, std::span<const std::byte> data, Deadline deadline);
IoStatus recv_all(int fd, std::span<std::byte> data, Deadline deadline);

}  // namespace mw::net

#endif  // MW_NET_HPP_
