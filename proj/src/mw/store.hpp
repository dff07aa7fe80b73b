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

// TCP key-value store used for world rendezvous and heartbeats.
//
// Request:  u8 opcode | u32 key_len | key | op-specific tail
//             SET: u32 val_len | val    ADD: i64 delta    WAIT: u64 timeout_ms
// Response: u8 status | u32 val_len | val
//
// All integers are little-endian. Keys are opaque to the server; callers
// namespace them as "world/<name>/<epoch>/...".

#ifndef MW_STORE_HPP_
#define MW_STORE_HPP_

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <list>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "mw/core.hpp"
#include "mw/net.hpp"

namespace mw {

enum class StoreOp : std::uint8_t {
  kSet = 1,
  kGet = 2,
  kAdd = 3,
  kWait = 4,
  kDelete = 5,
  kDeletePrefix = 6,
};

enum class StoreStatus : std::uint8_t {
  kOk = 0,
  kNotFound = 1,
  kTimeout = 2,
  kProtoErr = 3,
};

inline constexpr std::size_t kMaxKeyBytes = 512;
inline constexpr std::size_t kMaxValueBytes = 64 * 1024;
inline constexpr Millis kDefaultStoreTimeout{5000};

struct StoreRequest {
  StoreOp op = StoreOp::kGet;
  std::string key;
  std::string value;         // SET
  std::int64_t delta = 0;    // ADD
  std::uint64_t timeout_ms = 0;  // WAIT
};

struct StoreResponse {
  StoreStatus status = StoreStatus::kOk;
  std::string value;
};

// Throws Error(kProtocol) if the key or value violates the size limits.
std::vector<std::uint8_t> encode_request(const StoreRequest& req);
std::vector<std::uint8_t> encode_response(const StoreResponse& resp);
StoreRequest decode_request(std::span<const std::uint8_t> bytes);
StoreResponse decode_response(std::span<const std::uint8_t> bytes);

class StoreServer {
 public:
  // Binds and starts serving. Throws std::system_error if the address is
  // not bindable.
  static std::unique_ptr<StoreServer> serve(const Endpoint& listen_addr);

  ~StoreServer();
  StoreServer(const StoreServer&) = delete;
  StoreServer& operator=(const StoreServer&) = delete;

  const Endpoint& address() const { return address_; }
  void stop();

  std::size_t key_count() const;
  std::size_t open_connections() const;

 private:
  struct Conn {
    net::Socket sock;
    std::thread thread;
    std::atomic<bool> finished{false};
  };

  explicit StoreServer(net::Socket listener);
  void accept_loop();
  void serve_connection(Conn* conn);
  // Returns false when the connection must be closed.
  bool handle_one(int fd);
  StoreResponse apply(const StoreRequest& req);
  void reap_finished(bool all);

  net::Socket listener_;
  Endpoint address_;
  std::atomic<bool> stopping_{false};
  std::thread accept_thread_;

  mutable std::mutex conns_mu_;
  std::list<std::unique_ptr<Conn>> conns_;

  mutable std::mutex mu_;
  std::condition_variable changed_;
  std::map<std::string, std::string> data_;
};

// One connection to a store server. Not safe for concurrent use; open one
// client per execution context.
class StoreClient {
 public:
  explicit StoreClient(Endpoint server, Millis timeout = kDefaultStoreTimeout,
                       bool retry_connect = true);

  void set(std::string_view key, std::string_view value);
  std::optional<std::string> get(std::string_view key);
  std::int64_t add(std::string_view key, std::int64_t delta);
  // Returns the value once the key exists; Error(kTimeout) past `timeout`.
  std::string wait(std::string_view key, Millis timeout);
  void erase(std::string_view key);
  void erase_prefix(std::string_view prefix);
  // Connects now instead of on the first request.
  void ensure_connected();

  const Endpoint& server() const { return server_; }
  Millis timeout() const { return timeout_; }

 private:
  StoreResponse roundtrip(const StoreRequest& req, Millis response_timeout);

  Endpoint server_;
  Millis timeout_;
  bool retry_connect_;
  net::Socket sock_;
};

}  // namespace mw

#endif  // MW_STORE_HPP_
