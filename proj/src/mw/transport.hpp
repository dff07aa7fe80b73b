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

// Framed point-to-point transport between the members of one world.
//
// Frame layout (little-endian):
//   u32 magic | u8 version | u8 msg_type | u16 world_name_len | world_name |
//   u64 op_seq | u8 dtype | u64 elem_count | payload
//
// HELLO carries the sender's rank in op_seq. DATA frames are numbered from 0
// per connection direction; any gap poisons the connection.

#ifndef MW_TRANSPORT_HPP_
#define MW_TRANSPORT_HPP_

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "mw/core.hpp"
#include "mw/net.hpp"

namespace mw {

enum class MsgType : std::uint8_t { kData = 1, kHello = 2, kBye = 3 };

inline constexpr std::uint32_t kFrameMagic = 0x4D574C44;
inline constexpr std::uint8_t kFrameVersion = 1;
inline constexpr std::size_t kFrameFixedBytes = 8;   // magic..world_name_len
inline constexpr std::size_t kFrameTailBytes = 17;   // op_seq, dtype, elem_count
inline constexpr std::uint64_t kMaxFrameElements = std::uint64_t{1} << 36;
inline constexpr Millis kHandshakeTimeout{5000};

struct FrameHeader {
  MsgType type = MsgType::kData;
  std::string world;
  std::uint64_t op_seq = 0;
  std::uint8_t dtype = 0;
  std::uint64_t elem_count = 0;
};

struct Frame {
  FrameHeader header;
  Buffer payload;  // DATA only
};

std::vector<std::uint8_t> encode_frame_header(const FrameHeader& h);
// Header followed by payload. Throws Error(kProtocol) if the payload does not
// match dtype/elem_count.
std::vector<std::uint8_t> encode_frame(const Frame& f);
Frame decode_frame(std::span<const std::uint8_t> bytes);

enum class ConnState { kOpen, kPoisoned, kClosed };

struct OutgoingFrame {
  std::vector<std::byte> header;
  Buffer payload;
  std::size_t written = 0;

  std::size_t total() const { return header.size() + payload.byte_size(); }
  bool done() const { return written == total(); }
};

class Connection {
 public:
  Connection(net::Socket sock, std::string world, Rank my_rank, Rank peer_rank);
  ~Connection();
  Connection(const Connection&) = delete;
  Connection& operator=(const Connection&) = delete;

  // Dials `addr` and performs the HELLO exchange. Throws Error(kRemoteWorker)
  // when the peer is unreachable and Error(kProtocol) on a handshake mismatch.
  static std::unique_ptr<Connection> connect(const Endpoint& addr,
                                              std::string_view world, Rank my_rank,
                                              Clock::time_point deadline);

  std::uint64_t id() const { return id_; }
  ConnState state() const { return state_; }
  Rank peer_rank() const { return peer_rank_; }
  Rank my_rank() const { return my_rank_; }
  const std::string& world() const { return world_; }
  int fd() const { return sock_.fd(); }
  std::uint64_t next_send_seq() const { return next_send_seq_; }
  std::uint64_t next_recv_seq() const { return next_recv_seq_; }

  // Blocking interface. send_frame assigns op_seq to DATA frames and returns it.
  std::uint64_t send_frame(const Frame& f, net::Deadline deadline = std::nullopt);
  std::uint64_t send_data(const Buffer& payload, net::Deadline deadline = std::nullopt);
  // Error(kTimeout) past the deadline leaves the connection open.
  Frame recv_frame(std::optional<Millis> timeout = std::nullopt);
  // Receives one DATA frame directly into `dst`, which must match its shape.
  void recv_data_into(const Buffer& dst, std::optional<Millis> timeout = std::nullopt);

  // Best-effort BYE followed by close.
  void close(bool send_bye = true) noexcept;

  // Non-blocking interface used by the poller.
  OutgoingFrame prepare_data(const Buffer& payload);
  // True once the frame is fully written.
  bool write_some(OutgoingFrame& f);
  // Returns the next complete, validated header, or nullopt if more bytes are
  // needed. After a DATA header the payload must be consumed with
  // read_payload_some or discard_payload_some before the next header.
  std::optional<FrameHeader> read_header_some();
  bool read_payload_some(std::span<std::byte> dst);
  bool discard_payload_some();
  bool in_payload() const { return reading_payload_; }

 private:
  [[noreturn]] void poison(ErrorKind kind, const std::string& detail);
  void check_open() const;
  std::optional<FrameHeader> parse_header();
  void finish_payload();

  friend std::unique_ptr<Connection> accept_handshake(net::Socket, std::string_view,
                                                      Rank, int, Clock::time_point);

  static std::atomic<std::uint64_t> next_id_;

  net::Socket sock_;
  std::string world_;
  Rank my_rank_;
  Rank peer_rank_;
  std::uint64_t id_;
  ConnState state_ = ConnState::kOpen;
  std::uint64_t next_send_seq_ = 0;
  std::uint64_t next_recv_seq_ = 0;

  // Incremental read state.
  std::vector<std::uint8_t> hdr_;
  std::size_t hdr_have_ = 0;
  bool reading_payload_ = false;
  std::size_t payload_total_ = 0;
  std::size_t payload_have_ = 0;
  std::vector<std::byte> scratch_;
  std::optional<Frame> partial_;  // recv_frame state across timeouts
};

// Completes the acceptor side of the HELLO exchange on a freshly accepted
// socket. Throws Error(kProtocol) if the dialer names a different world.
std::unique_ptr<Connection> accept_handshake(net::Socket sock, std::string_view world,
                                             Rank my_rank, int world_size,
                                             Clock::time_point deadline);

// Accepts connections for one world on a background task and queues them
// once their HELLO exchange succeeds.
class Listener {
 public:
  static std::shared_ptr<Listener> open(const Endpoint& addr, std::string world,
                                        Rank my_rank, int world_size);
  ~Listener();
  Listener(const Listener&) = delete;
  Listener& operator=(const Listener&) = delete;

  const Endpoint& address() const { return address_; }
  void close();

  std::unique_ptr<Connection> try_accept();
  // Error(kTimeout) if nothing arrives in time.
  std::unique_ptr<Connection> accept(Millis timeout);
  bool has_pending() const { return pending_.load(std::memory_order_acquire) > 0; }
  void set_notify(std::function<void()> fn);
  std::size_t rejected() const { return rejected_.load(); }

 private:
  Listener(net::Socket sock, std::string world, Rank my_rank, int world_size);
  void accept_loop();

  net::Socket sock_;
  Endpoint address_;
  std::string world_;
  Rank my_rank_;
  int world_size_;
  std::atomic<bool> stopping_{false};
  std::atomic<int> pending_{0};
  std::atomic<std::size_t> rejected_{0};
  std::thread thread_;

  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<std::unique_ptr<Connection>> ready_;
  std::function<void()> notify_;
};

}  // namespace mw

#endif  // MW_TRANSPORT_HPP_
