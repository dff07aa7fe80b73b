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

#include "mw/transport.hpp"

#include <sys/socket.h>

#include "mw/wire.hpp"

namespace mw {

namespace {

FrameHeader hello_header(std::string_view world, Rank rank) {
  FrameHeader h;
  h.type = MsgType::kHello;
  h.world = std::string(world);
  h.op_seq = static_cast<std::uint64_t>(rank);
  return h;
}

std::vector<std::byte> to_bytes(const std::vector<std::uint8_t>& v) {
  std::vector<std::byte> out(v.size());
  if (!v.empty()) std::memcpy(out.data(), v.data(), v.size());
  return out;
}

}  // namespace

std::vector<std::uint8_t> encode_frame_header(const FrameHeader& h) {
  if (h.world.size() > kMaxWorldNameBytes) throw protocol_error("world name too long");
  std::vector<std::uint8_t> out;
  out.reserve(kFrameFixedBytes + h.world.size() + kFrameTailBytes);
  wire::Writer w(out);
  w.u32(kFrameMagic);
  w.u8(kFrameVersion);
  w.u8(static_cast<std::uint8_t>(h.type));
  w.u16(static_cast<std::uint16_t>(h.world.size()));
  w.bytes(h.world);
  w.u64(h.op_seq);
  w.u8(h.dtype);
  w.u64(h.elem_count);
  return out;
}

std::vector<std::uint8_t> encode_frame(const Frame& f) {
  const FrameHeader& h = f.header;
  if (h.type == MsgType::kData) {
    if (h.dtype != static_cast<std::uint8_t>(f.payload.dtype()) ||
        h.elem_count != f.payload.size()) {
      throw protocol_error("payload does not match frame dtype/elem_count", h.world);
    }
  } else if (h.elem_count != 0 || f.payload.size() != 0) {
    throw protocol_error("control frames carry no payload", h.world);
  }
  auto out = encode_frame_header(h);
  auto bytes = f.payload.bytes();
  auto* p = reinterpret_cast<const std::uint8_t*>(bytes.data());
  out.insert(out.end(), p, p + bytes.size());
  return out;
}

Frame decode_frame(std::span<const std::uint8_t> bytes) {
  wire::Reader r(bytes);
  if (r.u32() != kFrameMagic) throw protocol_error("bad frame magic");
  if (r.u8() != kFrameVersion) throw protocol_error("unsupported frame version");
  std::uint8_t type = r.u8();
  if (type < 1 || type > 3) throw protocol_error("unknown frame type");
  Frame f;
  f.header.type = static_cast<MsgType>(type);
  f.header.world = r.bytes(r.u16());
  f.header.op_seq = r.u64();
  f.header.dtype = r.u8();
  f.header.elem_count = r.u64();
  if (f.header.type == MsgType::kData) {
    auto dtype = dtype_from_wire(f.header.dtype);
    if (!dtype) throw protocol_error("unknown dtype");
    std::string payload = r.bytes(f.header.elem_count * dtype_width(*dtype));
    f.payload = Buffer::from_bytes(
        *dtype, {reinterpret_cast<const std::byte*>(payload.data()), payload.size()});
  }
  if (r.remaining() != 0) throw protocol_error("trailing bytes after frame");
  return f;
}

// ---------------------------------------------------------------------------
// Connection
// ---------------------------------------------------------------------------

std::atomic<std::uint64_t> Connection::next_id_{1};

Connection::Connection(net::Socket sock, std::string world, Rank my_rank,
                       Rank peer_rank)
    : sock_(std::move(sock)),
      world_(std::move(world)),
      my_rank_(my_rank),
      peer_rank_(peer_rank),
      id_(next_id_.fetch_add(1)),
      hdr_(kFrameFixedBytes) {
  net::set_nonblocking(sock_.fd());
  net::set_nodelay(sock_.fd());
}

Connection::~Connection() = default;

void Connection::poison(ErrorKind kind, const std::string& detail) {
  if (state_ == ConnState::kOpen) state_ = ConnState::kPoisoned;
  std::string who = peer_rank_ >= 0 ? "rank " + std::to_string(peer_rank_) : "peer";
  throw Error(kind, who + ": " + detail, world_);
}

void Connection::check_open() const {
  if (state_ != ConnState::kOpen) {
    throw Error(ErrorKind::kRemoteWorker,
                "connection to rank " + std::to_string(peer_rank_) + " is not open",
                world_);
  }
}

void Connection::close(bool send_bye) noexcept {
  if (!sock_.valid()) return;
  if (send_bye && state_ == ConnState::kOpen && !reading_payload_) {
    FrameHeader h;
    h.type = MsgType::kBye;
    h.world = world_;
    auto bytes = to_bytes(encode_frame_header(h));
    std::size_t n = 0;
    net::send_some(sock_.fd(), bytes, {}, &n);
  }
  state_ = ConnState::kClosed;
  sock_.reset();
}

OutgoingFrame Connection::prepare_data(const Buffer& payload) {
  check_open();
  FrameHeader h;
  h.type = MsgType::kData;
  h.world = world_;
  h.op_seq = next_send_seq_++;
  h.dtype = static_cast<std::uint8_t>(payload.dtype());
  h.elem_count = payload.size();
  OutgoingFrame f;
  f.header = to_bytes(encode_frame_header(h));
  f.payload = payload;
  return f;
}

bool Connection::write_some(OutgoingFrame& f) {
  check_open();
  const std::size_t hsz = f.header.size();
  auto payload = f.payload.bytes();
  while (!f.done()) {
    std::span<const std::byte> a, b;
    if (f.written < hsz) {
      a = std::span<const std::byte>(f.header).subspan(f.written);
      b = payload;
    } else {
      a = payload.subspan(f.written - hsz);
    }
    std::size_t n = 0;
    net::IoStatus st = net::send_some(sock_.fd(), a, b, &n);
    if (st == net::IoStatus::kWouldBlock) return false;
    if (st != net::IoStatus::kOk) poison(ErrorKind::kRemoteWorker, "connection reset while sending");
    f.written += n;
  }
  return true;
}

std::optional<FrameHeader> Connection::read_header_some() {
  check_open();
  if (reading_payload_) throw protocol_error("previous payload not consumed", world_);
  for (;;) {
    std::size_t n = 0;
    auto dst = std::span<std::uint8_t>(hdr_).subspan(hdr_have_);
    net::IoStatus st = net::recv_some(
        sock_.fd(), {reinterpret_cast<std::byte*>(dst.data()), dst.size()}, &n);
    if (st == net::IoStatus::kWouldBlock) return std::nullopt;
    if (st == net::IoStatus::kClosed) poison(ErrorKind::kRemoteWorker, "connection closed by peer");
    if (st != net::IoStatus::kOk) poison(ErrorKind::kRemoteWorker, "connection error while receiving");
    hdr_have_ += n;
    if (hdr_have_ < hdr_.size()) continue;
    if (hdr_.size() == kFrameFixedBytes) {
      wire::Reader r(hdr_);
      std::uint32_t magic = r.u32();
      std::uint8_t version = r.u8();
      r.u8();
      std::uint16_t name_len = r.u16();
      if (magic != kFrameMagic) poison(ErrorKind::kProtocol, "bad frame magic");
      if (version != kFrameVersion) poison(ErrorKind::kProtocol, "unsupported frame version");
      if (name_len > kMaxWorldNameBytes) poison(ErrorKind::kProtocol, "world name too long");
      hdr_.resize(kFrameFixedBytes + name_len + kFrameTailBytes);
      continue;
    }
    return parse_header();
  }
}

std::optional<FrameHeader> Connection::parse_header() {
  wire::Reader r(hdr_);
  r.u32();
  r.u8();
  std::uint8_t type = r.u8();
  std::uint16_t name_len = r.u16();
  FrameHeader h;
  h.world = r.bytes(name_len);
  h.op_seq = r.u64();
  h.dtype = r.u8();
  h.elem_count = r.u64();
  hdr_.resize(kFrameFixedBytes);
  hdr_have_ = 0;

  if (type < 1 || type > 3) poison(ErrorKind::kProtocol, "unknown frame type");
  h.type = static_cast<MsgType>(type);
  if (h.world != world_) {
    poison(ErrorKind::kProtocol, "frame for world '" + h.world + "' on connection for '" +
                                     world_ + "'");
  }
  switch (h.type) {
    case MsgType::kHello:
      if (peer_rank_ >= 0) poison(ErrorKind::kProtocol, "unexpected HELLO");
      if (h.elem_count != 0) poison(ErrorKind::kProtocol, "HELLO with payload");
      return h;
    case MsgType::kBye:
      state_ = ConnState::kClosed;
      throw Error(ErrorKind::kRemoteWorker,
                  "rank " + std::to_string(peer_rank_) + " left the world", world_);
    case MsgType::kData:
      break;
  }
  if (peer_rank_ < 0) poison(ErrorKind::kProtocol, "DATA before HELLO");
  if (h.op_seq != next_recv_seq_) {
    poison(ErrorKind::kProtocol, "sequence gap: expected " + std::to_string(next_recv_seq_) +
                                     ", got " + std::to_string(h.op_seq));
  }
  auto dtype = dtype_from_wire(h.dtype);
  if (!dtype) poison(ErrorKind::kProtocol, "unknown dtype " + std::to_string(h.dtype));
  if (h.elem_count > kMaxFrameElements) poison(ErrorKind::kProtocol, "frame too large");
  reading_payload_ = true;
  payload_total_ = h.elem_count * dtype_width(*dtype);
  payload_have_ = 0;
  return h;
}

void Connection::finish_payload() {
  reading_payload_ = false;
  ++next_recv_seq_;
}

bool Connection::read_payload_some(std::span<std::byte> dst) {
  check_open();
  if (!reading_payload_) throw protocol_error("no payload pending", world_);
  if (dst.size() != payload_total_) throw protocol_error("payload size mismatch", world_);
  while (payload_have_ < payload_total_) {
    std::size_t n = 0;
    net::IoStatus st = net::recv_some(sock_.fd(), dst.subspan(payload_have_), &n);
    if (st == net::IoStatus::kWouldBlock) return false;
    if (st == net::IoStatus::kClosed) poison(ErrorKind::kRemoteWorker, "connection closed mid-payload");
    if (st != net::IoStatus::kOk) poison(ErrorKind::kRemoteWorker, "connection error mid-payload");
    payload_have_ += n;
  }
  finish_payload();
  return true;
}

bool Connection::discard_payload_some() {
  check_open();
  if (!reading_payload_) return true;
  if (scratch_.empty()) scratch_.resize(64 * 1024);
  while (payload_have_ < payload_total_) {
    std::size_t want = std::min(scratch_.size(), payload_total_ - payload_have_);
    std::size_t n = 0;
    net::IoStatus st =
        net::recv_some(sock_.fd(), std::span<std::byte>(scratch_).first(want), &n);
    if (st == net::IoStatus::kWouldBlock) return false;
    if (st != net::IoStatus::kOk) poison(ErrorKind::kRemoteWorker, "connection closed mid-payload");
    payload_have_ += n;
  }
  finish_payload();
  return true;
}

std::uint64_t Connection::send_frame(const Frame& f, net::Deadline deadline) {
  check_open();
  OutgoingFrame out;
  std::uint64_t seq = f.header.op_seq;
  if (f.header.type == MsgType::kData) {
    if (f.header.world != world_) throw protocol_error("frame names another world", world_);
    if (f.header.dtype != static_cast<std::uint8_t>(f.payload.dtype()) ||
        f.header.elem_count != f.payload.size()) {
      throw protocol_error("payload length does not match elem_count x dtype width", world_);
    }
    out = prepare_data(f.payload);
    seq = next_send_seq_ - 1;
  } else {
    out.header = to_bytes(encode_frame(f));
  }
  while (!write_some(out)) {
    if (net::wait_writable(sock_.fd(), deadline) != net::IoStatus::kOk) {
      // A partially written frame cannot be resumed by the peer.
      poison(ErrorKind::kTimeout, "send timed out");
    }
  }
  return seq;
}

std::uint64_t Connection::send_data(const Buffer& payload, net::Deadline deadline) {
  FrameHeader h;
  h.type = MsgType::kData;
  h.world = world_;
  h.dtype = static_cast<std::uint8_t>(payload.dtype());
  h.elem_count = payload.size();
  return send_frame(Frame{h, payload}, deadline);
}

Frame Connection::recv_frame(std::optional<Millis> timeout) {
  auto deadline = net::deadline_after(timeout);
  auto timed_out = [&] {
    return Error(ErrorKind::kTimeout,
                 "no frame from rank " + std::to_string(peer_rank_) + " before deadline",
                 world_);
  };
  if (!partial_) {
    std::optional<FrameHeader> h;
    while (!(h = read_header_some())) {
      if (net::wait_readable(sock_.fd(), deadline) == net::IoStatus::kTimeout) {
        throw timed_out();
      }
    }
    Frame f;
    f.header = *h;
    if (h->type == MsgType::kData) {
      f.payload = Buffer(*dtype_from_wire(h->dtype), h->elem_count);
    }
    partial_ = std::move(f);
  }
  if (partial_->header.type == MsgType::kData) {
    while (!read_payload_some(partial_->payload.mutable_bytes())) {
      if (net::wait_readable(sock_.fd(), deadline) == net::IoStatus::kTimeout) {
        throw timed_out();
      }
    }
  }
  Frame f = std::move(*partial_);
  partial_.reset();
  return f;
}

void Connection::recv_data_into(const Buffer& dst, std::optional<Millis> timeout) {
  auto deadline = net::deadline_after(timeout);
  auto wait = [&] {
    if (net::wait_readable(sock_.fd(), deadline) == net::IoStatus::kTimeout) {
      throw Error(ErrorKind::kTimeout, "receive timed out", world_);
    }
  };
  if (!reading_payload_) {
    std::optional<FrameHeader> h;
    while (!(h = read_header_some())) wait();
    if (h->dtype != static_cast<std::uint8_t>(dst.dtype()) || h->elem_count != dst.size()) {
      while (!discard_payload_some()) wait();
      throw protocol_error("expected " + std::to_string(dst.size()) + " x " +
                               std::string(dtype_name(dst.dtype())) + ", peer sent " +
                               std::to_string(h->elem_count) + " elements",
                           world_);
    }
  }
  while (!read_payload_some(dst.mutable_bytes())) wait();
}

std::unique_ptr<Connection> Connection::connect(const Endpoint& addr,
                                                std::string_view world, Rank my_rank,
                                                Clock::time_point deadline) {
  std::string err;
  net::Socket sock = net::connect_tcp(addr, deadline, &err);
  if (!sock.valid()) throw Error(ErrorKind::kRemoteWorker, err, std::string(world));
  auto conn = std::make_unique<Connection>(std::move(sock), std::string(world), my_rank, -1);
  auto hello = to_bytes(encode_frame_header(hello_header(world, my_rank)));
  if (net::send_all(conn->fd(), hello, deadline) != net::IoStatus::kOk) {
    throw Error(ErrorKind::kRemoteWorker, "HELLO to " + addr.to_string() + " failed",
                std::string(world));
  }
  std::optional<FrameHeader> h;
  while (!(h = conn->read_header_some())) {
    if (net::wait_readable(conn->fd(), deadline) != net::IoStatus::kOk) {
      throw Error(ErrorKind::kRemoteWorker, "no HELLO from " + addr.to_string(),
                  std::string(world));
    }
  }
  conn->peer_rank_ = static_cast<Rank>(h->op_seq);
  return conn;
}

std::unique_ptr<Connection> accept_handshake(net::Socket sock, std::string_view world,
                                             Rank my_rank, int world_size,
                                             Clock::time_point deadline) {
  int fd = sock.fd();
  auto conn = std::make_unique<Connection>(std::move(sock), std::string(world), my_rank, -1);
  auto reply = [&] {
    auto hello = to_bytes(encode_frame_header(hello_header(world, my_rank)));
    net::send_all(fd, hello, deadline);
  };
  std::optional<FrameHeader> h;
  try {
    while (!(h = conn->read_header_some())) {
      if (net::wait_readable(fd, deadline) != net::IoStatus::kOk) {
        throw Error(ErrorKind::kTimeout, "no HELLO from dialer", std::string(world));
      }
    }
  } catch (const Error& e) {
    // Tell the dialer which world this listener serves before closing.
    if (e.kind() == ErrorKind::kProtocol) reply();
    throw;
  }
  auto rank = static_cast<std::int64_t>(h->op_seq);
  if (rank < 0 || rank >= world_size || rank == my_rank) {
    throw protocol_error("HELLO from invalid rank " + std::to_string(rank),
                         std::string(world));
  }
  reply();
  conn->peer_rank_ = static_cast<Rank>(rank);
  return conn;
}

// ---------------------------------------------------------------------------
// Listener
// ---------------------------------------------------------------------------

std::shared_ptr<Listener> Listener::open(const Endpoint& addr, std::string world,
                                         Rank my_rank, int world_size) {
  net::Socket sock = net::listen_tcp(addr);
  std::shared_ptr<Listener> l(
      new Listener(std::move(sock), std::move(world), my_rank, world_size));
  l->thread_ = std::thread([raw = l.get()] { raw->accept_loop(); });
  return l;
}

Listener::Listener(net::Socket sock, std::string world, Rank my_rank, int world_size)
    : sock_(std::move(sock)),
      address_(net::local_endpoint(sock_)),
      world_(std::move(world)),
      my_rank_(my_rank),
      world_size_(world_size) {}

Listener::~Listener() { close(); }

void Listener::close() {
  if (stopping_.exchange(true)) return;
  sock_.shutdown();  // wakes the accept loop
  if (thread_.joinable()) thread_.join();
  sock_.reset();
  std::lock_guard<std::mutex> lock(mu_);
  ready_.clear();
  pending_ = 0;
  cv_.notify_all();
}

void Listener::set_notify(std::function<void()> fn) {
  std::lock_guard<std::mutex> lock(mu_);
  notify_ = std::move(fn);
}

void Listener::accept_loop() {
  while (!stopping_) {
    if (net::wait_readable(sock_.fd(), Clock::now() + Millis(50)) != net::IoStatus::kOk) {
      continue;
    }
    int fd = ::accept4(sock_.fd(), nullptr, nullptr, SOCK_CLOEXEC | SOCK_NONBLOCK);
    if (fd < 0) continue;
    std::unique_ptr<Connection> conn;
    try {
      conn = accept_handshake(net::Socket(fd), world_, my_rank_, world_size_,
                              Clock::now() + kHandshakeTimeout);
    } catch (const Error&) {
      ++rejected_;
      continue;
    }
    std::function<void()> notify;
    {
      std::lock_guard<std::mutex> lock(mu_);
      if (stopping_) break;
      ready_.push_back(std::move(conn));
      pending_.fetch_add(1, std::memory_order_release);
      notify = notify_;
    }
    cv_.notify_all();
    if (notify) notify();
  }
}

std::unique_ptr<Connection> Listener::try_accept() {
  if (!has_pending()) return nullptr;
  std::lock_guard<std::mutex> lock(mu_);
  if (ready_.empty()) return nullptr;
  auto c = std::move(ready_.front());
  ready_.pop_front();
  pending_.fetch_sub(1, std::memory_order_release);
  return c;
}

std::unique_ptr<Connection> Listener::accept(Millis timeout) {
  std::unique_lock<std::mutex> lock(mu_);
  if (!cv_.wait_for(lock, timeout, [&] { return !ready_.empty() || stopping_.load(); }) ||
      ready_.empty()) {
    throw Error(ErrorKind::kTimeout, "no connection accepted", world_);
  }
  auto c = std::move(ready_.front());
  ready_.pop_front();
  pending_.fetch_sub(1, std::memory_order_release);
  return c;
}

}  // namespace mw
