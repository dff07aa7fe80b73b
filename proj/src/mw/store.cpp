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

#include "mw/store.hpp"

#include <sys/socket.h>

#include "mw/wire.hpp"

namespace mw {

namespace {

bool valid_op(std::uint8_t op) { return op >= 1 && op <= 6; }

void check_key(std::string_view key) {
  if (key.empty() || key.size() > kMaxKeyBytes) {
    throw protocol_error("store key must be 1.." + std::to_string(kMaxKeyBytes) +
                         " bytes, got " + std::to_string(key.size()));
  }
}

void check_value(std::string_view value) {
  if (value.size() > kMaxValueBytes) {
    throw protocol_error("store value exceeds " + std::to_string(kMaxValueBytes) +
                         " bytes");
  }
}

std::span<const std::byte> as_bytes(const std::vector<std::uint8_t>& v) {
  return {reinterpret_cast<const std::byte*>(v.data()), v.size()};
}

}  // namespace

std::vector<std::uint8_t> encode_request(const StoreRequest& req) {
  check_key(req.key);
  std::vector<std::uint8_t> out;
  wire::Writer w(out);
  w.u8(static_cast<std::uint8_t>(req.op));
  w.u32(static_cast<std::uint32_t>(req.key.size()));
  w.bytes(req.key);
  switch (req.op) {
    case StoreOp::kSet:
      check_value(req.value);
      w.u32(static_cast<std::uint32_t>(req.value.size()));
      w.bytes(req.value);
      break;
    case StoreOp::kAdd:
      w.i64(req.delta);
      break;
    case StoreOp::kWait:
      w.u64(req.timeout_ms);
      break;
    default:
      break;
  }
  return out;
}

std::vector<std::uint8_t> encode_response(const StoreResponse& resp) {
  std::vector<std::uint8_t> out;
  wire::Writer w(out);
  w.u8(static_cast<std::uint8_t>(resp.status));
  w.u32(static_cast<std::uint32_t>(resp.value.size()));
  w.bytes(resp.value);
  return out;
}

StoreRequest decode_request(std::span<const std::uint8_t> bytes) {
  wire::Reader r(bytes);
  StoreRequest req;
  std::uint8_t op = r.u8();
  if (!valid_op(op)) throw protocol_error("unknown store opcode " + std::to_string(op));
  req.op = static_cast<StoreOp>(op);
  std::uint32_t key_len = r.u32();
  if (key_len == 0 || key_len > kMaxKeyBytes) throw protocol_error("bad key length");
  req.key = r.bytes(key_len);
  switch (req.op) {
    case StoreOp::kSet: {
      std::uint32_t n = r.u32();
      if (n > kMaxValueBytes) throw protocol_error("value too large");
      req.value = r.bytes(n);
      break;
    }
    case StoreOp::kAdd:
      req.delta = r.i64();
      break;
    case StoreOp::kWait:
      req.timeout_ms = r.u64();
      break;
    default:
      break;
  }
  if (r.remaining() != 0) throw protocol_error("trailing bytes in store request");
  return req;
}

StoreResponse decode_response(std::span<const std::uint8_t> bytes) {
  wire::Reader r(bytes);
  StoreResponse resp;
  std::uint8_t status = r.u8();
  if (status > 3) throw protocol_error("unknown store status " + std::to_string(status));
  resp.status = static_cast<StoreStatus>(status);
  std::uint32_t n = r.u32();
  resp.value = r.bytes(n);
  if (r.remaining() != 0) throw protocol_error("trailing bytes in store response");
  return resp;
}

// ---------------------------------------------------------------------------
// Server
// ---------------------------------------------------------------------------

std::unique_ptr<StoreServer> StoreServer::serve(const Endpoint& listen_addr) {
  net::Socket listener = net::listen_tcp(listen_addr, 256);
  std::unique_ptr<StoreServer> server(new StoreServer(std::move(listener)));
  server->accept_thread_ = std::thread([s = server.get()] { s->accept_loop(); });
  return server;
}

StoreServer::StoreServer(net::Socket listener)
    : listener_(std::move(listener)), address_(net::local_endpoint(listener_)) {}

StoreServer::~StoreServer() { stop(); }

void StoreServer::stop() {
  if (stopping_.exchange(true)) return;
  {
    std::lock_guard<std::mutex> lock(mu_);
    changed_.notify_all();
  }
  listener_.shutdown();  // wakes the accept loop
  if (accept_thread_.joinable()) accept_thread_.join();
  {
    std::lock_guard<std::mutex> lock(conns_mu_);
    for (auto& c : conns_) c->sock.shutdown();
  }
  {
    // Waiters re-check `stopping_` under the state lock.
    std::lock_guard<std::mutex> lock(mu_);
    changed_.notify_all();
  }
  reap_finished(/*all=*/true);
  listener_.reset();
}

std::size_t StoreServer::key_count() const {
  std::lock_guard<std::mutex> lock(mu_);
  return data_.size();
}

std::size_t StoreServer::open_connections() const {
  std::lock_guard<std::mutex> lock(conns_mu_);
  std::size_t n = 0;
  for (const auto& c : conns_) n += c->finished ? 0 : 1;
  return n;
}

void StoreServer::reap_finished(bool all) {
  std::list<std::unique_ptr<Conn>> done;
  {
    std::lock_guard<std::mutex> lock(conns_mu_);
    for (auto it = conns_.begin(); it != conns_.end();) {
      if (all || (*it)->finished) {
        done.push_back(std::move(*it));
        it = conns_.erase(it);
      } else {
        ++it;
      }
    }
  }
  for (auto& c : done) {
    if (c->thread.joinable()) c->thread.join();
  }
}

void StoreServer::accept_loop() {
  while (!stopping_) {
    if (net::wait_readable(listener_.fd(), Clock::now() + Millis(100)) !=
        net::IoStatus::kOk) {
      reap_finished(false);
      continue;
    }
    int fd = ::accept4(listener_.fd(), nullptr, nullptr, SOCK_CLOEXEC | SOCK_NONBLOCK);
    if (fd < 0) continue;
    net::set_nodelay(fd);
    auto conn = std::make_unique<Conn>();
    conn->sock = net::Socket(fd);
    Conn* raw = conn.get();
    {
      std::lock_guard<std::mutex> lock(conns_mu_);
      conns_.push_back(std::move(conn));
      raw->thread = std::thread([this, raw] { serve_connection(raw); });
    }
    reap_finished(false);
  }
}

void StoreServer::serve_connection(Conn* conn) {
  int fd = conn->sock.fd();
  while (!stopping_ && handle_one(fd)) {
  }
  conn->sock.shutdown();
  conn->finished = true;
}

bool StoreServer::handle_one(int fd) {
  auto read = [fd](void* dst, std::size_t n) {
    return net::recv_all(fd, {static_cast<std::byte*>(dst), n}, std::nullopt) ==
           net::IoStatus::kOk;
  };
  auto reply = [fd](const StoreResponse& resp) {
    auto bytes = encode_response(resp);
    return net::send_all(fd, as_bytes(bytes), Clock::now() + kDefaultStoreTimeout) ==
           net::IoStatus::kOk;
  };
  auto reject = [&](const std::string& why) {
    reply({StoreStatus::kProtoErr, why});
    return false;
  };

  std::uint8_t op = 0;
  if (!read(&op, 1)) return false;
  if (!valid_op(op)) return reject("unknown opcode");
  std::uint8_t len_bytes[4];
  if (!read(len_bytes, 4)) return false;
  std::uint32_t key_len = wire::Reader({len_bytes, 4}).u32();
  if (key_len == 0 || key_len > kMaxKeyBytes) return reject("bad key length");

  StoreRequest req;
  req.op = static_cast<StoreOp>(op);
  req.key.resize(key_len);
  if (!read(req.key.data(), key_len)) return false;
  switch (req.op) {
    case StoreOp::kSet: {
      if (!read(len_bytes, 4)) return false;
      std::uint32_t n = wire::Reader({len_bytes, 4}).u32();
      if (n > kMaxValueBytes) return reject("value too large");
      req.value.resize(n);
      if (n > 0 && !read(req.value.data(), n)) return false;
      break;
    }
    case StoreOp::kAdd:
    case StoreOp::kWait: {
      std::uint8_t b[8];
      if (!read(b, 8)) return false;
      wire::Reader r({b, 8});
      if (req.op == StoreOp::kAdd) {
        req.delta = r.i64();
      } else {
        req.timeout_ms = r.u64();
      }
      break;
    }
    default:
      break;
  }
  return reply(apply(req));
}

StoreResponse StoreServer::apply(const StoreRequest& req) {
  std::unique_lock<std::mutex> lock(mu_);
  switch (req.op) {
    case StoreOp::kSet:
      data_[req.key] = req.value;
      changed_.notify_all();
      return {StoreStatus::kOk, {}};
    case StoreOp::kGet: {
      auto it = data_.find(req.key);
      if (it == data_.end()) return {StoreStatus::kNotFound, {}};
      return {StoreStatus::kOk, it->second};
    }
    case StoreOp::kAdd: {
      std::int64_t current = 0;
      auto it = data_.find(req.key);
      if (it != data_.end()) {
        if (it->second.size() != 8) {
          return {StoreStatus::kProtoErr, "existing value is not an 8-byte counter"};
        }
        current = wire::decode_i64(it->second);
      }
      auto next = static_cast<std::int64_t>(static_cast<std::uint64_t>(current) +
                                            static_cast<std::uint64_t>(req.delta));
      data_[req.key] = wire::encode_i64(next);
      changed_.notify_all();
      return {StoreStatus::kOk, wire::encode_i64(next)};
    }
    case StoreOp::kWait: {
      auto deadline = Clock::now() + Millis(std::min<std::uint64_t>(
                                         req.timeout_ms, std::uint64_t{1} << 40));
      bool found = changed_.wait_until(lock, deadline, [&] {
        return stopping_.load() || data_.count(req.key) > 0;
      });
      auto it = data_.find(req.key);
      if (!found || it == data_.end()) return {StoreStatus::kTimeout, {}};
      return {StoreStatus::kOk, it->second};
    }
    case StoreOp::kDelete:
      data_.erase(req.key);
      return {StoreStatus::kOk, {}};
    case StoreOp::kDeletePrefix: {
      auto it = data_.lower_bound(req.key);
      while (it != data_.end() && it->first.compare(0, req.key.size(), req.key) == 0) {
        it = data_.erase(it);
      }
      return {StoreStatus::kOk, {}};
    }
  }
  return {StoreStatus::kProtoErr, "unknown opcode"};
}

// ---------------------------------------------------------------------------
// Client
// ---------------------------------------------------------------------------

StoreClient::StoreClient(Endpoint server, Millis timeout, bool retry_connect)
    : server_(std::move(server)), timeout_(timeout), retry_connect_(retry_connect) {}

void StoreClient::ensure_connected() {
  if (sock_.valid()) return;
  std::string err;
  sock_ = net::connect_tcp(server_, Clock::now() + timeout_, &err, retry_connect_);
  if (!sock_.valid()) {
    throw Error(ErrorKind::kTimeout, "store " + server_.to_string() +
                                         " unreachable: " + err);
  }
}

StoreResponse StoreClient::roundtrip(const StoreRequest& req, Millis response_timeout) {
  auto bytes = encode_request(req);
  ensure_connected();
  auto deadline = Clock::now() + response_timeout;
  int fd = sock_.fd();
  auto fail = [&](net::IoStatus st) -> Error {
    sock_.reset();
    if (st == net::IoStatus::kTimeout) {
      return Error(ErrorKind::kTimeout, "no response from store " + server_.to_string());
    }
    return Error(ErrorKind::kTimeout, "connection to store " + server_.to_string() + " lost");
  };
  net::IoStatus st = net::send_all(fd, as_bytes(bytes), deadline);
  if (st != net::IoStatus::kOk) throw fail(st);

  std::uint8_t head[5];
  st = net::recv_all(fd, {reinterpret_cast<std::byte*>(head), 5}, deadline);
  if (st != net::IoStatus::kOk) throw fail(st);
  wire::Reader r({head, 5});
  StoreResponse resp;
  std::uint8_t status = r.u8();
  std::uint32_t n = r.u32();
  if (status > 3 || n > kMaxValueBytes) {
    sock_.reset();
    throw protocol_error("malformed store response");
  }
  resp.status = static_cast<StoreStatus>(status);
  resp.value.resize(n);
  if (n > 0) {
    st = net::recv_all(fd, {reinterpret_cast<std::byte*>(resp.value.data()), n}, deadline);
    if (st != net::IoStatus::kOk) throw fail(st);
  }
  if (resp.status == StoreStatus::kProtoErr) {
    // The server may have closed the stream after rejecting the request.
    sock_.reset();
    throw protocol_error("store rejected request: " + resp.value);
  }
  return resp;
}

void StoreClient::set(std::string_view key, std::string_view value) {
  StoreRequest req{StoreOp::kSet, std::string(key), std::string(value)};
  roundtrip(req, timeout_);
}

std::optional<std::string> StoreClient::get(std::string_view key) {
  StoreRequest req{StoreOp::kGet, std::string(key), {}};
  auto resp = roundtrip(req, timeout_);
  if (resp.status == StoreStatus::kNotFound) return std::nullopt;
  return std::move(resp.value);
}

std::int64_t StoreClient::add(std::string_view key, std::int64_t delta) {
  StoreRequest req{StoreOp::kAdd, std::string(key), {}};
  req.delta = delta;
  return wire::decode_i64(roundtrip(req, timeout_).value);
}

std::string StoreClient::wait(std::string_view key, Millis timeout) {
  StoreRequest req{StoreOp::kWait, std::string(key), {}};
  req.timeout_ms = static_cast<std::uint64_t>(std::max<Millis::rep>(0, timeout.count()));
  auto resp = roundtrip(req, timeout + timeout_);
  if (resp.status != StoreStatus::kOk) {
    throw Error(ErrorKind::kTimeout, "wait for key '" + std::string(key) + "' timed out");
  }
  return std::move(resp.value);
}

void StoreClient::erase(std::string_view key) {
  roundtrip({StoreOp::kDelete, std::string(key), {}}, timeout_);
}

void StoreClient::erase_prefix(std::string_view prefix) {
  roundtrip({StoreOp::kDeletePrefix, std::string(prefix), {}}, timeout_);
}

}  // namespace mw
