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

#include "mw/communicator.hpp"

#include <poll.h>
#include <sched.h>
#include <sys/eventfd.h>
#include <unistd.h>

#include <set>

namespace mw {

namespace {

constexpr Millis kDialTimeout{5000};
constexpr int kIdleSpinsBeforeBlock = 4;
constexpr int kIdleBlockMs = 1;

struct Dial {
  std::atomic<bool> done{false};
  std::unique_ptr<Connection> conn;
  std::optional<Error> error;
};

}  // namespace

PollerMode poller_mode_from_env() {
  auto v = env_int("MW_POLLER_YIELD");
  return v && *v != 0 ? PollerMode::kYield : PollerMode::kSpin;
}

std::optional<Millis> op_timeout_from_env() {
  auto v = env_int("MW_OP_DEFAULT_TIMEOUT_MS");
  if (!v || *v <= 0) return std::nullopt;
  return Millis(*v);
}

// Eventfd shared with background dialers and listeners, which may outlive
// the communicator.
class Communicator::Waker {
 public:
  Waker() : fd_(::eventfd(0, EFD_NONBLOCK | EFD_CLOEXEC)) {}
  ~Waker() {
    if (fd_ >= 0) ::close(fd_);
  }
  void wake() const {
    std::uint64_t one = 1;
    [[maybe_unused]] ssize_t n = ::write(fd_, &one, sizeof(one));
  }
  void drain() const {
    std::uint64_t v;
    [[maybe_unused]] ssize_t n = ::read(fd_, &v, sizeof(v));
  }
  int fd() const { return fd_; }

 private:
  int fd_;
};

// ---------------------------------------------------------------------------
// Per-world poller state
// ---------------------------------------------------------------------------

namespace {

struct Channel {
  Rank peer = -1;
  std::unique_ptr<Connection> conn;
  std::shared_ptr<Dial> dial;

  std::deque<std::shared_ptr<SendSlot>> sends;
  OutgoingFrame out;
  bool writing = false;

  std::deque<std::shared_ptr<RecvSlot>> recvs;
  std::optional<FrameHeader> hdr;
  bool discarding = false;

  bool idle() const { return sends.empty() && recvs.empty(); }
  bool owns(std::uint64_t op) const {
    for (const auto& s : sends) {
      if (s->op_id == op) return true;
    }
    for (const auto& r : recvs) {
      if (r->op_id == op) return true;
    }
    return false;
  }
};

struct ActiveOp {
  WorkHandle work;
  std::unique_ptr<Kernel> kernel;
  std::optional<Clock::time_point> deadline;
};

}  // namespace

struct Communicator::Runtime : SlotQueue {
  WorldInfo info;
  std::vector<Channel> channels;
  std::deque<ActiveOp> ops;
  bool failed = false;

  explicit Runtime(WorldInfo i) : info(std::move(i)) {
    channels.resize(static_cast<std::size_t>(info.binding.size));
    for (int p = 0; p < info.binding.size; ++p) channels[p].peer = p;
  }

  const std::string& name() const { return info.binding.name; }
  Rank rank() const { return info.binding.rank; }

  std::shared_ptr<SendSlot> reserve_send(Rank peer) override {
    auto s = std::make_shared<SendSlot>();
    channels.at(peer).sends.push_back(s);
    return s;
  }
  std::shared_ptr<RecvSlot> reserve_recv(Rank peer, Buffer dst) override {
    auto r = std::make_shared<RecvSlot>();
    r->dst = std::move(dst);
    channels.at(peer).recvs.push_back(r);
    return r;
  }

  void close_all(bool graceful) {
    for (auto& ch : channels) {
      if (ch.conn) ch.conn->close(graceful && !ch.writing && !ch.hdr);
      ch.conn.reset();
      ch.dial.reset();
      ch.sends.clear();
      ch.recvs.clear();
    }
  }
};

// ---------------------------------------------------------------------------
// Communicator
// ---------------------------------------------------------------------------

Communicator::Communicator(Resolver resolve, PollerMode mode, std::optional<Millis> op_timeout)
    : resolve_(std::move(resolve)),
      mode_(mode),
      op_timeout_(op_timeout),
      waker_(std::make_shared<Waker>()) {
  thread_ = std::thread([this] { run(); });
}

Communicator::~Communicator() { stop(); }

void Communicator::stop() {
  if (stopping_.exchange(true)) return;
  wake();
  if (thread_.joinable()) thread_.join();
}

void Communicator::set_failure_handler(FailureHandler fn) {
  std::lock_guard<std::mutex> lock(handler_mu_);
  on_failure_ = std::move(fn);
}

void Communicator::wake() { waker_->wake(); }

void Communicator::enqueue(Command c) {
  {
    std::lock_guard<std::mutex> lock(cmd_mu_);
    commands_.push_back(std::move(c));
    has_commands_.store(true, std::memory_order_release);
  }
  if (mode_ == PollerMode::kYield) wake();
}

WorkHandle Communicator::submit(CollectiveCall call) {
  WorldBinding b = resolve_(call.world);
  validate_call(call, b.rank, b.size);
  if (stopping_) throw aborted(call.world, "communicator stopped");
  std::uint64_t id = next_op_id_.fetch_add(1);
  WorkHandle h = WorkHandle::create(id, call.world, call.op);
  auto kernel = make_kernel(id, std::move(call), b.rank, b.size);
  enqueue(Submission{b.instance, h, std::move(kernel)});
  return h;
}

WorkHandle Communicator::isend(const std::string& world, Rank dst, Buffer b) {
  CollectiveCall c;
  c.world = world;
  c.op = OpKind::kSend;
  c.root = dst;
  c.inputs.push_back(std::move(b));
  return submit(std::move(c));
}

WorkHandle Communicator::irecv(const std::string& world, Rank src, DType dtype,
                               std::size_t count) {
  CollectiveCall c;
  c.world = world;
  c.op = OpKind::kRecv;
  c.root = src;
  c.dtype = dtype;
  c.count = count;
  return submit(std::move(c));
}

WorkHandle Communicator::ibroadcast(const std::string& world, Rank root, Buffer b) {
  CollectiveCall c;
  c.world = world;
  c.op = OpKind::kBroadcast;
  c.root = root;
  c.dtype = b.dtype();
  c.count = b.size();
  c.inputs.push_back(std::move(b));
  WorldBinding binding = resolve_(world);
  if (binding.rank != root) c.inputs.clear();
  return submit(std::move(c));
}

WorkHandle Communicator::iall_reduce(const std::string& world, Buffer b, ReduceOp op) {
  CollectiveCall c;
  c.world = world;
  c.op = OpKind::kAllReduce;
  c.reduce_op = op;
  c.inputs.push_back(std::move(b));
  return submit(std::move(c));
}

WorkHandle Communicator::ireduce(const std::string& world, Rank root, Buffer b, ReduceOp op) {
  CollectiveCall c;
  c.world = world;
  c.op = OpKind::kReduce;
  c.root = root;
  c.reduce_op = op;
  c.inputs.push_back(std::move(b));
  return submit(std::move(c));
}

WorkHandle Communicator::iall_gather(const std::string& world, Buffer b) {
  CollectiveCall c;
  c.world = world;
  c.op = OpKind::kAllGather;
  c.inputs.push_back(std::move(b));
  return submit(std::move(c));
}

WorkHandle Communicator::igather(const std::string& world, Rank root, Buffer b) {
  CollectiveCall c;
  c.world = world;
  c.op = OpKind::kGather;
  c.root = root;
  c.inputs.push_back(std::move(b));
  return submit(std::move(c));
}

WorkHandle Communicator::iscatter(const std::string& world, Rank root,
                                  std::vector<Buffer> parts, DType dtype,
                                  std::size_t count) {
  CollectiveCall c;
  c.world = world;
  c.op = OpKind::kScatter;
  c.root = root;
  c.inputs = std::move(parts);
  c.dtype = dtype;
  c.count = count;
  return submit(std::move(c));
}

void Communicator::add_world(WorldInfo info) {
  if (info.listener) {
    std::weak_ptr<Waker> w = waker_;
    info.listener->set_notify([w] {
      if (auto s = w.lock()) s->wake();
    });
  }
  enqueue(AddWorld{std::move(info)});
}

void Communicator::drop_world(std::uint64_t instance, Error cause, bool graceful) {
  enqueue(DropWorld{instance, std::move(cause), graceful});
}

std::vector<std::uint64_t> Communicator::connection_ids(std::uint64_t instance) {
  auto p = std::make_shared<std::promise<std::vector<std::uint64_t>>>();
  auto f = p->get_future();
  enqueue(Query{instance, p});
  if (f.wait_for(std::chrono::seconds(5)) != std::future_status::ready) return {};
  return f.get();
}

// ---------------------------------------------------------------------------
// Poller
// ---------------------------------------------------------------------------

void Communicator::run() {
  int idle = 0;
  while (!stopping_.load(std::memory_order_relaxed)) {
    bool progress = drain_commands();
    iterations_.fetch_add(1, std::memory_order_relaxed);
    for (auto it = worlds_.begin(); it != worlds_.end();) {
      progress |= step_world(*it->second);
      if (it->second->failed) {
        it = worlds_.erase(it);
      } else {
        ++it;
      }
    }
    if (progress) {
      idle = 0;
    } else if (mode_ == PollerMode::kYield) {
      if (++idle < kIdleSpinsBeforeBlock) {
        sched_yield();
      } else {
        idle_wait();
      }
    }
  }
  drain_commands();
  for (auto& [id, w] : worlds_) {
    for (auto& op : w->ops) {
      op.work.fail(aborted(w->name(), "communicator stopped"), iterations_.load());
    }
    w->close_all(false);
  }
  worlds_.clear();
}

void Communicator::idle_wait() {
  std::vector<pollfd> fds;
  fds.push_back({waker_->fd(), POLLIN, 0});
  for (auto& [id, w] : worlds_) {
    for (auto& ch : w->channels) {
      if (!ch.conn) continue;
      short ev = 0;
      if (!ch.recvs.empty()) ev |= POLLIN;
      if (!ch.sends.empty() && ch.sends.front()->ready) ev |= POLLOUT;
      if (ev) fds.push_back({ch.conn->fd(), ev, 0});
    }
  }
  ::poll(fds.data(), fds.size(), kIdleBlockMs);
  if (fds[0].revents & POLLIN) waker_->drain();
}

bool Communicator::drain_commands() {
  if (!has_commands_.load(std::memory_order_acquire)) return false;
  std::deque<Command> batch;
  {
    std::lock_guard<std::mutex> lock(cmd_mu_);
    batch.swap(commands_);
    has_commands_.store(false, std::memory_order_release);
  }
  const std::uint64_t iter = iterations_.load(std::memory_order_relaxed);
  for (auto& cmd : batch) {
    if (auto* s = std::get_if<Submission>(&cmd)) {
      auto it = worlds_.find(s->instance);
      if (it == worlds_.end()) {
        auto d = dropped_.find(s->instance);
        s->work.fail(d != dropped_.end() ? d->second
                                         : broken_world(s->work.world(), "world is not active"),
                     iter);
        continue;
      }
      Runtime& w = *it->second;
      ActiveOp op{s->work, std::move(s->kernel), std::nullopt};
      if (op_timeout_) op.deadline = Clock::now() + *op_timeout_;
      op.kernel->start(w);
      w.ops.push_back(std::move(op));
    } else if (auto* a = std::get_if<AddWorld>(&cmd)) {
      std::uint64_t inst = a->info.binding.instance;
      worlds_[inst] = std::make_unique<Runtime>(std::move(a->info));
    } else if (auto* d = std::get_if<DropWorld>(&cmd)) {
      dropped_.insert_or_assign(d->instance, d->cause);
      auto it = worlds_.find(d->instance);
      if (it == worlds_.end()) continue;
      for (auto& op : it->second->ops) op.work.fail(d->cause, iter);
      it->second->close_all(d->graceful);
      worlds_.erase(it);
    } else if (auto* q = std::get_if<Query>(&cmd)) {
      std::vector<std::uint64_t> ids;
      auto it = worlds_.find(q->instance);
      if (it != worlds_.end()) {
        for (auto& ch : it->second->channels) ids.push_back(ch.conn ? ch.conn->id() : 0);
      }
      q->reply->set_value(std::move(ids));
    }
  }
  return true;
}

bool Communicator::step_world(Runtime& w) {
  const std::uint64_t iter = iterations_.load(std::memory_order_relaxed);
  bool progress = false;
  Rank culprit = -1;
  try {
    if (w.info.listener && w.info.listener->has_pending()) {
      while (auto c = w.info.listener->try_accept()) {
        Rank p = c->peer_rank();
        Channel& ch = w.channels.at(p);
        if (ch.conn) continue;  // duplicate dial; keep the first
        ch.conn = std::move(c);
        progress = true;
      }
    }

    for (Channel& ch : w.channels) {
      if (ch.peer == w.rank()) continue;
      culprit = ch.peer;
      if (!ch.conn) {
        if (ch.idle()) continue;
        // The higher rank dials; the lower rank waits for the accept.
        if (w.rank() < ch.peer) continue;
        if (!ch.dial) {
          auto dial = std::make_shared<Dial>();
          ch.dial = dial;
          std::weak_ptr<Waker> waker = waker_;
          Endpoint addr = w.info.peers.at(ch.peer);
          std::string world = w.name();
          Rank me = w.rank();
          std::thread([dial, waker, addr, world, me] {
            try {
              dial->conn = Connection::connect(addr, world, me, Clock::now() + kDialTimeout);
            } catch (const Error& e) {
              dial->error = e;
            }
            dial->done.store(true, std::memory_order_release);
            if (auto s = waker.lock()) s->wake();
          }).detach();
          progress = true;
          continue;
        }
        if (!ch.dial->done.load(std::memory_order_acquire)) continue;
        auto dial = std::move(ch.dial);
        if (dial->error) throw *dial->error;
        if (dial->conn->peer_rank() != ch.peer) {
          throw protocol_error("dialed rank " + std::to_string(ch.peer) + " but rank " +
                                   std::to_string(dial->conn->peer_rank()) + " answered",
                               w.name());
        }
        ch.conn = std::move(dial->conn);
        progress = true;
      }

      while (!ch.sends.empty() && ch.sends.front()->ready) {
        SendSlot& s = *ch.sends.front();
        if (!ch.writing) {
          ch.out = ch.conn->prepare_data(s.payload);
          ch.writing = true;
        }
        if (!ch.conn->write_some(ch.out)) break;
        s.done = true;
        s.finished_at = iter;
        ch.writing = false;
        ch.out = OutgoingFrame();
        ch.sends.pop_front();
        progress = true;
      }

      while (!ch.recvs.empty()) {
        RecvSlot& r = *ch.recvs.front();
        if (!ch.hdr) {
          ch.hdr = ch.conn->read_header_some();
          if (!ch.hdr) break;
          if (ch.hdr->dtype != static_cast<std::uint8_t>(r.dst.dtype()) ||
              ch.hdr->elem_count != r.dst.size()) {
            ch.discarding = true;
          }
        }
        if (ch.discarding) {
          if (!ch.conn->discard_payload_some()) break;
          auto dtype = dtype_from_wire(ch.hdr->dtype);
          r.error = protocol_error(
              "expected " + std::to_string(r.dst.size()) + " x " +
                  std::string(dtype_name(r.dst.dtype())) + " from rank " +
                  std::to_string(ch.peer) + ", got " + std::to_string(ch.hdr->elem_count) +
                  " x " + std::string(dtype ? dtype_name(*dtype) : "?"),
              w.name());
          ch.discarding = false;
        } else if (!ch.conn->read_payload_some(r.dst.mutable_bytes())) {
          break;
        }
        r.done = true;
        r.finished_at = iter;
        ch.hdr.reset();
        ch.recvs.pop_front();
        progress = true;
      }
    }
    culprit = -1;

    for (auto it = w.ops.begin(); it != w.ops.end();) {
      ActiveOp& op = *it;
      bool finished = false;
      try {
        finished = op.kernel->advance();
      } catch (const Error& e) {
        op.work.note_satisfied(op.kernel->last_slot_iteration());
        op.work.fail(e, iter);
        bool clean = op.kernel->quiescent();
        it = w.ops.erase(it);
        progress = true;
        if (!clean) {
          fail_world(w, broken_world(w.name(), e.what()), std::nullopt);
          return true;
        }
        continue;
      }
      if (finished) {
        op.work.note_satisfied(op.kernel->last_slot_iteration());
        op.work.complete(op.kernel->result(), iter);
        it = w.ops.erase(it);
        progress = true;
        continue;
      }
      if (op.deadline && Clock::now() >= *op.deadline) {
        Error e(ErrorKind::kTimeout,
                std::string(op_kind_name(op.work.op())) + " exceeded the operation timeout",
                w.name());
        op.work.fail(e, iter);
        w.ops.erase(it);
        fail_world(w, e, std::nullopt);
        return true;
      }
      ++it;
    }
  } catch (const Error& e) {
    fail_world(w, e, culprit >= 0 ? std::optional<Rank>(culprit) : std::nullopt);
    return true;
  }
  return progress;
}

void Communicator::fail_world(Runtime& w, const Error& cause, std::optional<Rank> culprit) {
  const std::uint64_t iter = iterations_.load(std::memory_order_relaxed);
  std::set<std::uint64_t> direct;
  if (culprit) {
    for (auto& op : w.ops) {
      if (w.channels.at(*culprit).owns(op.work.id())) direct.insert(op.work.id());
    }
  }
  Error broken = cause.kind() == ErrorKind::kBrokenWorld
                     ? cause
                     : broken_world(w.name(), cause.what());
  for (auto& op : w.ops) {
    op.work.fail(direct.count(op.work.id()) ? cause : broken, iter);
  }
  w.ops.clear();
  w.close_all(false);
  w.failed = true;
  dropped_.insert_or_assign(w.info.binding.instance, broken);

  FailureHandler handler;
  {
    std::lock_guard<std::mutex> lock(handler_mu_);
    handler = on_failure_;
  }
  if (handler) handler(w.name(), w.info.binding.instance, cause);
}

}  // namespace mw
