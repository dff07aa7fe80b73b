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

#include "mw/collectives.hpp"

#include <algorithm>
#include <cstring>

namespace mw {

namespace {

std::string shape_str(DType dtype, std::size_t count) {
  return std::to_string(count) + " x " + std::string(dtype_name(dtype));
}

void expect_shape(const Buffer& b, DType dtype, std::size_t count, const char* what,
                  const std::string& world) {
  if (b.dtype() != dtype || b.size() != count) {
    throw protocol_error(std::string(what) + " has shape " + shape_str(b.dtype(), b.size()) +
                             ", expected " + shape_str(dtype, count),
                         world);
  }
}

template <typename T, typename U>
void fold(ReduceOp op, std::byte* acc, const std::byte* x, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    T a, b;
    std::memcpy(&a, acc + i * sizeof(T), sizeof(T));
    std::memcpy(&b, x + i * sizeof(T), sizeof(T));
    T r = a;
    switch (op) {
      case ReduceOp::kSum:
        if constexpr (std::is_floating_point_v<T>) {
          r = a + b;
        } else {
          r = static_cast<T>(static_cast<U>(static_cast<U>(a) + static_cast<U>(b)));
        }
        break;
      case ReduceOp::kProd:
        if constexpr (std::is_floating_point_v<T>) {
          r = a * b;
        } else {
          r = static_cast<T>(static_cast<U>(static_cast<U>(a) * static_cast<U>(b)));
        }
        break;
      case ReduceOp::kMin:
        r = b < a ? b : a;
        break;
      case ReduceOp::kMax:
        r = a < b ? b : a;
        break;
    }
    std::memcpy(acc + i * sizeof(T), &r, sizeof(T));
  }
}

Buffer out_or_new(std::vector<Buffer>& outputs, std::size_t i, DType dtype, std::size_t n) {
  if (i < outputs.size()) return outputs[i];
  return Buffer(dtype, n);
}

}  // namespace

void reduce_into(ReduceOp op, const Buffer& acc, const Buffer& x) {
  if (!acc.same_shape(x)) throw protocol_error("reduction operands differ in shape");
  std::byte* a = acc.mutable_bytes().data();
  const std::byte* b = x.bytes().data();
  std::size_t n = acc.size();
  switch (acc.dtype()) {
    case DType::kF32: fold<float, float>(op, a, b, n); break;
    case DType::kF64: fold<double, double>(op, a, b, n); break;
    case DType::kI32: fold<std::int32_t, std::uint32_t>(op, a, b, n); break;
    case DType::kI64: fold<std::int64_t, std::uint64_t>(op, a, b, n); break;
    case DType::kU8: fold<std::uint8_t, std::uint32_t>(op, a, b, n); break;
  }
}

void copy_into(const Buffer& dst, const Buffer& src) {
  if (!dst.same_shape(src)) throw protocol_error("copy between buffers of different shape");
  if (dst.data() == src.data() || src.byte_size() == 0) return;
  std::memcpy(dst.mutable_bytes().data(), src.data(), src.byte_size());
}

void validate_call(const CollectiveCall& c, Rank rank, int size) {
  const std::string& w = c.world;
  auto check_rank = [&](Rank r, const char* what) {
    if (r < 0 || r >= size) {
      throw protocol_error(std::string(what) + " " + std::to_string(r) +
                               " out of range for world size " + std::to_string(size),
                           w);
    }
  };
  auto need_inputs = [&](std::size_t n) {
    if (c.inputs.size() != n) {
      throw protocol_error(std::string(op_kind_name(c.op)) + " takes " + std::to_string(n) +
                               " input buffer(s), got " + std::to_string(c.inputs.size()),
                           w);
    }
  };
  auto need_outputs = [&](std::size_t n, DType dtype, std::size_t count) {
    if (c.outputs.empty()) return;
    if (c.outputs.size() != n) {
      throw protocol_error(std::string(op_kind_name(c.op)) + " takes " + std::to_string(n) +
                               " output buffer(s), got " + std::to_string(c.outputs.size()),
                           w);
    }
    for (const auto& b : c.outputs) expect_shape(b, dtype, count, "output buffer", w);
  };

  switch (c.op) {
    case OpKind::kSend:
    case OpKind::kRecv:
      check_rank(c.root, "peer rank");
      if (c.root == rank) throw protocol_error("point-to-point peer is the local rank", w);
      if (c.op == OpKind::kSend) {
        need_inputs(1);
        need_outputs(0, DType::kU8, 0);
      } else {
        need_inputs(0);
        need_outputs(1, c.dtype, c.count);
      }
      return;
    case OpKind::kBroadcast:
      check_rank(c.root, "root");
      if (rank == c.root) {
        need_inputs(1);
        need_outputs(1, c.inputs[0].dtype(), c.inputs[0].size());
      } else {
        need_outputs(1, c.dtype, c.count);
      }
      return;
    case OpKind::kAllReduce:
    case OpKind::kReduce:
      if (c.op == OpKind::kReduce) check_rank(c.root, "root");
      need_inputs(1);
      if (c.op == OpKind::kAllReduce || rank == c.root) {
        need_outputs(1, c.inputs[0].dtype(), c.inputs[0].size());
      }
      return;
    case OpKind::kAllGather:
    case OpKind::kGather:
      if (c.op == OpKind::kGather) check_rank(c.root, "root");
      need_inputs(1);
      if (c.op == OpKind::kAllGather || rank == c.root) {
        need_outputs(static_cast<std::size_t>(size), c.inputs[0].dtype(), c.inputs[0].size());
      }
      return;
    case OpKind::kScatter:
      check_rank(c.root, "root");
      if (rank == c.root) {
        if (c.inputs.size() != static_cast<std::size_t>(size)) {
          throw protocol_error("scatter needs one part per rank: got " +
                                   std::to_string(c.inputs.size()) + " for world size " +
                                   std::to_string(size),
                               w);
        }
        for (const auto& p : c.inputs) {
          expect_shape(p, c.inputs[0].dtype(), c.inputs[0].size(), "scatter part", w);
        }
        need_outputs(1, c.inputs[0].dtype(), c.inputs[0].size());
      } else {
        need_outputs(1, c.dtype, c.count);
      }
      return;
  }
}

// ---------------------------------------------------------------------------
// Kernel base
// ---------------------------------------------------------------------------

bool Kernel::quiescent() const {
  for (const auto& s : sends_) {
    if (!s->done) return false;
  }
  for (const auto& r : recvs_) {
    if (!r->done) return false;
  }
  return true;
}

std::uint64_t Kernel::last_slot_iteration() const {
  std::uint64_t it = 0;
  for (const auto& s : sends_) it = std::max(it, s->finished_at);
  for (const auto& r : recvs_) it = std::max(it, r->finished_at);
  return it;
}

std::shared_ptr<SendSlot> Kernel::send(SlotQueue& q, Rank peer, Buffer payload, bool ready) {
  auto s = q.reserve_send(peer);
  s->op_id = op_id_;
  s->payload = std::move(payload);
  s->ready = ready;
  sends_.push_back(s);
  return s;
}

std::shared_ptr<RecvSlot> Kernel::recv(SlotQueue& q, Rank peer, Buffer dst) {
  auto r = q.reserve_recv(peer, dst);
  r->op_id = op_id_;
  recvs_.push_back(r);
  return r;
}

bool Kernel::all_done() const {
  bool done = true;
  for (const auto& r : recvs_) {
    if (r->error) throw *r->error;
    done = done && r->done;
  }
  for (const auto& s : sends_) done = done && s->done;
  return done;
}

namespace {

class SendKernel : public Kernel {
 public:
  SendKernel(std::uint64_t id, CollectiveCall c, Rank rank, int size)
      : Kernel(id, rank, size), c_(std::move(c)) {}
  void start(SlotQueue& q) override { send(q, c_.root, c_.inputs[0]); }
  bool advance() override { return all_done(); }
  WorkResult result() override { return {}; }

 private:
  CollectiveCall c_;
};

class RecvKernel : public Kernel {
 public:
  RecvKernel(std::uint64_t id, CollectiveCall c, Rank rank, int size)
      : Kernel(id, rank, size), c_(std::move(c)) {}
  void start(SlotQueue& q) override {
    dst_ = out_or_new(c_.outputs, 0, c_.dtype, c_.count);
    recv(q, c_.root, dst_);
  }
  bool advance() override { return all_done(); }
  WorkResult result() override { return dst_; }

 private:
  CollectiveCall c_;
  Buffer dst_;
};

class BroadcastKernel : public Kernel {
 public:
  BroadcastKernel(std::uint64_t id, CollectiveCall c, Rank rank, int size)
      : Kernel(id, rank, size), c_(std::move(c)) {}
  void start(SlotQueue& q) override {
    if (rank_ == c_.root) {
      for (Rank p = 0; p < size_; ++p) {
        if (p != rank_) send(q, p, c_.inputs[0]);
      }
      out_ = c_.inputs[0];
      if (!c_.outputs.empty()) {
        copy_into(c_.outputs[0], out_);
        out_ = c_.outputs[0];
      }
    } else {
      out_ = out_or_new(c_.outputs, 0, c_.dtype, c_.count);
      recv(q, c_.root, out_);
    }
  }
  bool advance() override { return all_done(); }
  WorkResult result() override { return out_; }

 private:
  CollectiveCall c_;
  Buffer out_;
};

// Shared by reduce and all_reduce: the root receives every other rank's
// contribution and folds all of them in rank order.
class ReduceKernel : public Kernel {
 public:
  ReduceKernel(std::uint64_t id, CollectiveCall c, Rank rank, int size, bool all)
      : Kernel(id, rank, size), c_(std::move(c)), all_(all) {
    if (all_) c_.root = 0;
  }

  void start(SlotQueue& q) override {
    const Buffer& in = c_.inputs[0];
    if (rank_ == c_.root) {
      parts_.resize(static_cast<std::size_t>(size_));
      for (Rank p = 0; p < size_; ++p) {
        if (p == rank_) {
          parts_[p] = in;
        } else {
          parts_[p] = Buffer(in.dtype(), in.size());
          recv(q, p, parts_[p]);
        }
      }
      if (all_) {
        for (Rank p = 0; p < size_; ++p) {
          if (p != rank_) out_slots_.push_back(send(q, p, Buffer(), false));
        }
      }
    } else {
      send(q, c_.root, in);
      if (all_) {
        out_ = out_or_new(c_.outputs, 0, in.dtype(), in.size());
        recv(q, c_.root, out_);
      }
    }
  }

  bool advance() override {
    if (rank_ == c_.root && !folded_) {
      for (const auto& r : recvs_) {
        if (r->error) throw *r->error;
        if (!r->done) return false;
      }
      const Buffer& in = c_.inputs[0];
      out_ = out_or_new(c_.outputs, 0, in.dtype(), in.size());
      copy_into(out_, parts_[0]);
      for (std::size_t p = 1; p < parts_.size(); ++p) reduce_into(c_.reduce_op, out_, parts_[p]);
      parts_.clear();
      for (auto& s : out_slots_) {
        s->payload = out_;
        s->ready = true;
      }
      folded_ = true;
    }
    return all_done();
  }

  WorkResult result() override {
    if (all_ || rank_ == c_.root) return out_;
    return {};
  }

 private:
  CollectiveCall c_;
  bool all_;
  bool folded_ = false;
  std::vector<Buffer> parts_;
  std::vector<std::shared_ptr<SendSlot>> out_slots_;
  Buffer out_;
};

class GatherKernel : public Kernel {
 public:
  GatherKernel(std::uint64_t id, CollectiveCall c, Rank rank, int size, bool all)
      : Kernel(id, rank, size), c_(std::move(c)), all_(all) {}

  void start(SlotQueue& q) override {
    const Buffer& in = c_.inputs[0];
    bool receiver = all_ || rank_ == c_.root;
    if (receiver) {
      for (Rank p = 0; p < size_; ++p) {
        Buffer b = out_or_new(c_.outputs, static_cast<std::size_t>(p), in.dtype(), in.size());
        if (p == rank_) {
          copy_into(b, in);
        } else {
          recv(q, p, b);
        }
        list_.push_back(b);
      }
    }
    if (all_) {
      for (Rank p = 0; p < size_; ++p) {
        if (p != rank_) send(q, p, in);
      }
    } else if (rank_ != c_.root) {
      send(q, c_.root, in);
    }
  }
  bool advance() override { return all_done(); }
  WorkResult result() override {
    if (all_ || rank_ == c_.root) return list_;
    return {};
  }

 private:
  CollectiveCall c_;
  bool all_;
  std::vector<Buffer> list_;
};

class ScatterKernel : public Kernel {
 public:
  ScatterKernel(std::uint64_t id, CollectiveCall c, Rank rank, int size)
      : Kernel(id, rank, size), c_(std::move(c)) {}
  void start(SlotQueue& q) override {
    if (rank_ == c_.root) {
      for (Rank p = 0; p < size_; ++p) {
        if (p != rank_) send(q, p, c_.inputs[p]);
      }
      out_ = c_.inputs[rank_];
      if (!c_.outputs.empty()) {
        copy_into(c_.outputs[0], out_);
        out_ = c_.outputs[0];
      }
    } else {
      out_ = out_or_new(c_.outputs, 0, c_.dtype, c_.count);
      recv(q, c_.root, out_);
    }
  }
  bool advance() override { return all_done(); }
  WorkResult result() override { return out_; }

 private:
  CollectiveCall c_;
  Buffer out_;
};

}  // namespace

std::unique_ptr<Kernel> make_kernel(std::uint64_t op_id, CollectiveCall call, Rank rank,
                                    int size) {
  switch (call.op) {
    case OpKind::kSend:
      return std::make_unique<SendKernel>(op_id, std::move(call), rank, size);
    case OpKind::kRecv:
      return std::make_unique<RecvKernel>(op_id, std::move(call), rank, size);
    case OpKind::kBroadcast:
      return std::make_unique<BroadcastKernel>(op_id, std::move(call), rank, size);
    case OpKind::kAllReduce:
      return std::make_unique<ReduceKernel>(op_id, std::move(call), rank, size, true);
    case OpKind::kReduce:
      return std::make_unique<ReduceKernel>(op_id, std::move(call), rank, size, false);
    case OpKind::kAllGather:
      return std::make_unique<GatherKernel>(op_id, std::move(call), rank, size, true);
    case OpKind::kGather:
      return std::make_unique<GatherKernel>(op_id, std::move(call), rank, size, false);
    case OpKind::kScatter:
      return std::make_unique<ScatterKernel>(op_id, std::move(call), rank, size);
  }
  throw protocol_error("unknown operation");
}

}  // namespace mw
