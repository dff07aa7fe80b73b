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

// Collective kernels. Each kernel reserves per-peer send and receive slots
// when it starts and then advances as the poller fills them. Slots on one
// channel are served in reservation order, so two ranks that start the same
// sequence of operations exchange frames in a consistent order.
//
// Algorithms are flat: broadcast fans out from the root, reduce fans in and
// folds in rank order, all_reduce is reduce-to-0 followed by broadcast.

#ifndef MW_COLLECTIVES_HPP_
#define MW_COLLECTIVES_HPP_

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "mw/core.hpp"
#include "mw/work.hpp"

namespace mw {

struct CollectiveCall {
  std::string world;
  OpKind op = OpKind::kSend;
  Rank root = 0;  // peer for send/recv
  ReduceOp reduce_op = ReduceOp::kSum;
  // send/broadcast/reduce/all_reduce/all_gather/gather: one buffer.
  // scatter at the root: one part per rank. Unused by recv and by non-root
  // ranks of broadcast and scatter.
  std::vector<Buffer> inputs;
  // Expected shape where this rank only receives (recv, non-root broadcast
  // and scatter).
  DType dtype = DType::kU8;
  std::size_t count = 0;
  // Optional caller-provided destinations; allocated by the kernel if empty.
  std::vector<Buffer> outputs;
};

// Throws Error(kProtocol) if the call cannot be valid for (rank, size).
void validate_call(const CollectiveCall& call, Rank rank, int size);

struct SendSlot {
  std::uint64_t op_id = 0;
  Buffer payload;
  bool ready = false;
  bool done = false;
  std::uint64_t finished_at = 0;  // poller iteration
};

struct RecvSlot {
  std::uint64_t op_id = 0;
  Buffer dst;
  bool done = false;
  std::uint64_t finished_at = 0;
  std::optional<Error> error;  // shape mismatch
};

class SlotQueue {
 public:
  virtual ~SlotQueue() = default;
  virtual std::shared_ptr<SendSlot> reserve_send(Rank peer) = 0;
  virtual std::shared_ptr<RecvSlot> reserve_recv(Rank peer, Buffer dst) = 0;
};

class Kernel {
 public:
  Kernel(std::uint64_t op_id, Rank rank, int size) : op_id_(op_id), rank_(rank), size_(size) {}
  virtual ~Kernel() = default;

  virtual void start(SlotQueue& q) = 0;
  // True once finished. Throws the first slot error.
  virtual bool advance() = 0;
  virtual WorkResult result() = 0;

  // True if no reserved slot is left unfinished. A failed kernel that is not
  // quiescent leaves the peer channels out of step.
  bool quiescent() const;
  // Latest poller iteration in which one of this kernel's slots finished.
  std::uint64_t last_slot_iteration() const;

 protected:
  std::shared_ptr<SendSlot> send(SlotQueue& q, Rank peer, Buffer payload, bool ready = true);
  std::shared_ptr<RecvSlot> recv(SlotQueue& q, Rank peer, Buffer dst);
  // Throws a slot error if any; true when every slot is done.
  bool all_done() const;

  std::uint64_t op_id_;
  Rank rank_;
  int size_;
  std::vector<std::shared_ptr<SendSlot>> sends_;
  std::vector<std::shared_ptr<RecvSlot>> recvs_;
};

std::unique_ptr<Kernel> make_kernel(std::uint64_t op_id, CollectiveCall call, Rank rank,
                                    int size);

// acc[i] = acc[i] op x[i]. Integer sum and product wrap modulo 2^bits.
// min/max pick the first operand unless the second compares strictly
// smaller/greater.
void reduce_into(ReduceOp op, const Buffer& acc, const Buffer& x);

// Copies src into dst unless they share storage. Shapes must match.
void copy_into(const Buffer& dst, const Buffer& src);

}  // namespace mw

#endif  // MW_COLLECTIVES_HPP_
