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

// Completion handles for non-blocking operations.

#ifndef MW_WORK_HPP_
#define MW_WORK_HPP_

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "mw/core.hpp"

namespace mw {

enum class OpKind : std::uint8_t {
  kSend,
  kRecv,
  kBroadcast,
  kAllReduce,
  kReduce,
  kAllGather,
  kGather,
  kScatter,
};

std::string_view op_kind_name(OpKind op);

enum class WorkState { kPending, kDone, kFailed };

std::string_view to_string(WorkState s);

// Nothing, one buffer, or one buffer per rank, depending on the operation and
// on whether this rank receives output.
using WorkResult = std::variant<std::monostate, Buffer, std::vector<Buffer>>;

namespace detail {

struct WorkShared {
  std::uint64_t id = 0;
  std::string world;
  OpKind op = OpKind::kSend;

  std::mutex mu;
  std::condition_variable cv;
  WorkState state = WorkState::kPending;
  WorkResult result;
  std::optional<Error> error;
  std::function<void()> on_complete;
  std::atomic<int> notifications{0};
  std::uint64_t completed_at = 0;  // poller iteration
  std::uint64_t satisfied_at = 0;  // iteration of the last byte moved
};

}  // namespace detail

class WorkHandle {
 public:
  WorkHandle() = default;
  static WorkHandle create(std::uint64_t id, std::string world, OpKind op);

  bool valid() const { return s_ != nullptr; }
  std::uint64_t id() const { return s_->id; }
  const std::string& world() const { return s_->world; }
  OpKind op() const { return s_->op; }

  WorkState poll() const;
  // Blocks until terminal or until the timeout passes. A timeout raises
  // Error(kTimeout) and leaves the handle pending. Failed handles rethrow.
  WorkResult wait(std::optional<Millis> timeout = std::nullopt) const;
  std::optional<Error> error() const;

  // Invoked exactly once on the terminal transition, from the completing
  // context, or immediately if already terminal.
  void on_complete(std::function<void()> fn) const;
  int notifications() const { return s_->notifications.load(); }
  std::uint64_t completed_at_iteration() const;
  std::uint64_t satisfied_at_iteration() const;

  // Terminal transitions. Return false if the handle was already terminal.
  bool complete(WorkResult result, std::uint64_t iteration) const;
  bool fail(Error error, std::uint64_t iteration) const;
  void note_satisfied(std::uint64_t iteration) const;

  friend bool operator==(const WorkHandle& a, const WorkHandle& b) { return a.s_ == b.s_; }

 private:
  bool finish(WorkState state, WorkResult result, std::optional<Error> error,
              std::uint64_t iteration) const;

  std::shared_ptr<detail::WorkShared> s_;
};

}  // namespace mw

#endif  // MW_WORK_HPP_
