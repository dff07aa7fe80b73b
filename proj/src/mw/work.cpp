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

#include "mw/work.hpp"

namespace mw {

std::string_view op_kind_name(OpKind op) {
  switch (op) {
    case OpKind::kSend: return "send";
    case OpKind::kRecv: return "recv";
    case OpKind::kBroadcast: return "broadcast";
    case OpKind::kAllReduce: return "all_reduce";
    case OpKind::kReduce: return "reduce";
    case OpKind::kAllGather: return "all_gather";
    case OpKind::kGather: return "gather";
    case OpKind::kScatter: return "scatter";
  }
  return "unknown";
}

std::string_view to_string(WorkState s) {
  switch (s) {
    case WorkState::kPending: return "Pending";
    case WorkState::kDone: return "Done";
    case WorkState::kFailed: return "Failed";
  }
  return "unknown";
}

WorkHandle WorkHandle::create(std::uint64_t id, std::string world, OpKind op) {
  WorkHandle h;
  h.s_ = std::make_shared<detail::WorkShared>();
  h.s_->id = id;
  h.s_->world = std::move(world);
  h.s_->op = op;
  return h;
}

WorkState WorkHandle::poll() const {
  std::lock_guard<std::mutex> lock(s_->mu);
  return s_->state;
}

WorkResult WorkHandle::wait(std::optional<Millis> timeout) const {
  std::unique_lock<std::mutex> lock(s_->mu);
  auto terminal = [&] { return s_->state != WorkState::kPending; };
  if (timeout) {
    if (!s_->cv.wait_for(lock, *timeout, terminal)) {
      throw Error(ErrorKind::kTimeout,
                  std::string(op_kind_name(s_->op)) + " still pending after " +
                      std::to_string(timeout->count()) + " ms",
                  s_->world);
    }
  } else {
    s_->cv.wait(lock, terminal);
  }
  if (s_->state == WorkState::kFailed) throw *s_->error;
  return s_->result;
}

std::optional<Error> WorkHandle::error() const {
  std::lock_guard<std::mutex> lock(s_->mu);
  return s_->error;
}

void WorkHandle::on_complete(std::function<void()> fn) const {
  {
    std::lock_guard<std::mutex> lock(s_->mu);
    if (s_->state == WorkState::kPending) {
      s_->on_complete = std::move(fn);
      return;
    }
  }
  fn();
}

std::uint64_t WorkHandle::completed_at_iteration() const {
  std::lock_guard<std::mutex> lock(s_->mu);
  return s_->completed_at;
}

std::uint64_t WorkHandle::satisfied_at_iteration() const {
  std::lock_guard<std::mutex> lock(s_->mu);
  return s_->satisfied_at;
}

void WorkHandle::note_satisfied(std::uint64_t iteration) const {
  std::lock_guard<std::mutex> lock(s_->mu);
  if (iteration > s_->satisfied_at) s_->satisfied_at = iteration;
}

bool WorkHandle::complete(WorkResult result, std::uint64_t iteration) const {
  return finish(WorkState::kDone, std::move(result), std::nullopt, iteration);
}

bool WorkHandle::fail(Error error, std::uint64_t iteration) const {
  return finish(WorkState::kFailed, {}, std::move(error), iteration);
}

bool WorkHandle::finish(WorkState state, WorkResult result, std::optional<Error> error,
                        std::uint64_t iteration) const {
  std::function<void()> cb;
  {
    std::lock_guard<std::mutex> lock(s_->mu);
    if (s_->state != WorkState::kPending) return false;
    s_->state = state;
    s_->result = std::move(result);
    s_->error = std::move(error);
    s_->completed_at = iteration;
    s_->notifications.fetch_add(1);
    cb = std::move(s_->on_complete);
  }
  s_->cv.notify_all();
  if (cb) cb();
  return true;
}

}  // namespace mw
