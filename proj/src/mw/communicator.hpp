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

// Non-blocking collective surface driven by one poller thread.

#ifndef MW_COMMUNICATOR_HPP_
#define MW_COMMUNICATOR_HPP_

#include <atomic>
#include <cstdint>
#include <deque>
#include <functional>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#include "mw/collectives.hpp"
#include "mw/core.hpp"
#include "mw/transport.hpp"
#include "mw/work.hpp"

namespace mw {

// kSpin never sleeps. kYield yields on idle iterations and, after a run of
// them, blocks briefly in poll() on the active sockets.
enum class PollerMode { kSpin, kYield };

// MW_POLLER_YIELD=1 selects kYield.
PollerMode poller_mode_from_env();
// MW_OP_DEFAULT_TIMEOUT_MS, or none.
std::optional<Millis> op_timeout_from_env();

// What the poller needs to know about a Ready world.
struct WorldBinding {
  std::string name;
  std::uint64_t instance = 0;  // distinguishes reuses of one name
  Rank rank = 0;
  int size = 0;
};

struct WorldInfo {
  WorldBinding binding;
  std::vector<Endpoint> peers;  // indexed by rank
  std::shared_ptr<Listener> listener;
};

class Communicator {
 public:
  // Resolves a world name to a Ready binding, or throws UnknownWorld or
  // BrokenWorld.
  using Resolver = std::function<WorldBinding(const std::string&)>;
  // Reports a transport or timeout failure detected by the poller.
  using FailureHandler =
      std::function<void(const std::string& world, std::uint64_t instance, const Error&)>;

  Communicator(Resolver resolve, PollerMode mode = poller_mode_from_env(),
               std::optional<Millis> op_timeout = op_timeout_from_env());
  ~Communicator();
  Communicator(const Communicator&) = delete;
  Communicator& operator=(const Communicator&) = delete;

  void set_failure_handler(FailureHandler fn);

  WorkHandle submit(CollectiveCall call);

  WorkHandle isend(const std::string& world, Rank dst, Buffer b);
  WorkHandle irecv(const std::string& world, Rank src, DType dtype, std::size_t count);
  WorkHandle ibroadcast(const std::string& world, Rank root, Buffer b);
  WorkHandle iall_reduce(const std::string& world, Buffer b, ReduceOp op);
  WorkHandle ireduce(const std::string& world, Rank root, Buffer b, ReduceOp op);
  WorkHandle iall_gather(const std::string& world, Buffer b);
  WorkHandle igather(const std::string& world, Rank root, Buffer b);
  WorkHandle iscatter(const std::string& world, Rank root, std::vector<Buffer> parts,
                      DType dtype, std::size_t count);

  // Called by the world manager. Both are queued behind earlier submissions.
  void add_world(WorldInfo info);
  // Fails every pending op of the instance with `cause` and closes its
  // connections, sending BYE if `graceful`.
  void drop_world(std::uint64_t instance, Error cause, bool graceful);

  PollerMode mode() const { return mode_; }
  std::uint64_t iterations() const { return iterations_.load(std::memory_order_relaxed); }
  // Identities of the live connections of one world instance, by peer rank
  // (0 where none exists). Served by the poller; blocks briefly.
  std::vector<std::uint64_t> connection_ids(std::uint64_t instance);
  void stop();

 private:
  struct Submission {
    std::uint64_t instance;
    WorkHandle work;
    std::unique_ptr<Kernel> kernel;
  };
  struct AddWorld {
    WorldInfo info;
  };
  struct DropWorld {
    std::uint64_t instance;
    Error cause;
    bool graceful;
  };
  struct Query {
    std::uint64_t instance;
    std::shared_ptr<std::promise<std::vector<std::uint64_t>>> reply;
  };
  using Command = std::variant<Submission, AddWorld, DropWorld, Query>;

  struct Runtime;
  class Waker;

  void enqueue(Command c);
  void wake();
  void run();
  bool drain_commands();
  bool step_world(Runtime& w);
  void fail_world(Runtime& w, const Error& cause, std::optional<Rank> culprit);
  void idle_wait();

  Resolver resolve_;
  PollerMode mode_;
  std::optional<Millis> op_timeout_;
  std::atomic<std::uint64_t> next_op_id_{1};
  std::atomic<std::uint64_t> iterations_{0};
  std::atomic<bool> stopping_{false};
  std::shared_ptr<Waker> waker_;

  std::mutex cmd_mu_;
  std::deque<Command> commands_;
  std::atomic<bool> has_commands_{false};

  std::mutex handler_mu_;
  FailureHandler on_failure_;

  // Poller-owned state.
  std::map<std::uint64_t, std::unique_ptr<Runtime>> worlds_;
  std::map<std::uint64_t, Error> dropped_;

  std::thread thread_;
};

}  // namespace mw

#endif  // MW_COMMUNICATOR_HPP_
