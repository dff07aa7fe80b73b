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

// Registry of worlds this process belongs to: rendezvous, status tracking,
// quarantine of broken worlds and cleanup.
//
// Store keys, per incarnation <e> of a world name:
//   world/<name>/epoch            incarnation counter (rank 0 adds 1)
//   world/<name>/current          latest incarnation started by rank 0
//   world/<name>/<e>/size         world size, set by rank 0
//   world/<name>/<e>/rank/<r>/claim, .../addr
//   world/<name>/<e>/joined       members that published their address
//   world/<name>/<e>/ready        set by the member that completes "joined"
//   heartbeat/<name>/<e>/<r>

#ifndef MW_WORLD_MANAGER_HPP_
#define MW_WORLD_MANAGER_HPP_

#include <atomic>
#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "mw/communicator.hpp"
#include "mw/core.hpp"
#include "mw/watchdog.hpp"

namespace mw {

enum class WorldState { kInitializing, kReady, kBroken, kRemoved };

std::string_view to_string(WorldState s);
bool is_legal_transition(WorldState from, WorldState to);

inline constexpr Millis kDefaultInitTimeout{30000};

struct ManagerOptions {
  WatchdogConfig watchdog = WatchdogConfig::from_env();
  bool enable_watchdog = true;
  Watchdog::ClockFn clock;  // local clock seen by the watchdog
  PollerMode poller_mode = poller_mode_from_env();
  std::optional<Millis> op_timeout = op_timeout_from_env();
  Millis init_timeout = kDefaultInitTimeout;
};

class WorldManager {
 public:
  using TransitionObserver =
      std::function<void(const std::string& world, WorldState from, WorldState to)>;
  using BrokenListener = std::function<void(const std::string& world, const Error& cause)>;

  explicit WorldManager(ManagerOptions options = {});
  ~WorldManager();
  WorldManager(const WorldManager&) = delete;
  WorldManager& operator=(const WorldManager&) = delete;

  // Blocks until the world is Ready. The rendezvous itself runs on its own
  // task, so traffic in other worlds keeps flowing meanwhile.
  void initialize_world(const WorldDescriptor& d, std::optional<Millis> timeout = std::nullopt);
  void remove_world(const std::string& name);
  void mark_broken(const std::string& name, const Error& cause);
  WorldState world_status(const std::string& name) const;

  Communicator& communicator() { return *comm_; }
  Watchdog* watchdog() { return watchdog_.get(); }

  // Introspection for tests and tools.
  std::optional<Error> broken_cause(const std::string& name) const;
  std::uint64_t world_epoch(const std::string& name) const;
  std::uint64_t world_instance(const std::string& name) const;
  std::vector<Endpoint> world_peers(const std::string& name) const;
  std::vector<std::string> world_names() const;
  // Binding of a Ready world; UnknownWorld or BrokenWorld otherwise.
  WorldBinding resolve(const std::string& name) const;

  // Invoked under the registry lock; must not call back into the manager.
  void set_transition_observer(TransitionObserver fn);
  // Invoked once per world incarnation that becomes Broken.
  void set_broken_listener(BrokenListener fn);

 private:
  struct Entry;
  struct Rendezvous;

  Rendezvous rendezvous(const WorldDescriptor& d, Millis timeout,
                        const std::shared_ptr<std::atomic<bool>>& cancelled);
  void transition(const std::string& name, Entry& e, WorldState to);
  void on_poller_failure(const std::string& name, std::uint64_t instance, const Error& cause);
  void on_suspect(const std::string& name, std::uint64_t epoch, std::optional<Rank> rank);
  void break_entry(const std::string& name, std::optional<std::uint64_t> instance,
                   std::optional<std::uint64_t> epoch, const Error& cause);

  ManagerOptions options_;
  mutable std::mutex mu_;
  std::unordered_map<std::string, std::unique_ptr<Entry>> worlds_;
  std::uint64_t next_instance_ = 1;
  TransitionObserver observer_;
  BrokenListener broken_listener_;

  std::unique_ptr<Communicator> comm_;
  std::unique_ptr<Watchdog> watchdog_;
};

}  // namespace mw

#endif  // MW_WORLD_MANAGER_HPP_
