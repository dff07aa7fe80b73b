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

#include "mw/world_manager.hpp"

#include <future>
#include <stdexcept>

namespace mw {

namespace {

constexpr Millis kWaitSlice{200};
constexpr Millis kCleanupTimeout{1000};

std::string world_key(std::string_view name, std::string_view suffix) {
  return "world/" + std::string(name) + "/" + std::string(suffix);
}

std::string epoch_key(std::string_view name, std::uint64_t epoch, std::string_view suffix) {
  return world_key(name, std::to_string(epoch) + "/" + std::string(suffix));
}

std::string rank_key(std::string_view name, std::uint64_t epoch, Rank r,
                     std::string_view suffix) {
  return epoch_key(name, epoch, "rank/" + std::to_string(r) + "/" + std::string(suffix));
}

// The incarnation a joiner picked was abandoned by its rank 0.
struct Restart {};

}  // namespace

std::string_view to_string(WorldState s) {
  switch (s) {
    case WorldState::kInitializing: return "Initializing";
    case WorldState::kReady: return "Ready";
    case WorldState::kBroken: return "Broken";
    case WorldState::kRemoved: return "Removed";
  }
  return "unknown";
}

bool is_legal_transition(WorldState from, WorldState to) {
  using S = WorldState;
  return (from == S::kInitializing && (to == S::kReady || to == S::kBroken)) ||
         (from == S::kReady && (to == S::kBroken || to == S::kRemoved)) ||
         (from == S::kBroken && to == S::kRemoved);
}

struct WorldManager::Entry {
  WorldDescriptor desc;
  WorldState state = WorldState::kInitializing;
  std::uint64_t instance = 0;
  std::uint64_t epoch = 0;
  std::vector<Endpoint> peers;
  std::shared_ptr<Listener> listener;
  std::optional<Error> cause;
  std::shared_ptr<std::atomic<bool>> cancelled;
};

struct WorldManager::Rendezvous {
  std::uint64_t epoch = 0;
  std::vector<Endpoint> peers;
  std::shared_ptr<Listener> listener;
};

WorldManager::WorldManager(ManagerOptions options) : options_(std::move(options)) {
  comm_ = std::make_unique<Communicator>(
      [this](const std::string& name) { return resolve(name); }, options_.poller_mode,
      options_.op_timeout);
  comm_->set_failure_handler(
      [this](const std::string& name, std::uint64_t instance, const Error& cause) {
        on_poller_failure(name, instance, cause);
      });
  if (options_.enable_watchdog) {
    watchdog_ = std::make_unique<Watchdog>(
        options_.watchdog,
        [this](const std::string& name, std::uint64_t epoch, std::optional<Rank> rank) {
          on_suspect(name, epoch, rank);
        },
        options_.clock);
    watchdog_->start();
  }
}

WorldManager::~WorldManager() {
  if (watchdog_) watchdog_->stop();
  comm_->stop();
  std::vector<std::shared_ptr<Listener>> listeners;
  {
    std::lock_guard<std::mutex> lock(mu_);
    for (auto& [name, e] : worlds_) {
      if (e->cancelled) e->cancelled->store(true);
      if (e->listener) listeners.push_back(std::move(e->listener));
    }
  }
  for (auto& l : listeners) l->close();
}

void WorldManager::set_transition_observer(TransitionObserver fn) {
  std::lock_guard<std::mutex> lock(mu_);
  observer_ = std::move(fn);
}

void WorldManager::set_broken_listener(BrokenListener fn) {
  std::lock_guard<std::mutex> lock(mu_);
  broken_listener_ = std::move(fn);
}

void WorldManager::transition(const std::string& name, Entry& e, WorldState to) {
  if (!is_legal_transition(e.state, to)) {
    throw std::logic_error("illegal world transition " + std::string(to_string(e.state)) +
                           " -> " + std::string(to_string(to)));
  }
  WorldState from = e.state;
  e.state = to;
  if (observer_) observer_(name, from, to);
}

// ---------------------------------------------------------------------------
// Rendezvous
// ---------------------------------------------------------------------------

WorldManager::Rendezvous WorldManager::rendezvous(
    const WorldDescriptor& d, Millis timeout,
    const std::shared_ptr<std::atomic<bool>>& cancelled) {
  const auto deadline = Clock::now() + timeout;
  const std::string& n = d.name;
  const Rank me = d.my_rank;
  StoreClient store(d.store_addr, kDefaultStoreTimeout, true);

  Rendezvous rv;
  try {
    rv.listener = Listener::open(d.listen_addr, n, me, d.size);
  } catch (const std::system_error& e) {
    throw protocol_error("cannot listen on " + d.listen_addr.to_string() + ": " + e.what(), n);
  }
  Endpoint published = rv.listener->address();
  if (published.host == "0.0.0.0" || published.host.empty()) published.host = "127.0.0.1";
  const std::string my_addr = published.to_string();

  auto check = [&] {
    if (cancelled->load()) throw aborted(n, "world removed during initialization");
    if (Clock::now() >= deadline) {
      throw Error(ErrorKind::kTimeout,
                  "rendezvous did not complete within " + std::to_string(timeout.count()) +
                      " ms",
                  n);
    }
  };
  auto slice = [&] {
    auto left = std::chrono::duration_cast<Millis>(deadline - Clock::now());
    return std::max(Millis(1), std::min(left, kWaitSlice));
  };
  // Waits for `key` in short slices; `still_valid` runs between slices.
  auto wait_key = [&](const std::string& key, const std::function<void()>& still_valid) {
    for (;;) {
      check();
      try {
        return store.wait(key, slice());
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::kTimeout) throw;
      }
      if (still_valid) still_valid();
    }
  };

  auto resolve_epoch = [&]() -> std::uint64_t {
    for (;;) {
      check();
      auto cur = store.get(world_key(n, "current"));
      if (!cur) {
        try {
          store.wait(world_key(n, "current"), slice());
        } catch (const Error& e) {
          if (e.kind() != ErrorKind::kTimeout) throw;
        }
        continue;
      }
      std::uint64_t c = std::stoull(*cur);
      if (store.get(epoch_key(n, c, "size")) && !store.get(epoch_key(n, c, "ready"))) return c;
      try {
        store.wait(epoch_key(n, c + 1, "size"), slice());
        return c + 1;
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::kTimeout) throw;
      }
    }
  };

  for (;;) {
    std::uint64_t epoch = 0;
    bool claimed = false;
    bool joined = false;
    try {
      if (me == 0) {
        epoch = static_cast<std::uint64_t>(store.add(world_key(n, "epoch"), 1) - 1);
        store.set(epoch_key(n, epoch, "size"), std::to_string(d.size));
        store.set(world_key(n, "current"), std::to_string(epoch));
      } else {
        epoch = resolve_epoch();
      }
      auto size_text = store.get(epoch_key(n, epoch, "size"));
      if (!size_text) throw Restart{};
      int size = std::stoi(*size_text);
      if (size != d.size) {
        throw Error(ErrorKind::kSizeMismatch,
                    "world has size " + *size_text + ", descriptor says " +
                        std::to_string(d.size),
                    n);
      }

      if (store.add(rank_key(n, epoch, me, "claim"), 1) > 1) {
        auto other = store.get(rank_key(n, epoch, me, "addr"));
        if (!other || *other != my_addr) {
          throw Error(ErrorKind::kRankConflict,
                      "rank " + std::to_string(me) + " already claimed" +
                          (other ? " by " + *other : std::string()),
                      n);
        }
      }
      claimed = true;
      store.set(rank_key(n, epoch, me, "addr"), my_addr);
      std::int64_t count = store.add(epoch_key(n, epoch, "joined"), 1);
      joined = true;
      if (count == d.size) store.set(epoch_key(n, epoch, "ready"), "1");

      auto incarnation_alive = [&] {
        if (me != 0 && !store.get(epoch_key(n, epoch, "size"))) throw Restart{};
      };
      wait_key(epoch_key(n, epoch, "ready"), incarnation_alive);
      rv.peers.resize(static_cast<std::size_t>(d.size));
      for (Rank r = 0; r < d.size; ++r) {
        rv.peers[r] = Endpoint::parse(wait_key(rank_key(n, epoch, r, "addr"), nullptr));
      }
      rv.epoch = epoch;
      return rv;
    } catch (...) {
      // Withdraw from this incarnation so that a retry starts clean.
      try {
        StoreClient cleanup(d.store_addr, kCleanupTimeout, false);
        if (claimed) {
          cleanup.erase(rank_key(n, epoch, me, "addr"));
          cleanup.erase(rank_key(n, epoch, me, "claim"));
        }
        if (joined) cleanup.add(epoch_key(n, epoch, "joined"), -1);
        if (me == 0) cleanup.erase(epoch_key(n, epoch, "size"));
      } catch (const Error&) {
      }
      try {
        throw;
      } catch (const Restart&) {
        continue;
      } catch (...) {
        rv.listener->close();
        throw;
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Lifecycle
// ---------------------------------------------------------------------------

void WorldManager::initialize_world(const WorldDescriptor& d, std::optional<Millis> timeout) {
  validate_descriptor(d);
  auto cancelled = std::make_shared<std::atomic<bool>>(false);
  std::uint64_t instance = 0;
  {
    std::lock_guard<std::mutex> lock(mu_);
    auto it = worlds_.find(d.name);
    if (it != worlds_.end() && it->second->state != WorldState::kRemoved) {
      throw Error(ErrorKind::kWorldExists,
                  "world is " + std::string(to_string(it->second->state)) + " locally",
                  d.name);
    }
    auto e = std::make_unique<Entry>();
    e->desc = d;
    e->instance = instance = next_instance_++;
    e->cancelled = cancelled;
    worlds_[d.name] = std::move(e);
  }

  Millis limit = timeout.value_or(options_.init_timeout);
  auto task = std::async(std::launch::async,
                         [this, d, limit, cancelled] { return rendezvous(d, limit, cancelled); });
  auto fail = [&](const Error& err) {
    std::lock_guard<std::mutex> lock(mu_);
    auto it = worlds_.find(d.name);
    if (it != worlds_.end() && it->second->instance == instance &&
        it->second->state == WorldState::kInitializing) {
      it->second->cause = err;
      transition(d.name, *it->second, WorldState::kBroken);
    }
  };
  Rendezvous rv;
  try {
    rv = task.get();
  } catch (const Error& err) {
    fail(err);
    throw;
  } catch (const std::exception& ex) {
    Error err = protocol_error(std::string("rendezvous failed: ") + ex.what(), d.name);
    fail(err);
    throw err;
  }

  std::uint64_t epoch = rv.epoch;
  {
    std::lock_guard<std::mutex> lock(mu_);
    auto it = worlds_.find(d.name);
    Entry* e = it == worlds_.end() ? nullptr : it->second.get();
    if (!e || e->instance != instance || e->state != WorldState::kInitializing) {
      rv.listener->close();
      if (e && e->instance == instance && e->state == WorldState::kBroken && e->cause) {
        throw broken_world(d.name, e->cause->what());
      }
      throw aborted(d.name, "world removed during initialization");
    }
    e->epoch = epoch;
    e->peers = rv.peers;
    e->listener = rv.listener;
    WorldInfo info;
    info.binding = WorldBinding{d.name, instance, d.my_rank, d.size};
    info.peers = rv.peers;
    info.listener = rv.listener;
    // Queued before the status flips, so no submission can overtake it.
    comm_->add_world(std::move(info));
    transition(d.name, *e, WorldState::kReady);
  }

  if (watchdog_) {
    watchdog_->add_world(WatchedWorld{d.name, epoch, d.my_rank, d.size, d.store_addr});
    bool gone;
    {
      std::lock_guard<std::mutex> lock(mu_);
      auto it = worlds_.find(d.name);
      gone = it == worlds_.end() || it->second->instance != instance ||
             it->second->state == WorldState::kRemoved;
    }
    if (gone) watchdog_->remove_world(d.name, epoch);
  }
}

void WorldManager::remove_world(const std::string& name) {
  std::shared_ptr<Listener> listener;
  std::uint64_t instance = 0, epoch = 0;
  Endpoint store;
  bool had_runtime = false;
  {
    std::lock_guard<std::mutex> lock(mu_);
    auto it = worlds_.find(name);
    if (it == worlds_.end()) throw Error(ErrorKind::kUnknownWorld, "no such world", name);
    Entry& e = *it->second;
    switch (e.state) {
      case WorldState::kRemoved:
        return;
      case WorldState::kInitializing:
        e.cancelled->store(true);
        e.cause = aborted(name, "world removed during initialization");
        transition(name, e, WorldState::kBroken);
        transition(name, e, WorldState::kRemoved);
        return;
      case WorldState::kReady:
        had_runtime = true;
        [[fallthrough]];
      case WorldState::kBroken:
        transition(name, e, WorldState::kRemoved);
        break;
    }
    listener = std::move(e.listener);
    instance = e.instance;
    epoch = e.epoch;
    store = e.desc.store_addr;
    e.peers.clear();
  }
  if (had_runtime) comm_->drop_world(instance, aborted(name, "world removed"), true);
  if (watchdog_) watchdog_->remove_world(name, epoch);
  if (listener) listener->close();
  try {
    StoreClient cleanup(store, kCleanupTimeout, false);
    cleanup.erase_prefix(world_key(name, std::to_string(epoch) + "/"));
    cleanup.erase_prefix("heartbeat/" + name + "/" + std::to_string(epoch) + "/");
  } catch (const Error&) {
    // Best effort: the store may already be gone.
  }
}

void WorldManager::mark_broken(const std::string& name, const Error& cause) {
  break_entry(name, std::nullopt, std::nullopt, cause);
}

void WorldManager::on_poller_failure(const std::string& name, std::uint64_t instance,
                                     const Error& cause) {
  break_entry(name, instance, std::nullopt, cause);
}

void WorldManager::on_suspect(const std::string& name, std::uint64_t epoch,
                              std::optional<Rank> rank) {
  Error cause = rank ? Error(ErrorKind::kRemoteWorker,
                             "rank " + std::to_string(*rank) + " missed heartbeats for " +
                                 std::to_string(options_.watchdog.liveness_timeout.count()) +
                                 " ms",
                             name)
                     : Error(ErrorKind::kTimeout,
                             "heartbeats could not be published; suspecting this member",
                             name);
  break_entry(name, std::nullopt, epoch, cause);
}

void WorldManager::break_entry(const std::string& name, std::optional<std::uint64_t> instance,
                               std::optional<std::uint64_t> epoch, const Error& cause) {
  BrokenListener listener;
  std::uint64_t inst = 0;
  bool had_runtime = false;
  {
    std::lock_guard<std::mutex> lock(mu_);
    auto it = worlds_.find(name);
    if (it == worlds_.end()) return;
    Entry& e = *it->second;
    if (instance && e.instance != *instance) return;
    if (epoch && (e.state == WorldState::kInitializing || e.epoch != *epoch)) return;
    if (e.state != WorldState::kReady && e.state != WorldState::kInitializing) return;
    had_runtime = e.state == WorldState::kReady;
    e.cause = cause;
    transition(name, e, WorldState::kBroken);
    inst = e.instance;
    listener = broken_listener_;
  }
  if (had_runtime) comm_->drop_world(inst, broken_world(name, cause.what()), false);
  if (listener) listener(name, cause);
}

// ---------------------------------------------------------------------------
// Queries
// ---------------------------------------------------------------------------

WorldBinding WorldManager::resolve(const std::string& name) const {
  std::lock_guard<std::mutex> lock(mu_);
  auto it = worlds_.find(name);
  if (it == worlds_.end()) throw Error(ErrorKind::kUnknownWorld, "no such world", name);
  const Entry& e = *it->second;
  switch (e.state) {
    case WorldState::kReady:
      return WorldBinding{name, e.instance, e.desc.my_rank, e.desc.size};
    case WorldState::kBroken:
      throw broken_world(name, e.cause ? e.cause->what() : "world is broken");
    case WorldState::kInitializing:
      throw Error(ErrorKind::kUnknownWorld, "world is still initializing", name);
    case WorldState::kRemoved:
      throw Error(ErrorKind::kUnknownWorld, "world was removed", name);
  }
  throw Error(ErrorKind::kUnknownWorld, "no such world", name);
}

WorldState WorldManager::world_status(const std::string& name) const {
  std::lock_guard<std::mutex> lock(mu_);
  auto it = worlds_.find(name);
  if (it == worlds_.end()) throw Error(ErrorKind::kUnknownWorld, "no such world", name);
  return it->second->state;
}

std::optional<Error> WorldManager::broken_cause(const std::string& name) const {
  std::lock_guard<std::mutex> lock(mu_);
  auto it = worlds_.find(name);
  if (it == worlds_.end()) throw Error(ErrorKind::kUnknownWorld, "no such world", name);
  return it->second->cause;
}

std::uint64_t WorldManager::world_epoch(const std::string& name) const {
  std::lock_guard<std::mutex> lock(mu_);
  auto it = worlds_.find(name);
  if (it == worlds_.end()) throw Error(ErrorKind::kUnknownWorld, "no such world", name);
  return it->second->epoch;
}

std::uint64_t WorldManager::world_instance(const std::string& name) const {
  std::lock_guard<std::mutex> lock(mu_);
  auto it = worlds_.find(name);
  if (it == worlds_.end()) throw Error(ErrorKind::kUnknownWorld, "no such world", name);
  return it->second->instance;
}

std::vector<Endpoint> WorldManager::world_peers(const std::string& name) const {
  std::lock_guard<std::mutex> lock(mu_);
  auto it = worlds_.find(name);
  if (it == worlds_.end()) throw Error(ErrorKind::kUnknownWorld, "no such world", name);
  if (it->second->state != WorldState::kReady) return {};
  return it->second->peers;
}

std::vector<std::string> WorldManager::world_names() const {
  std::lock_guard<std::mutex> lock(mu_);
  std::vector<std::string> out;
  for (const auto& [name, e] : worlds_) out.push_back(name);
  return out;
}

}  // namespace mw
