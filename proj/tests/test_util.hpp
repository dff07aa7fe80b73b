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

// Shared helpers for the in-process tests: a local store, groups of
// managers, and thread fan-out.

#ifndef MW_TESTS_TEST_UTIL_HPP_
#define MW_TESTS_TEST_UTIL_HPP_

#include <exception>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "mw/store.hpp"
#include "mw/world_manager.hpp"

namespace mw::testing {

struct LocalStore {
  LocalStore() : server(StoreServer::serve(Endpoint{"127.0.0.1", 0})), addr(server->address()) {}
  std::unique_ptr<StoreServer> server;
  Endpoint addr;
};

inline ManagerOptions test_options(bool watchdog = false) {
  ManagerOptions o;
  o.enable_watchdog = watchdog;
  o.poller_mode = PollerMode::kYield;
  o.op_timeout = std::nullopt;
  o.init_timeout = Millis(10000);
  o.watchdog = WatchdogConfig{};
  return o;
}

// Runs f(i) for i in [0, n) on separate threads and rethrows the first
// exception.
inline void run_parallel(int n, const std::function<void(int)>& f) {
  std::mutex mu;
  std::exception_ptr first;
  std::vector<std::thread> threads;
  for (int i = 0; i < n; ++i) {
    threads.emplace_back([&, i] {
      try {
        f(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(mu);
        if (!first) first = std::current_exception();
      }
    });
  }
  for (auto& t : threads) t.join();
  if (first) std::rethrow_exception(first);
}

inline WorldDescriptor descriptor(const std::string& name, int size, Rank rank,
                                  const Endpoint& store) {
  WorldDescriptor d;
  d.name = name;
  d.size = size;
  d.my_rank = rank;
  d.store_addr = store;
  return d;
}

// One manager per rank, each with its own poller, as separate processes
// would have.
class Group {
 public:
  Group(int n, const Endpoint& store, ManagerOptions options = test_options()) : store_(store) {
    for (int i = 0; i < n; ++i) managers_.push_back(std::make_unique<WorldManager>(options));
  }

  int size() const { return static_cast<int>(managers_.size()); }
  WorldManager& operator[](int i) { return *managers_.at(i); }
  Communicator& comm(int i) { return managers_.at(i)->communicator(); }

  // Forms `name` over the given members (default: all); member k gets rank k.
  void form(const std::string& name, std::vector<int> members = {},
            std::optional<Millis> timeout = std::nullopt) {
    if (members.empty()) {
      for (int i = 0; i < size(); ++i) members.push_back(i);
    }
    int n = static_cast<int>(members.size());
    run_parallel(n, [&](int r) {
      managers_.at(members[r])->initialize_world(descriptor(name, n, r, store_), timeout);
    });
  }

 private:
  Endpoint store_;
  std::vector<std::unique_ptr<WorldManager>> managers_;
};

}  // namespace mw::testing

#endif  // MW_TESTS_TEST_UTIL_HPP_
