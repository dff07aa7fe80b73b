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

// Heartbeat publisher and staleness scanner.
//
// Each member increments "heartbeat/<world>/<epoch>/<rank>" every heartbeat
// interval and reads its peers' counters every scan interval. A peer is
// suspect once its counter has not changed for the liveness timeout, measured
// on the local clock from the scan that last saw it change. Scans run on a
// fixed grid and use the grid time as the observation time, so with the
// defaults a death is reported between 2.0 s and 3.5 s after it happens.

#ifndef MW_WATCHDOG_HPP_
#define MW_WATCHDOG_HPP_

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "mw/core.hpp"
#include "mw/store.hpp"

namespace mw {

struct WatchdogConfig {
  Millis heartbeat_interval{1000};
  Millis liveness_timeout{3000};
  Millis scan_interval{500};

  // Defaults overridden by MW_HEARTBEAT_INTERVAL_MS, MW_LIVENESS_TIMEOUT_MS
  // and MW_SCAN_INTERVAL_MS.
  static WatchdogConfig from_env();
  // Throws Error(kProtocol) unless liveness >= 2 x heartbeat interval and all
  // periods are positive.
  void validate() const;
};

std::string heartbeat_key(std::string_view world, std::uint64_t epoch, Rank rank);

struct WatchedWorld {
  std::string name;
  std::uint64_t epoch = 0;
  Rank rank = 0;
  int size = 0;
  Endpoint store;
};

class Watchdog {
 public:
  // `rank` is empty when the member suspects itself (store unreachable).
  using SuspectFn = std::function<void(const std::string& world, std::uint64_t epoch,
                                       std::optional<Rank> rank)>;
  using ClockFn = std::function<Clock::time_point()>;

  Watchdog(WatchdogConfig config, SuspectFn on_suspect, ClockFn clock = nullptr);
  ~Watchdog();
  Watchdog(const Watchdog&) = delete;
  Watchdog& operator=(const Watchdog&) = delete;

  void start();
  // Idempotent. The last heartbeat stays in the store.
  void stop();

  void add_world(const WatchedWorld& w);
  void remove_world(const std::string& name, std::uint64_t epoch);

  const WatchdogConfig& config() const { return config_; }
  std::uint64_t scans() const { return scans_.load(); }
  std::uint64_t publishes() const { return publishes_.load(); }
  std::uint64_t monotonicity_violations() const { return violations_.load(); }

 private:
  struct Peer {
    std::int64_t counter = -1;  // -1 until first seen
    Clock::time_point last_change;
  };
  struct Entry {
    WatchedWorld world;
    std::vector<Peer> peers;
    bool reported = false;
    bool scan_failed = false;
    std::optional<Clock::time_point> publish_failing_since;
  };
  using Key = std::pair<std::string, std::uint64_t>;

  void run();
  void publish(Clock::time_point now);
  void scan(Clock::time_point grid);
  StoreClient& client(const Endpoint& store);
  void report(Entry& e, std::optional<Rank> rank);

  WatchdogConfig config_;
  SuspectFn on_suspect_;
  ClockFn clock_;

  std::mutex mu_;
  std::condition_variable cv_;
  bool stopping_ = false;
  bool started_ = false;
  std::map<Key, Entry> worlds_;

  std::map<std::string, std::unique_ptr<StoreClient>> clients_;  // watchdog thread only
  std::atomic<std::uint64_t> scans_{0};
  std::atomic<std::uint64_t> publishes_{0};
  std::atomic<std::uint64_t> violations_{0};
  std::thread thread_;
};

}  // namespace mw

#endif  // MW_WATCHDOG_HPP_
