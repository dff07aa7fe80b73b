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

#include "mw/watchdog.hpp"

#include <algorithm>

#include "mw/wire.hpp"

namespace mw {

WatchdogConfig WatchdogConfig::from_env() {
  WatchdogConfig c;
  if (auto v = env_int("MW_HEARTBEAT_INTERVAL_MS")) c.heartbeat_interval = Millis(*v);
  if (auto v = env_int("MW_LIVENESS_TIMEOUT_MS")) c.liveness_timeout = Millis(*v);
  if (auto v = env_int("MW_SCAN_INTERVAL_MS")) c.scan_interval = Millis(*v);
  return c;
}

void WatchdogConfig::validate() const {
  if (heartbeat_interval.count() <= 0 || liveness_timeout.count() <= 0 ||
      scan_interval.count() <= 0) {
    throw protocol_error("watchdog periods must be positive");
  }
  if (liveness_timeout < 2 * heartbeat_interval) {
    throw protocol_error("liveness timeout must be at least twice the heartbeat interval");
  }
}

std::string heartbeat_key(std::string_view world, std::uint64_t epoch, Rank rank) {
  return "heartbeat/" + std::string(world) + "/" + std::to_string(epoch) + "/" +
         std::to_string(rank);
}

Watchdog::Watchdog(WatchdogConfig config, SuspectFn on_suspect, ClockFn clock)
    : config_(config), on_suspect_(std::move(on_suspect)), clock_(std::move(clock)) {
  config_.validate();
  if (!clock_) clock_ = [] { return Clock::now(); };
}

Watchdog::~Watchdog() { stop(); }

void Watchdog::start() {
  std::lock_guard<std::mutex> lock(mu_);
  if (started_ || stopping_) return;
  started_ = true;
  thread_ = std::thread([this] { run(); });
}

void Watchdog::stop() {
  {
    std::lock_guard<std::mutex> lock(mu_);
    if (stopping_) return;
    stopping_ = true;
  }
  cv_.notify_all();
  if (thread_.joinable()) thread_.join();
}

void Watchdog::add_world(const WatchedWorld& w) {
  {
    std::lock_guard<std::mutex> lock(mu_);
    Entry e;
    e.world = w;
    e.peers.resize(static_cast<std::size_t>(w.size));
    auto now = clock_();
    for (auto& p : e.peers) p.last_change = now;
    worlds_.insert_or_assign(Key{w.name, w.epoch}, std::move(e));
  }
  cv_.notify_all();
}

void Watchdog::remove_world(const std::string& name, std::uint64_t epoch) {
  std::lock_guard<std::mutex> lock(mu_);
  worlds_.erase(Key{name, epoch});
}

StoreClient& Watchdog::client(const Endpoint& store) {
  auto& c = clients_[store.to_string()];
  if (!c) {
    // Short timeout so a slow store cannot stall the schedule.
    Millis t = std::min(config_.heartbeat_interval, config_.scan_interval);
    c = std::make_unique<StoreClient>(store, t, false);
  }
  return *c;
}

void Watchdog::report(Entry& e, std::optional<Rank> rank) {
  if (e.reported) return;
  e.reported = true;
  if (on_suspect_) on_suspect_(e.world.name, e.world.epoch, rank);
}

void Watchdog::publish(Clock::time_point now) {
  std::vector<WatchedWorld> targets;
  {
    std::lock_guard<std::mutex> lock(mu_);
    for (auto& [k, e] : worlds_) targets.push_back(e.world);
  }
  for (const auto& w : targets) {
    bool ok = true;
    try {
      client(w.store).add(heartbeat_key(w.name, w.epoch, w.rank), 1);
      publishes_.fetch_add(1);
    } catch (const Error&) {
      ok = false;
    }
    std::lock_guard<std::mutex> lock(mu_);
    auto it = worlds_.find(Key{w.name, w.epoch});
    if (it == worlds_.end()) continue;
    Entry& e = it->second;
    if (ok) {
      e.publish_failing_since.reset();
    } else {
      if (!e.publish_failing_since) e.publish_failing_since = now;
      if (now - *e.publish_failing_since >= config_.liveness_timeout) report(e, std::nullopt);
    }
  }
}

void Watchdog::scan(Clock::time_point grid) {
  std::vector<WatchedWorld> targets;
  {
    std::lock_guard<std::mutex> lock(mu_);
    for (auto& [k, e] : worlds_) {
      if (!e.reported) targets.push_back(e.world);
    }
  }
  for (const auto& w : targets) {
    std::vector<std::int64_t> seen(static_cast<std::size_t>(w.size), -1);
    bool ok = true;
    try {
      StoreClient& c = client(w.store);
      for (Rank r = 0; r < w.size; ++r) {
        if (r == w.rank) continue;
        auto v = c.get(heartbeat_key(w.name, w.epoch, r));
        if (v) seen[r] = wire::decode_i64(*v);
      }
    } catch (const Error&) {
      ok = false;
    }
    std::lock_guard<std::mutex> lock(mu_);
    auto it = worlds_.find(Key{w.name, w.epoch});
    if (it == worlds_.end()) continue;
    Entry& e = it->second;
    if (!ok) {
      // The store is shared by everyone; its outage says nothing about peers.
      e.scan_failed = true;
      continue;
    }
    if (e.scan_failed) {
      for (auto& p : e.peers) p.last_change = grid;
      e.scan_failed = false;
    }
    for (Rank r = 0; r < w.size; ++r) {
      if (r == w.rank) continue;
      Peer& p = e.peers[r];
      if (seen[r] > p.counter) {
        p.counter = seen[r];
        p.last_change = grid;
      } else if (seen[r] >= 0 && seen[r] < p.counter) {
        violations_.fetch_add(1);
      }
    }
    for (Rank r = 0; r < w.size; ++r) {
      if (r == w.rank) continue;
      if (grid - e.peers[r].last_change >= config_.liveness_timeout) {
        report(e, r);
        break;
      }
    }
  }
  scans_.fetch_add(1);
}

void Watchdog::run() {
  auto next_beat = clock_();
  auto next_scan = next_beat;
  std::size_t known = 0;
  for (;;) {
    {
      std::lock_guard<std::mutex> lock(mu_);
      if (stopping_) return;
      // Publish right away when a world is added so peers see it early.
      if (worlds_.size() > known) next_beat = std::min(next_beat, clock_());
      known = worlds_.size();
    }
    auto now = clock_();
    if (now >= next_beat) {
      publish(now);
      while (next_beat <= now) next_beat += config_.heartbeat_interval;
    }
    now = clock_();
    if (now >= next_scan) {
      auto grid = next_scan;
      while (next_scan + config_.scan_interval <= now) {
        next_scan += config_.scan_interval;
        grid = next_scan;
      }
      scan(grid);
      next_scan += config_.scan_interval;
    }
    std::unique_lock<std::mutex> lock(mu_);
    auto wake = std::min(next_beat, next_scan);
    auto delay = wake - clock_();
    if (delay > Clock::duration::zero()) {
      cv_.wait_for(lock, delay, [&] { return stopping_ || worlds_.size() > known; });
    }
  }
}

}  // namespace mw
