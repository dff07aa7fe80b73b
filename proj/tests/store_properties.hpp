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

// Randomized store properties, shared by the unit tests and the acceptance
// run. Each returns an empty string on success or a description of the
// first violation.

#ifndef MW_TESTS_STORE_PROPERTIES_HPP_
#define MW_TESTS_STORE_PROPERTIES_HPP_

#include <latch>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "linearizability.hpp"
#include "mw/store.hpp"
#include "mw/wire.hpp"

namespace mw::testing {

inline double seconds_now() {
  return std::chrono::duration<double>(Clock::now().time_since_epoch()).count();
}

// n clients, each on its own connection, add +1 k times to one key.
inline std::string concurrent_add(const Endpoint& store, int n, int k, const std::string& key) {
  std::latch start(n);
  std::vector<std::thread> ts;
  std::vector<std::string> errors(n);
  for (int c = 0; c < n; ++c) {
    ts.emplace_back([&, c] {
      try {
        StoreClient client(store);
        client.get("warmup");  // connect before the race starts
        start.arrive_and_wait();
        for (int i = 0; i < k; ++i) client.add(key, 1);
      } catch (const std::exception& e) {
        errors[c] = e.what();
      }
    });
  }
  for (auto& t : ts) t.join();
  for (const auto& e : errors) {
    if (!e.empty()) return e;
  }
  StoreClient check(store);
  std::int64_t final_value = check.add(key, 0);
  if (final_value != static_cast<std::int64_t>(n) * k) {
    return "n=" + std::to_string(n) + " k=" + std::to_string(k) + ": final " +
           std::to_string(final_value);
  }
  return {};
}

// A waiter and a setter race on a fresh key; the waiter must always get the
// value, whichever side reaches the server first.
inline std::string wait_set_race(const Endpoint& store, int trials, std::uint64_t seed,
                                 const std::string& prefix) {
  std::mt19937_64 rng(seed);
  StoreClient waiter(store), setter(store);
  for (int t = 0; t < trials; ++t) {
    std::string key = prefix + std::to_string(t);
    std::string value = "v" + std::to_string(rng());
    int delay_us = static_cast<int>(rng() % 3000);
    std::string got, error;
    std::thread w([&] {
      try {
        got = waiter.wait(key, Millis(5000));
      } catch (const std::exception& e) {
        error = e.what();
      }
    });
    std::this_thread::sleep_for(std::chrono::microseconds(delay_us));
    setter.set(key, value);
    w.join();
    if (!error.empty()) return "trial " + std::to_string(t) + ": " + error;
    if (got != value) return "trial " + std::to_string(t) + ": wrong value";
  }
  return {};
}

// Three clients issue three random set/add/get operations each against one
// fresh key, concurrently; every recorded history must be linearizable.
// Runs one history: client c issues plan[c] in order, all clients released
// together. Records times and results in `plan`; returns a client error.
inline std::string run_history(std::vector<std::unique_ptr<StoreClient>>& clients,
                               const std::string& key,
                               std::vector<std::vector<HistoryOp>>& plan) {
  const int n = static_cast<int>(plan.size());
  std::latch start(n);
  std::vector<std::string> errors(n);
  std::vector<std::thread> ts;
  for (int c = 0; c < n; ++c) {
    ts.emplace_back([&, c] {
      start.arrive_and_wait();
      try {
        for (auto& op : plan[c]) {
          op.invoked = seconds_now();
          switch (op.op) {
            case KeyOp::kSet:
              clients[c]->set(key, wire::encode_i64(op.arg));
              break;
            case KeyOp::kAdd:
              op.result = clients[c]->add(key, op.arg);
              break;
            case KeyOp::kGet:
              if (auto v = clients[c]->get(key)) op.result = wire::decode_i64(*v);
              break;
          }
          op.responded = seconds_now();
        }
      } catch (const std::exception& e) {
        errors[c] = e.what();
      }
    });
  }
  for (auto& t : ts) t.join();
  for (const auto& e : errors) {
    if (!e.empty()) return e;
  }
  return {};
}

inline std::string random_histories(const Endpoint& store, int histories, std::uint64_t seed,
                                    const std::string& prefix, int* checked_ops = nullptr) {
  std::mt19937_64 rng(seed);
  constexpr int kClients = 3, kOps = 3;
  std::vector<std::unique_ptr<StoreClient>> clients;
  for (int c = 0; c < kClients; ++c) clients.push_back(std::make_unique<StoreClient>(store));
  for (int h = 0; h < histories; ++h) {
    std::string key = prefix + std::to_string(h);
    std::vector<std::vector<HistoryOp>> plan(kClients);
    for (auto& ops : plan) {
      for (int i = 0; i < kOps; ++i) {
        HistoryOp op;
        int pick = static_cast<int>(rng() % 3);
        op.op = pick == 0 ? KeyOp::kSet : pick == 1 ? KeyOp::kAdd : KeyOp::kGet;
        op.arg = static_cast<std::int64_t>(rng() % 4) - (op.op == KeyOp::kAdd ? 1 : 0);
        ops.push_back(op);
      }
    }
    if (auto err = run_history(clients, key, plan); !err.empty()) return err;
    std::vector<HistoryOp> all;
    for (auto& ops : plan) all.insert(all.end(), ops.begin(), ops.end());
    if (checked_ops) *checked_ops += static_cast<int>(all.size());
    if (!linearizable(all)) return "history " + std::to_string(h) + " is not linearizable";
  }
  return {};
}

// Every two-client plan of two operations each drawn from
// {set 1, set 2, add 1, get}: 4^4 histories, each run `repeats` times.
inline std::string enumerated_histories(const Endpoint& store, const std::string& prefix,
                                        int repeats, int* histories = nullptr) {
  const HistoryOp menu[] = {{KeyOp::kSet, 1}, {KeyOp::kSet, 2}, {KeyOp::kAdd, 1},
                            {KeyOp::kGet, 0}};
  std::vector<std::unique_ptr<StoreClient>> clients;
  for (int c = 0; c < 2; ++c) clients.push_back(std::make_unique<StoreClient>(store));
  for (int code = 0; code < 256; ++code) {
    for (int r = 0; r < repeats; ++r) {
      std::vector<std::vector<HistoryOp>> plan(2);
      for (int i = 0; i < 4; ++i) plan[i / 2].push_back(menu[(code >> (2 * i)) & 3]);
      std::string key = prefix + std::to_string(code) + "/" + std::to_string(r);
      if (auto err = run_history(clients, key, plan); !err.empty()) return err;
      std::vector<HistoryOp> all;
      for (auto& ops : plan) all.insert(all.end(), ops.begin(), ops.end());
      if (!linearizable(all)) return "plan " + std::to_string(code) + " is not linearizable";
      if (histories) ++*histories;
    }
  }
  return {};
}

}  // namespace mw::testing

#endif  // MW_TESTS_STORE_PROPERTIES_HPP_
