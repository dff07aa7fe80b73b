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

#ifndef MWCTL_COMMON_HPP_
#define MWCTL_COMMON_HPP_

#include <atomic>
#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "mw/mw.h"

namespace mwctl {

using json = nlohmann::json;

inline constexpr int kExitPass = 0;
inline constexpr int kExitFail = 1;
inline constexpr int kExitEnv = 2;

// Thrown for problems with the environment (store unreachable, bad flags).
class EnvError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Thrown when a scenario observes behavior that fails its verdict.
class ScenarioFail : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// CLOCK_MONOTONIC seconds; comparable across processes on one host.
double mono_now();
void sleep_for_seconds(double s);
void sleep_until(double t);

// Throws ScenarioFail carrying mw_last_error() unless s == MW_OK.
void check(mw_status s, const std::string& what);

// Line-delimited JSON records. Every record gets "t" and "role".
class Report {
 public:
  ~Report();
  // Empty path writes to stdout.
  void open(const std::string& path, std::string role);
  void emit(json record);

 private:
  std::mutex mu_;
  std::FILE* out_ = nullptr;
  bool owned_ = false;
  std::string role_;
};

Report& report();

// Flags shared by all scenario commands.
struct Common {
  std::string store;
  std::string out;
  std::string role;
  std::string prefix = "mw";
};
void add_common(CLI::App* cmd, Common& c);
// Resolves --store against MW_STORE_ADDR and the local default.
std::string store_address(const Common& c);

using Runner = std::function<int()>;
// Each subcommand installs its runner into the slot when selected.
void add_store_command(CLI::App& app, Runner& run);
void add_fault_command(CLI::App& app, Runner& run);
void add_join_command(CLI::App& app, Runner& run);
void add_bench_command(CLI::App& app, Runner& run);
void add_rhombus_command(CLI::App& app, Runner& run);
void add_member_command(CLI::App& app, Runner& run);

// ---------------------------------------------------------------------------
// Thin owners for C handles.
// ---------------------------------------------------------------------------

class Store {
 public:
  Store(const std::string& addr, int64_t timeout_ms = -1);
  ~Store();
  Store(const Store&) = delete;
  Store& operator=(const Store&) = delete;

  void set(const std::string& key, const std::string& value);
  bool get(const std::string& key, std::string* value);
  int64_t add(const std::string& key, int64_t delta);
  // False on timeout.
  bool wait(const std::string& key, int64_t timeout_ms, std::string* value = nullptr);
  void remove_prefix(const std::string& prefix);

  // All `n` parties arrive under `name`; throws ScenarioFail on timeout.
  void barrier(const std::string& name, int n, int64_t timeout_ms);

 private:
  mw_store* s_ = nullptr;
};

class Work {
 public:
  Work() = default;
  explicit Work(mw_work* w) : w_(w) {}
  ~Work() { reset(); }
  Work(Work&& o) noexcept : w_(o.w_) { o.w_ = nullptr; }
  Work& operator=(Work&& o) noexcept {
    if (this != &o) {
      reset();
      w_ = o.w_;
      o.w_ = nullptr;
    }
    return *this;
  }

  bool valid() const { return w_ != nullptr; }
  mw_work_state poll() const { return mw_work_poll(w_); }
  mw_status wait(int64_t timeout_ms = -1) { return mw_work_wait(w_, timeout_ms); }
  void reset() {
    if (w_) mw_work_free(w_);
    w_ = nullptr;
  }
  mw_work** out() {
    reset();
    return &w_;
  }

 private:
  mw_work* w_ = nullptr;
};

struct BrokenEvent {
  std::string world;
  mw_status cause;
  std::string detail;
  double t;
};

class Manager {
 public:
  explicit Manager(const mw_manager_options* opts = nullptr);
  ~Manager();
  Manager(const Manager&) = delete;
  Manager& operator=(const Manager&) = delete;

  mw_manager* get() const { return m_; }
  mw_communicator* comm() const { return mw_manager_communicator(m_); }

  mw_status initialize(const std::string& name, int size, int rank, const std::string& store,
                       int64_t timeout_ms = -1);
  mw_world_state state(const std::string& name);
  bool is_broken(const std::string& name);

  // Broken notifications, also emitted as "broken" report records.
  std::vector<BrokenEvent> broken_events();
  std::optional<BrokenEvent> broken_event(const std::string& world);

 private:
  static void on_broken(const char* world, mw_status cause, const char* detail, void* user);

  mw_manager* m_ = nullptr;
  std::mutex mu_;
  std::vector<BrokenEvent> events_;
};

}  // namespace mwctl

#endif  // MWCTL_COMMON_HPP_
