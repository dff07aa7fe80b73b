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

#include "common.hpp"

#include <time.h>

#include <cstdio>
#include <cstdlib>
#include <thread>

namespace mwctl {

double mono_now() {
  timespec ts;
  clock_gettime(CLOCK_MONOTONIC, &ts);
  return static_cast<double>(ts.tv_sec) + static_cast<double>(ts.tv_nsec) * 1e-9;
}

void sleep_for_seconds(double s) {
  if (s > 0) std::this_thread::sleep_for(std::chrono::duration<double>(s));
}

void sleep_until(double t) { sleep_for_seconds(t - mono_now()); }

void check(mw_status s, const std::string& what) {
  if (s == MW_OK) return;
  throw ScenarioFail(what + ": " + mw_last_error());
}

// ---------------------------------------------------------------------------

Report::~Report() {
  if (owned_ && out_) std::fclose(out_);
}

void Report::open(const std::string& path, std::string role) {
  std::lock_guard<std::mutex> lock(mu_);
  role_ = std::move(role);
  if (path.empty()) {
    out_ = stdout;
    return;
  }
  out_ = std::fopen(path.c_str(), "w");
  if (!out_) throw EnvError("cannot open report file " + path);
  owned_ = true;
}

void Report::emit(json record) {
  record["t"] = mono_now();
  if (!role_.empty()) record["role"] = role_;
  std::string line = record.dump();
  std::lock_guard<std::mutex> lock(mu_);
  std::FILE* f = out_ ? out_ : stdout;
  std::fprintf(f, "%s\n", line.c_str());
  std::fflush(f);
}

Report& report() {
  static Report r;
  return r;
}

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--store", c.store, "store address host:port (default MW_STORE_ADDR)");
  cmd->add_option("--out", c.out, "report path (default stdout)");
  cmd->add_option("--prefix", c.prefix, "namespace for world names and store keys");
}

std::string store_address(const Common& c) {
  if (!c.store.empty()) return c.store;
  if (const char* e = std::getenv("MW_STORE_ADDR"); e && *e) return e;
  return "127.0.0.1:29500";
}

// ---------------------------------------------------------------------------

Store::Store(const std::string& addr, int64_t timeout_ms) {
  if (mw_store_connect(addr.c_str(), timeout_ms, &s_) != MW_OK) {
    throw EnvError("cannot reach store at " + addr + ": " + mw_last_error());
  }
}

Store::~Store() { mw_store_close(s_); }

void Store::set(const std::string& key, const std::string& value) {
  check(mw_store_set(s_, key.c_str(), value.data(), value.size()), "store set " + key);
}

bool Store::get(const std::string& key, std::string* value) {
  std::string buf(256, '\0');
  size_t len = 0;
  mw_status s = mw_store_get(s_, key.c_str(), buf.data(), buf.size(), &len);
  if (s == MW_ERR_NOT_FOUND) return false;
  if (s == MW_ERR_INVALID_ARGUMENT && len > buf.size()) {
    buf.resize(len);
    s = mw_store_get(s_, key.c_str(), buf.data(), buf.size(), &len);
  }
  check(s, "store get " + key);
  if (value) *value = buf.substr(0, len);
  return true;
}

int64_t Store::add(const std::string& key, int64_t delta) {
  int64_t v = 0;
  check(mw_store_add(s_, key.c_str(), delta, &v), "store add " + key);
  return v;
}

bool Store::wait(const std::string& key, int64_t timeout_ms, std::string* value) {
  std::string buf(256, '\0');
  size_t len = 0;
  mw_status s = mw_store_wait(s_, key.c_str(), timeout_ms, buf.data(), buf.size(), &len);
  if (s == MW_ERR_TIMEOUT) return false;
  if (s == MW_ERR_INVALID_ARGUMENT && len > buf.size()) {
    // Present now; fetch it in full.
    return get(key, value);
  }
  check(s, "store wait " + key);
  if (value) *value = buf.substr(0, len);
  return true;
}

void Store::remove_prefix(const std::string& prefix) {
  check(mw_store_delete_prefix(s_, prefix.c_str()), "store delete_prefix " + prefix);
}

void Store::barrier(const std::string& name, int n, int64_t timeout_ms) {
  if (add(name + "/count", 1) == n) set(name + "/done", "1");
  if (!wait(name + "/done", timeout_ms)) throw ScenarioFail("barrier " + name + " timed out");
}

// ---------------------------------------------------------------------------

Manager::Manager(const mw_manager_options* opts) {
  check(mw_manager_create(opts, &m_), "manager create");
  mw_set_broken_callback(m_, &Manager::on_broken, this);
}

Manager::~Manager() {
  mw_set_broken_callback(m_, nullptr, nullptr);
  mw_manager_destroy(m_);
}

void Manager::on_broken(const char* world, mw_status cause, const char* detail, void* user) {
  auto* self = static_cast<Manager*>(user);
  BrokenEvent ev{world, cause, detail, mono_now()};
  {
    std::lock_guard<std::mutex> lock(self->mu_);
    self->events_.push_back(ev);
  }
  report().emit({{"event", "broken"},
                 {"world", ev.world},
                 {"cause", mw_status_name(cause)},
                 {"detail", ev.detail},
                 {"at", ev.t}});
}

mw_status Manager::initialize(const std::string& name, int size, int rank,
                              const std::string& store, int64_t timeout_ms) {
  mw_world_desc d{name.c_str(), size, rank, store.c_str(), nullptr};
  return mw_initialize_world(m_, &d, timeout_ms);
}

mw_world_state Manager::state(const std::string& name) {
  mw_world_state st = MW_WORLD_REMOVED;
  if (mw_world_status(m_, name.c_str(), &st) != MW_OK) return MW_WORLD_REMOVED;
  return st;
}

bool Manager::is_broken(const std::string& name) { return state(name) == MW_WORLD_BROKEN; }

std::vector<BrokenEvent> Manager::broken_events() {
  std::lock_guard<std::mutex> lock(mu_);
  return events_;
}

std::optional<BrokenEvent> Manager::broken_event(const std::string& world) {
  std::lock_guard<std::mutex> lock(mu_);
  for (const auto& e : events_) {
    if (e.world == world) return e;
  }
  return std::nullopt;
}

}  // namespace mwctl
