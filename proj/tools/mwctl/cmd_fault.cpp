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

// Fault-tolerance scenario. A leader receives from two workers, each in its
// own world; workerB kills itself after its kill-after'th message and the
// leader must keep serving workerA. --single-world puts all three processes
// in one world, where the same death halts the leader.

#include <signal.h>

#include <algorithm>
#include <cstdio>
#include <thread>

#include "common.hpp"

namespace mwctl {

namespace {

struct FaultOptions {
  Common common;
  int count = 30;
  int kill_after = 10;
  double rate = 0;  // 0: role default
  int size = 4096;
  bool single_world = false;
  double stall_limit = 10.0;
  double detect_limit = 3.5;
  int64_t init_timeout_ms = 30000;
};

struct Layout {
  std::string world;
  int size;
  int rank;
};

// World membership for a role. The leader gets one entry per world.
std::vector<Layout> layout_for(const FaultOptions& o) {
  const std::string& p = o.common.prefix;
  const std::string& role = o.common.role;
  if (o.single_world) {
    if (role == "leader") return {{p + "-w", 3, 0}};
    if (role == "workerA") return {{p + "-w", 3, 1}};
    if (role == "workerB") return {{p + "-w", 3, 2}};
  } else {
    if (role == "leader") return {{p + "-w1", 2, 0}, {p + "-w2", 2, 0}};
    if (role == "workerA") return {{p + "-w1", 2, 1}};
    if (role == "workerB") return {{p + "-w2", 2, 1}};
  }
  throw EnvError("unknown role " + role + " (leader, workerA, workerB)");
}

void initialize_all(Manager& m, const std::vector<Layout>& worlds, const std::string& store,
                    int64_t timeout_ms) {
  std::vector<mw_status> st(worlds.size(), MW_OK);
  std::vector<std::string> err(worlds.size());
  std::vector<std::thread> threads;
  for (size_t i = 0; i < worlds.size(); ++i) {
    threads.emplace_back([&, i] {
      st[i] = m.initialize(worlds[i].world, worlds[i].size, worlds[i].rank, store, timeout_ms);
      if (st[i] != MW_OK) err[i] = mw_last_error();
    });
  }
  for (auto& t : threads) t.join();
  for (size_t i = 0; i < worlds.size(); ++i) {
    if (st[i] != MW_OK) {
      throw ScenarioFail("initialize " + worlds[i].world + ": " + err[i]);
    }
    report().emit({{"event", "ready"}, {"world", worlds[i].world}, {"rank", worlds[i].rank}});
  }
}

size_t elems(const FaultOptions& o) { return std::max<size_t>(2, o.size / sizeof(double)); }

std::string death_key(const FaultOptions& o) { return o.common.prefix + "/fault/death"; }

int run_worker(const FaultOptions& o, const std::string& store_addr) {
  bool is_b = o.common.role == "workerB";
  double rate = o.rate > 0 ? o.rate : (is_b ? 0.5 : 1.0);
  auto worlds = layout_for(o);
  const std::string& world = worlds[0].world;
  Store store(store_addr);
  Manager m;
  initialize_all(m, worlds, store_addr, o.init_timeout_ms);
  store.barrier(o.common.prefix + "/fault/start", 3, o.init_timeout_ms);
  double t0 = mono_now();

  auto die = [&](int sent) {
    double t = mono_now();
    store.set(death_key(o), std::to_string(t));
    report().emit({{"event", "death"}, {"after", sent}, {"at", t}});
    raise(SIGKILL);
  };
  if (is_b && o.kill_after == 0) die(0);

  std::vector<double> msg(elems(o), 0.0);
  for (int i = 1; i <= o.count; ++i) {
    sleep_until(t0 + i / rate);
    msg[0] = i;
    msg[1] = mono_now();
    Work w;
    mw_status s = mw_isend(m.comm(), world.c_str(), 0, MW_F64, msg.data(), msg.size(), w.out());
    if (s == MW_OK) s = w.wait(10000);
    if (s != MW_OK) {
      report().emit({{"event", "send_failed"},
                     {"seq", i},
                     {"status", mw_status_name(s)},
                     {"detail", mw_last_error()}});
      // In one shared world a peer's death legitimately stops everyone.
      if (o.single_world) return kExitPass;
      return kExitFail;
    }
    report().emit({{"event", "sent"}, {"world", world}, {"seq", i}});
    if (is_b && i == o.kill_after) die(i);
  }

  if (!o.single_world) {
    // Stay in the world until the leader has everything.
    double ack = 0;
    Work w;
    mw_status s = mw_irecv(m.comm(), world.c_str(), 0, MW_F64, &ack, 1, w.out());
    if (s == MW_OK) s = w.wait(30000);
    report().emit({{"event", "ack"}, {"status", mw_status_name(s)}});
    if (s != MW_OK) return kExitFail;
  }
  mw_remove_world(m.get(), world.c_str());
  return kExitPass;
}

struct Stream {
  std::string world;
  int src;
  std::string label;
  std::vector<double> buf;
  Work work;
  int received = 0;
  double last_recv_at = 0;
  bool finished = false;
  bool failed = false;
  std::string failure;
};

int run_leader(const FaultOptions& o, const std::string& store_addr) {
  auto worlds = layout_for(o);
  Store store(store_addr);
  Manager m;
  initialize_all(m, worlds, store_addr, o.init_timeout_ms);
  store.barrier(o.common.prefix + "/fault/start", 3, o.init_timeout_ms);

  std::vector<Stream> streams;
  if (o.single_world) {
    streams.push_back({worlds[0].world, 1, "workerA", {}, {}, 0, 0, false, false, {}});
    streams.push_back({worlds[0].world, 2, "workerB", {}, {}, 0, 0, false, false, {}});
  } else {
    streams.push_back({worlds[0].world, 1, "workerA", {}, {}, 0, 0, false, false, {}});
    streams.push_back({worlds[1].world, 1, "workerB", {}, {}, 0, 0, false, false, {}});
  }
  auto post = [&](Stream& s) {
    s.buf.assign(elems(o), 0.0);
    mw_status st = mw_irecv(m.comm(), s.world.c_str(), s.src, MW_F64, s.buf.data(),
                            s.buf.size(), s.work.out());
    if (st != MW_OK) {
      s.failed = true;
      s.failure = std::string(mw_status_name(st)) + ": " + mw_last_error();
    }
  };
  for (auto& s : streams) post(s);

  double last_any = mono_now();
  double max_stall = 0;
  bool stalled = false;
  auto active = [&] {
    return std::any_of(streams.begin(), streams.end(),
                       [](const Stream& s) { return !s.finished && !s.failed; });
  };
  while (active()) {
    bool progressed = false;
    for (auto& s : streams) {
      if (s.finished || s.failed) continue;
      mw_work_state ws = s.work.poll();
      if (ws == MW_WORK_PENDING) continue;
      progressed = true;
      if (ws == MW_WORK_DONE) {
        double now = mono_now();
        max_stall = std::max(max_stall, now - last_any);
        last_any = now;
        ++s.received;
        s.last_recv_at = now;
        report().emit({{"event", "recv"},
                       {"world", s.world},
                       {"from", s.label},
                       {"seq", static_cast<int>(s.buf[0])},
                       {"latency", now - s.buf[1]}});
        if (s.received >= o.count) {
          s.finished = true;
        } else {
          post(s);
        }
      } else {
        mw_status st = s.work.wait(0);
        s.failed = true;
        s.failure = std::string(mw_status_name(st)) + ": " + mw_last_error();
        report().emit({{"event", "recv_failed"},
                       {"world", s.world},
                       {"from", s.label},
                       {"status", mw_status_name(st)},
                       {"detail", s.failure}});
      }
    }
    double idle = mono_now() - last_any;
    if (idle > o.stall_limit) {
      max_stall = std::max(max_stall, idle);
      stalled = true;
      break;
    }
    if (!progressed) std::this_thread::sleep_for(std::chrono::milliseconds(1));
  }

  // Release the workers that are still waiting for an acknowledgment.
  if (!o.single_world) {
    for (auto& s : streams) {
      if (!s.finished) continue;
      double ack = 1;
      Work w;
      if (mw_isend(m.comm(), s.world.c_str(), s.src, MW_F64, &ack, 1, w.out()) == MW_OK) {
        w.wait(5000);
      }
    }
  }

  Stream& a = streams[0];
  Stream& b = streams[1];
  bool killed = o.kill_after >= 0 && o.kill_after < o.count;
  std::string death_text;
  std::optional<double> death_at;
  if (killed && store.wait(death_key(o), 1000, &death_text)) death_at = std::stod(death_text);
  // The broken notification may trail the failed receive slightly.
  const std::string& b_world = b.world;
  std::optional<BrokenEvent> broken;
  for (int i = 0; i < 50 && killed && !(broken = m.broken_event(b_world)); ++i) {
    std::this_thread::sleep_for(std::chrono::milliseconds(100));
  }
  std::optional<double> detection;
  if (broken && death_at) detection = broken->t - *death_at;

  std::vector<std::string> reasons;
  if (stalled) reasons.push_back("leader stalled");
  if (killed) {
    if (!death_at) reasons.push_back("no death record from workerB");
    if (!broken) reasons.push_back("broken world not reported");
    if (detection && (*detection < 0 || *detection > o.detect_limit)) {
      reasons.push_back("detection outside [0, limit]");
    }
  }
  if (o.single_world) {
    if (killed) {
      if (!a.failed) reasons.push_back("leader did not halt");
      if (a.received >= o.count) reasons.push_back("leader kept receiving");
    } else if (a.received < o.count || b.received < o.count) {
      reasons.push_back("missing messages");
    }
  } else {
    if (a.failed || a.received < o.count) reasons.push_back("workerA stream interrupted");
    if (a.received < std::min(o.count, 20)) reasons.push_back("fewer than 20 workerA messages");
    if (m.broken_event(a.world)) reasons.push_back("w1 reported broken");
    if (killed && broken && a.last_recv_at <= broken->t) {
      reasons.push_back("no workerA message after the failure");
    }
    if (!killed && b.received < o.count) reasons.push_back("workerB stream interrupted");
  }
  bool pass = reasons.empty();
  json summary = {{"event", "summary"},
                  {"mode", o.single_world ? "single" : "multi"},
                  {"workerA_received", a.received},
                  {"workerB_received", b.received},
                  {"max_stall", max_stall},
                  {"killed", killed},
                  {"pass", pass},
                  {"reasons", reasons}};
  if (broken) {
    summary["broken_world"] = broken->world;
    summary["broken_at"] = broken->t;
  }
  if (death_at) summary["death_at"] = *death_at;
  if (detection) summary["detection"] = *detection;
  report().emit(summary);
  for (const auto& w : worlds) mw_remove_world(m.get(), w.world.c_str());
  return pass ? kExitPass : kExitFail;
}

}  // namespace

void add_fault_command(CLI::App& app, Runner& run) {
  auto* cmd = app.add_subcommand("fault", "fault-tolerance scenario (leader, workerA, workerB)");
  auto o = std::make_shared<FaultOptions>();
  add_common(cmd, o->common);
  cmd->add_option("--role", o->common.role, "leader, workerA or workerB")->required();
  cmd->add_option("--count", o->count, "messages per worker");
  cmd->add_option("--kill-after", o->kill_after,
                  "workerB dies after this many messages (negative: never)");
  cmd->add_option("--rate", o->rate, "messages per second (default 1 for A, 0.5 for B)");
  cmd->add_option("--size", o->size, "message size in bytes");
  cmd->add_flag("--single-world", o->single_world, "all three processes in one world");
  cmd->add_option("--stall-limit", o->stall_limit, "seconds without any message that fail");
  cmd->add_option("--detect-limit", o->detect_limit, "allowed detection delay in seconds");
  cmd->add_option("--init-timeout-ms", o->init_timeout_ms, "world initialization timeout");
  cmd->callback([&run, o] {
    run = [o] {
      report().open(o->common.out, o->common.role);
      std::string store = store_address(o->common);
      if (o->common.role == "leader") return run_leader(*o, store);
      layout_for(*o);
      return run_worker(*o, store);
    };
  });
}

}  // namespace mwctl
