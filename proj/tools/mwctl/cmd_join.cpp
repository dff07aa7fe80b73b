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

// Online instantiation scenario. The leader streams from workerA over w1,
// starts initializing w2 at --init-at and waits for workerB, which only
// joins at --join-at. w1 throughput must not notice the wait.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <deque>
#include <thread>

#include "common.hpp"

namespace mwctl {

namespace {

struct JoinOptions {
  Common common;
  int64_t size = 4194304;
  double init_at = 10;
  double join_at = 20;
  double duration = 30;
  int interval = 5000;
  int window = 4;
  double gap_limit = 0.1;
  double floor = 0.8;
  double latency_limit = 1.0;
  bool no_join = false;
  int64_t init_timeout_ms = 30000;
};

std::string w1(const JoinOptions& o) { return o.common.prefix + "-w1"; }
std::string w2(const JoinOptions& o) { return o.common.prefix + "-w2"; }
std::string key(const JoinOptions& o, const std::string& k) {
  return o.common.prefix + "/join/" + k;
}
size_t elems(const JoinOptions& o) { return std::max<size_t>(1, o.size / sizeof(float)); }

// Sends with a window of in-flight messages until the leader publishes the
// stop key, then sends a marker and waits for the leader's acknowledgment.
int stream(Manager& m, Store& store, const JoinOptions& o, const std::string& world) {
  std::vector<std::vector<float>> bufs(o.window, std::vector<float>(elems(o), 1.0f));
  std::vector<Work> works(o.window);
  int64_t seq = 0;
  bool stop = false;
  while (!stop) {
    for (int i = 0; i < o.window && !stop; ++i) {
      if (works[i].valid()) {
        mw_status s = works[i].wait(30000);
        if (s != MW_OK) throw ScenarioFail("send on " + world + ": " + mw_last_error());
      }
      bufs[i][0] = static_cast<float>(seq++);
      check(mw_isend(m.comm(), world.c_str(), 0, MW_F32, bufs[i].data(), bufs[i].size(),
                     works[i].out()),
            "isend");
      if (seq % 8 == 0) stop = store.get(key(o, "stop"), nullptr);
    }
  }
  for (auto& w : works) {
    if (w.valid() && w.wait(30000) != MW_OK) {
      throw ScenarioFail("send on " + world + ": " + mw_last_error());
    }
  }
  bufs[0][0] = -1.0f;
  Work marker;
  check(mw_isend(m.comm(), world.c_str(), 0, MW_F32, bufs[0].data(), bufs[0].size(),
                 marker.out()),
        "isend marker");
  check(marker.wait(30000), "marker");
  float ack = 0;
  Work w;
  check(mw_irecv(m.comm(), world.c_str(), 0, MW_F32, &ack, 1, w.out()), "irecv ack");
  check(w.wait(30000), "ack");
  report().emit({{"event", "stream_done"}, {"world", world}, {"sent", seq}});
  return kExitPass;
}

int run_worker_a(const JoinOptions& o, const std::string& store_addr) {
  Store store(store_addr);
  Manager m;
  check(m.initialize(w1(o), 2, 1, store_addr, o.init_timeout_ms), "initialize w1");
  report().emit({{"event", "ready"}, {"world", w1(o)}});
  store.barrier(key(o, "start"), 2, o.init_timeout_ms);
  int rc = stream(m, store, o, w1(o));
  // The leader still has receives posted; leaving early would break the world.
  store.wait(key(o, "done"), 60000);
  mw_remove_world(m.get(), w1(o).c_str());
  return rc;
}

int run_worker_b(const JoinOptions& o, const std::string& store_addr) {
  Store store(store_addr);
  Manager m;
  std::string t0_text;
  if (!store.wait(key(o, "t0"), o.init_timeout_ms + 60000, &t0_text)) {
    throw ScenarioFail("leader never started");
  }
  sleep_until(std::stod(t0_text) + o.join_at);
  double begin = mono_now();
  mw_status s = m.initialize(w2(o), 2, 1, store_addr, o.init_timeout_ms);
  double latency = mono_now() - begin;
  check(s, "initialize w2");
  report().emit({{"event", "joined"}, {"world", w2(o)}, {"join_latency", latency}});
  store.set(key(o, "join_latency"), std::to_string(latency));
  int rc = stream(m, store, o, w2(o));
  store.wait(key(o, "done"), 60000);
  mw_remove_world(m.get(), w2(o).c_str());
  return rc;
}

// One receiving world at the leader: a ring of posted receives.
struct Inbound {
  std::string world;
  std::vector<std::vector<float>> bufs;
  std::deque<std::pair<int, Work>> ring;
  std::vector<double> arrivals;
  bool done = false;
  // Current interval.
  int in_interval = 0;
  double interval_start = 0;
  double bytes_total = 0;
  double time_total = 0;
};

void post(Manager& m, Inbound& in, int slot) {
  Work w;
  check(mw_irecv(m.comm(), in.world.c_str(), 1, MW_F32, in.bufs[slot].data(),
                 in.bufs[slot].size(), w.out()),
        "irecv " + in.world);
  in.ring.emplace_back(slot, std::move(w));
}

struct Sample {
  std::string world;
  double start, end, bytes;
};

int run_leader(const JoinOptions& o, const std::string& store_addr) {
  Store store(store_addr);
  Manager m;
  check(m.initialize(w1(o), 2, 0, store_addr, o.init_timeout_ms), "initialize w1");
  report().emit({{"event", "ready"}, {"world", w1(o)}});
  store.barrier(key(o, "start"), 2, o.init_timeout_ms);
  double t0 = mono_now();
  store.set(key(o, "t0"), std::to_string(t0));

  const double msg_bytes = static_cast<double>(elems(o) * sizeof(float));
  std::vector<Sample> samples;
  std::vector<Inbound> in(2);
  in[0].world = w1(o);
  in[1].world = w2(o);
  for (auto& x : in) x.bufs.assign(o.window, std::vector<float>(elems(o)));
  for (int i = 0; i < o.window; ++i) post(m, in[0], i);
  in[0].interval_start = t0;

  std::atomic<int> w2_state{0};  // 0 idle, 1 initializing, 2 ready, 3 failed
  std::atomic<double> w2_ready_at{0};
  std::string w2_error;
  std::thread init_thread;
  bool w2_posted = false;
  bool stop_sent = false;

  auto consume = [&](Inbound& x) {
    bool any = false;
    while (!x.done && !x.ring.empty()) {
      auto& [slot, work] = x.ring.front();
      mw_work_state st = work.poll();
      if (st == MW_WORK_PENDING) break;
      if (st == MW_WORK_FAILED) {
        mw_status s = work.wait(0);
        throw ScenarioFail("receive on " + x.world + ": " + mw_status_name(s) + ": " +
                           mw_last_error());
      }
      any = true;
      double now = mono_now();
      int s = slot;
      x.ring.pop_front();
      if (x.bufs[s][0] < 0) {
        x.done = true;
        break;
      }
      x.arrivals.push_back(now);
      if (++x.in_interval == o.interval) {
        Sample smp{x.world, x.interval_start, now, msg_bytes * o.interval};
        samples.push_back(smp);
        x.bytes_total += smp.bytes;
        x.time_total += smp.end - smp.start;
        report().emit({{"event", "sample"},
                       {"world", x.world},
                       {"start", smp.start - t0},
                       {"end", smp.end - t0},
                       {"messages", o.interval},
                       {"bytes", smp.bytes},
                       {"throughput", smp.bytes / (smp.end - smp.start)}});
        x.in_interval = 0;
        x.interval_start = now;
      }
      post(m, x, s);
    }
    return any;
  };

  while (!(in[0].done && (in[1].done || !w2_posted))) {
    double now = mono_now();
    if (w2_state == 0 && now >= t0 + o.init_at) {
      w2_state = 1;
      report().emit({{"event", "init_begin"}, {"world", w2(o)}});
      init_thread = std::thread([&] {
        mw_status s = m.initialize(w2(o), 2, 0, store_addr, o.init_timeout_ms);
        if (s == MW_OK) {
          w2_ready_at = mono_now();
          w2_state = 2;
        } else {
          w2_error = mw_last_error();
          w2_state = 3;
        }
      });
    }
    if (w2_state == 2 && !w2_posted) {
      report().emit({{"event", "ready"}, {"world", w2(o)}});
      for (int i = 0; i < o.window; ++i) post(m, in[1], i);
      in[1].interval_start = w2_ready_at;
      w2_posted = true;
    }
    if (!stop_sent && now >= t0 + o.duration) {
      store.set(key(o, "stop"), "1");
      stop_sent = true;
    }
    bool any = consume(in[0]);
    if (w2_posted) any = consume(in[1]) || any;
    if (!any) std::this_thread::yield();
    if (now > t0 + o.duration + 60) throw ScenarioFail("streams did not finish");
  }
  if (w2_state == 1) mw_remove_world(m.get(), w2(o).c_str());
  if (init_thread.joinable()) init_thread.join();

  for (auto& x : in) {
    if (!x.done) continue;
    float ack = 1;
    Work w;
    if (mw_isend(m.comm(), x.world.c_str(), 1, MW_F32, &ack, 1, w.out()) == MW_OK) w.wait(5000);
  }

  // ---- verdict -------------------------------------------------------------
  std::vector<std::string> reasons;
  const double wait_begin = t0 + o.init_at;
  const double wait_end = w2_state == 2 ? w2_ready_at.load() : t0 + o.duration;
  double max_gap = 0;
  const auto& a = in[0].arrivals;
  for (size_t i = 1; i < a.size(); ++i) {
    if (a[i] >= wait_begin && a[i - 1] <= wait_end) max_gap = std::max(max_gap, a[i] - a[i - 1]);
  }
  if (max_gap > o.gap_limit) reasons.push_back("w1 gap during the wait exceeds the limit");

  double pre_bytes = 0, pre_time = 0;
  int pre_n = 0, during_n = 0;
  double during_min = INFINITY;
  bool first = true;
  for (const auto& s : samples) {
    if (s.world != w1(o)) continue;
    if (first) {  // warm-up
      first = false;
      continue;
    }
    if (s.end <= wait_begin) {
      pre_bytes += s.bytes;
      pre_time += s.end - s.start;
      ++pre_n;
    } else if (s.start >= wait_begin && s.end <= wait_end) {
      during_min = std::min(during_min, s.bytes / (s.end - s.start));
      ++during_n;
    }
  }
  double pre_mean = pre_time > 0 ? pre_bytes / pre_time : 0;
  if (pre_n == 0 || during_n == 0) reasons.push_back("too few samples around the wait");
  if (during_n > 0 && during_min < o.floor * pre_mean) {
    reasons.push_back("w1 throughput dropped during the wait");
  }

  int w1_after = 0, w2_after = static_cast<int>(in[1].arrivals.size());
  for (double t : a) w1_after += w2_state == 2 && t >= w2_ready_at ? 1 : 0;
  std::optional<double> join_latency;
  std::string text;
  if (w2_state == 2 && store.get(key(o, "join_latency"), &text)) join_latency = std::stod(text);
  if (o.no_join) {
    if (w2_state == 2) reasons.push_back("w2 became ready without a joiner");
  } else {
    if (w2_state != 2) reasons.push_back("w2 never became ready: " + w2_error);
    if (w1_after == 0 || w2_after == 0) reasons.push_back("worlds not concurrent after the join");
    if (!join_latency || *join_latency >= o.latency_limit) reasons.push_back("join latency");
  }
  if (m.broken_event(w1(o))) reasons.push_back("w1 broken");

  bool pass = reasons.empty();
  json summary = {{"event", "summary"},
                  {"max_gap_during_wait", max_gap},
                  {"pre_wait_mean", pre_mean},
                  {"pre_wait_samples", pre_n},
                  {"during_wait_samples", during_n},
                  {"during_wait_min", during_n ? during_min : 0.0},
                  {"w1_messages", a.size()},
                  {"w1_after_join", w1_after},
                  {"w2_messages", w2_after},
                  {"w1_mean", in[0].time_total > 0 ? in[0].bytes_total / in[0].time_total : 0},
                  {"w2_mean", in[1].time_total > 0 ? in[1].bytes_total / in[1].time_total : 0},
                  {"w2_state", static_cast<int>(w2_state)},
                  {"message_size", msg_bytes},
                  {"pass", pass},
                  {"reasons", reasons}};
  if (w2_state == 2) summary["w2_ready_at"] = w2_ready_at - t0;
  if (join_latency) summary["join_latency"] = *join_latency;
  report().emit(summary);
  store.set(key(o, "done"), "1");
  mw_remove_world(m.get(), w1(o).c_str());
  mw_remove_world(m.get(), w2(o).c_str());
  return pass ? kExitPass : kExitFail;
}

}  // namespace

void add_join_command(CLI::App& app, Runner& run) {
  auto* cmd = app.add_subcommand("join", "online instantiation scenario (leader, workerA, workerB)");
  auto o = std::make_shared<JoinOptions>();
  add_common(cmd, o->common);
  cmd->add_option("--role", o->common.role, "leader, workerA or workerB")->required();
  cmd->add_option("--size", o->size, "message size in bytes");
  cmd->add_option("--init-at", o->init_at, "seconds until the leader initializes w2");
  cmd->add_option("--join-at", o->join_at, "seconds until workerB joins w2");
  cmd->add_option("--duration", o->duration, "seconds of streaming");
  cmd->add_option("--interval", o->interval, "messages per throughput sample");
  cmd->add_option("--window", o->window, "messages in flight per stream");
  cmd->add_option("--gap-limit", o->gap_limit, "largest allowed w1 gap during the wait (s)");
  cmd->add_option("--floor", o->floor, "minimum sample throughput relative to the pre-wait mean");
  cmd->add_flag("--no-join", o->no_join, "expect w2 initialization to time out");
  cmd->add_option("--init-timeout-ms", o->init_timeout_ms, "world initialization timeout");
  cmd->callback([&run, o] {
    run = [o] {
      report().open(o->common.out, o->common.role);
      std::string store = store_address(o->common);
      if (o->common.role == "leader") return run_leader(*o, store);
      if (o->common.role == "workerA") return run_worker_a(*o, store);
      if (o->common.role == "workerB") return run_worker_b(*o, store);
      throw EnvError("unknown role " + o->common.role);
    };
  });
}

}  // namespace mwctl
