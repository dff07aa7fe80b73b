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

// Loopback throughput benchmarks.
//
// p2p: one sender, one receiver. Each run moves the same byte volume over a
// blocking framed connection (the single-world direct loop, "sw") and over
// the communicator with a window of in-flight messages ("mw").
// fanin: one receiver and --senders senders, each pair in its own world.
//
// Before every run the receiver sends a one-byte go message on the path
// under test, so both sides start together. Throughput is measured at the
// receiver from the first to the last message of the run. Receivers on both
// paths cycle through --window buffers.

#include <sys/resource.h>

#include <algorithm>
#include <deque>
#include <thread>

#include "common.hpp"

namespace mwctl {

namespace {

struct BenchOptions {
  Common common;
  std::string mode = "p2p";
  int rank = 1;
  int senders = 1;
  std::vector<int64_t> sizes = {4096, 40960, 409600, 4194304};
  int runs = 10;
  int64_t bytes_per_run = 256ll << 20;
  int64_t min_messages = 64;
  int64_t max_messages = 50000;
  int window = 8;
  int64_t timeout_ms = 60000;
};

int64_t messages_for(const BenchOptions& o, int64_t size) {
  return std::clamp(o.bytes_per_run / size, o.min_messages, o.max_messages);
}

std::string key(const BenchOptions& o, const std::string& k) {
  return o.common.prefix + "/bench/" + k;
}

double median(std::vector<double> v) {
  if (v.empty()) return 0;
  std::sort(v.begin(), v.end());
  size_t n = v.size();
  return n % 2 ? v[n / 2] : (v[n / 2 - 1] + v[n / 2]) / 2;
}

// ---- communicator path ------------------------------------------------------

void mw_send_run(Manager& m, const std::string& world, int dst, std::vector<uint8_t>& payload,
                 int64_t n, int window, int64_t timeout_ms) {
  uint8_t go = 0;
  Work g;
  check(mw_irecv(m.comm(), world.c_str(), dst, MW_U8, &go, 1, g.out()), "irecv go");
  check(g.wait(timeout_ms), "go");
  // The payload is never modified, so every in-flight send may share it.
  std::deque<Work> inflight;
  for (int64_t i = 0; i < n; ++i) {
    if (static_cast<int>(inflight.size()) == window) {
      // Refill once half the window has drained; FIFO completion means
      // everything before the awaited send is done too.
      check(inflight[(window - 1) / 2].wait(timeout_ms), "send");
      while (!inflight.empty() && inflight.front().poll() != MW_WORK_PENDING) {
        check(inflight.front().wait(0), "send");
        inflight.pop_front();
      }
    }
    Work w;
    check(mw_isend(m.comm(), world.c_str(), dst, MW_U8, payload.data(), payload.size(),
                   w.out()),
          "isend");
    inflight.push_back(std::move(w));
  }
  for (auto& w : inflight) check(w.wait(timeout_ms), "send");
}

struct Incoming {
  std::string world;
  int src;
  std::vector<std::vector<uint8_t>> bufs;
  std::deque<std::pair<int, Work>> ring;
  int64_t posted = 0;
  int64_t received = 0;
  double first = 0, last = 0;
};

// Receives n messages from each source concurrently.
void mw_recv_run(Manager& m, std::vector<Incoming>& ins, int64_t size, int64_t n, int window,
                 int64_t timeout_ms) {
  auto post = [&](Incoming& in, int slot) {
    Work w;
    check(mw_irecv(m.comm(), in.world.c_str(), in.src, MW_U8, in.bufs[slot].data(), size,
                   w.out()),
          "irecv");
    in.ring.emplace_back(slot, std::move(w));
    ++in.posted;
  };
  for (auto& in : ins) {
    in.bufs.assign(window, std::vector<uint8_t>(size));
    in.ring.clear();
    in.posted = in.received = 0;
    for (int i = 0; i < window && in.posted < n; ++i) post(in, i);
  }
  std::vector<Work> gos;
  for (auto& in : ins) {
    static uint8_t go = 1;
    Work g;
    check(mw_isend(m.comm(), in.world.c_str(), in.src, MW_U8, &go, 1, g.out()), "isend go");
    gos.push_back(std::move(g));
  }
  double deadline = mono_now() + timeout_ms / 1000.0;
  size_t finished = 0;
  while (finished < ins.size()) {
    bool any = false;
    for (auto& in : ins) {
      while (!in.ring.empty()) {
        auto& [slot, w] = in.ring.front();
        mw_work_state st = w.poll();
        if (st == MW_WORK_PENDING) break;
        check(st == MW_WORK_DONE ? MW_OK : w.wait(0), "recv");
        double now = mono_now();
        if (in.received == 0) in.first = now;
        in.last = now;
        int s = slot;
        in.ring.pop_front();
        any = true;
        if (++in.received == n) ++finished;
        if (in.posted < n) post(in, s);
      }
    }
    if (!any) {
      if (mono_now() > deadline) throw ScenarioFail("benchmark run timed out");
      // Sleep until half the window has arrived rather than competing
      // with the poller for the CPU.
      for (auto& in : ins) {
        if (in.ring.empty()) continue;
        size_t half = std::min<size_t>((window - 1) / 2, in.ring.size() - 1);
        mw_status s = in.ring[half].second.wait(ins.size() == 1 ? 1000 : 1);
        if (s != MW_OK && s != MW_ERR_TIMEOUT) check(s, "recv");
        break;
      }
    }
  }
  for (auto& g : gos) check(g.wait(timeout_ms), "go");
}

double rate(int64_t size, int64_t n, double first, double last) {
  return last > first ? static_cast<double>(size) * static_cast<double>(n - 1) / (last - first)
                      : 0;
}

// ---- p2p --------------------------------------------------------------------

int run_p2p(const BenchOptions& o, const std::string& store_addr) {
  bool receiver = o.common.role == "receiver";
  if (!receiver && o.common.role != "sender") throw EnvError("role must be sender or receiver");
  const std::string world = o.common.prefix + "-bench";
  const std::string sw_world = o.common.prefix + "-sw";
  Store store(store_addr);
  Manager m;
  check(m.initialize(world, 2, receiver ? 0 : 1, store_addr), "initialize " + world);

  mw_conn* conn = nullptr;
  if (receiver) {
    mw_listener* l = nullptr;
    check(mw_listener_open("127.0.0.1:0", sw_world.c_str(), 0, 2, &l), "listen");
    store.set(key(o, "sw_addr"), mw_listener_address(l));
    mw_status s = mw_listener_accept(l, o.timeout_ms, &conn);
    mw_listener_close(l);
    check(s, "accept");
  } else {
    std::string addr;
    if (!store.wait(key(o, "sw_addr"), o.timeout_ms, &addr)) throw ScenarioFail("no receiver");
    check(mw_conn_connect(addr.c_str(), sw_world.c_str(), 1, -1, &conn), "connect");
  }
  std::unique_ptr<mw_conn, void (*)(mw_conn*)> conn_owner(conn,
                                                          [](mw_conn* c) { mw_conn_close(c, 1); });

  json summary = {{"event", "summary"}, {"mode", "p2p"}, {"sizes", json::array()}};
  for (int64_t size : o.sizes) {
    int64_t n = messages_for(o, size);
    std::vector<uint8_t> payload(size, 0x5a);
    // The direct loop receives into as many buffers as the communicator
    // keeps posted, so both paths touch the same amount of memory.
    std::vector<std::vector<uint8_t>> ring(o.window, std::vector<uint8_t>(size));
    std::vector<double> sw, mw;
    for (int r = 0; r < o.runs; ++r) {
      // Alternate which path goes first so slow drift affects both alike.
      for (int k = 0; k < 2; ++k) {
        bool direct = (r + k) % 2 == 0;
        double tput = 0;
        rusage ru0;
        getrusage(RUSAGE_SELF, &ru0);
        if (direct && receiver) {
          uint8_t go = 1;
          check(mw_conn_send(conn, MW_U8, &go, 1), "send go");
          double first = 0, last = 0;
          for (int64_t i = 0; i < n; ++i) {
            check(mw_conn_recv(conn, MW_U8, ring[i % o.window].data(), size, o.timeout_ms),
                  "recv");
            last = mono_now();
            if (i == 0) first = last;
          }
          tput = rate(size, n, first, last);
        } else if (direct) {
          uint8_t go = 0;
          check(mw_conn_recv(conn, MW_U8, &go, 1, o.timeout_ms), "recv go");
          for (int64_t i = 0; i < n; ++i) {
            check(mw_conn_send(conn, MW_U8, payload.data(), size), "send");
          }
        } else if (receiver) {
          std::vector<Incoming> ins(1);
          ins[0].world = world;
          ins[0].src = 1;
          mw_recv_run(m, ins, size, n, o.window, o.timeout_ms);
          tput = rate(size, n, ins[0].first, ins[0].last);
        } else {
          mw_send_run(m, world, 0, payload, n, o.window, o.timeout_ms);
        }
        if (receiver) {
          (direct ? sw : mw).push_back(tput);
          rusage ru1;
          getrusage(RUSAGE_SELF, &ru1);
          report().emit({{"event", "run"},
                         {"voluntary_switches", ru1.ru_nvcsw - ru0.ru_nvcsw},
                         {"involuntary_switches", ru1.ru_nivcsw - ru0.ru_nivcsw},
                         {"path", direct ? "sw" : "mw"},
                         {"size", size},
                         {"messages", n},
                         {"run", r},
                         {"throughput", tput}});
        }
      }
    }
    if (receiver) {
      double sw_med = median(sw), mw_med = median(mw);
      json rec = {{"event", "size"},
                  {"size", size},
                  {"messages", n},
                  {"runs", o.runs},
                  {"sw_median", sw_med},
                  {"mw_median", mw_med},
                  {"ratio", sw_med > 0 ? mw_med / sw_med : 0},
                  {"overhead", sw_med > 0 ? 1 - mw_med / sw_med : 0}};
      report().emit(rec);
      summary["sizes"].push_back(rec);
    }
  }
  if (receiver) report().emit(summary);
  store.barrier(key(o, "end"), 2, o.timeout_ms);
  mw_remove_world(m.get(), world.c_str());
  return kExitPass;
}

// ---- fanin ------------------------------------------------------------------

int run_fanin(const BenchOptions& o, const std::string& store_addr) {
  auto world_of = [&](int i) { return o.common.prefix + "-fanin" + std::to_string(i); };
  bool receiver = o.common.role == "receiver";
  if (!receiver && o.common.role != "sender") throw EnvError("role must be sender or receiver");
  if (!receiver && (o.rank < 1 || o.rank > o.senders)) throw EnvError("--rank out of range");
  Store store(store_addr);
  Manager m;
  if (receiver) {
    std::vector<std::thread> ts;
    std::vector<mw_status> st(o.senders, MW_OK);
    for (int i = 1; i <= o.senders; ++i) {
      ts.emplace_back([&, i] { st[i - 1] = m.initialize(world_of(i), 2, 0, store_addr); });
    }
    for (auto& t : ts) t.join();
    for (auto s : st) check(s, "initialize fanin world");
  } else {
    check(m.initialize(world_of(o.rank), 2, 1, store_addr), "initialize " + world_of(o.rank));
  }

  json summary = {{"event", "summary"},
                  {"mode", "fanin"},
                  {"senders", o.senders},
                  {"sizes", json::array()}};
  for (int64_t size : o.sizes) {
    int64_t n = messages_for(o, size) / o.senders;
    n = std::max<int64_t>(n, o.min_messages);
    std::vector<uint8_t> payload(size, 0x5a);
    std::vector<double> agg;
    std::vector<std::vector<double>> per(o.senders);
    for (int r = 0; r < o.runs; ++r) {
      if (!receiver) {
        mw_send_run(m, world_of(o.rank), 0, payload, n, o.window, o.timeout_ms);
        continue;
      }
      std::vector<Incoming> ins(o.senders);
      for (int i = 0; i < o.senders; ++i) {
        ins[i].world = world_of(i + 1);
        ins[i].src = 1;
      }
      mw_recv_run(m, ins, size, n, o.window, o.timeout_ms);
      double first = ins[0].first, last = ins[0].last;
      for (auto& in : ins) {
        first = std::min(first, in.first);
        last = std::max(last, in.last);
      }
      double total = static_cast<double>(size) * static_cast<double>(n * o.senders - 1);
      double a = last > first ? total / (last - first) : 0;
      agg.push_back(a);
      json ps = json::array();
      for (int i = 0; i < o.senders; ++i) {
        double t = rate(size, n, ins[i].first, ins[i].last);
        per[i].push_back(t);
        ps.push_back(t);
      }
      report().emit({{"event", "run"},
                     {"size", size},
                     {"messages_per_sender", n},
                     {"run", r},
                     {"aggregate", a},
                     {"per_sender", ps}});
    }
    if (receiver) {
      json ps = json::array();
      for (auto& v : per) ps.push_back(median(v));
      json rec = {{"event", "size"},
                  {"size", size},
                  {"senders", o.senders},
                  {"aggregate_median", median(agg)},
                  {"per_sender_median", ps}};
      report().emit(rec);
      summary["sizes"].push_back(rec);
    }
  }
  if (receiver) report().emit(summary);
  store.barrier(key(o, "end"), o.senders + 1, o.timeout_ms);
  return kExitPass;
}

}  // namespace

void add_bench_command(CLI::App& app, Runner& run) {
  auto* cmd = app.add_subcommand("bench", "loopback throughput benchmarks (p2p, fanin)");
  auto o = std::make_shared<BenchOptions>();
  add_common(cmd, o->common);
  cmd->add_option("--mode", o->mode, "p2p or fanin")->check(CLI::IsMember({"p2p", "fanin"}));
  cmd->add_option("--role", o->common.role, "sender or receiver")->required();
  cmd->add_option("--rank", o->rank, "fanin sender index, 1..senders");
  cmd->add_option("--senders", o->senders, "fanin sender count")->check(CLI::Range(1, 64));
  cmd->add_option("--size", o->sizes, "message sizes in bytes")->delimiter(',');
  cmd->add_option("--runs", o->runs, "runs per size and path");
  cmd->add_option("--bytes-per-run", o->bytes_per_run, "payload volume per run");
  cmd->add_option("--max-messages", o->max_messages, "cap on messages per run");
  cmd->add_option("--window", o->window, "communicator messages in flight");
  cmd->callback([&run, o] {
    run = [o] {
      report().open(o->common.out, o->common.role);
      std::string store = store_address(o->common);
      return o->mode == "p2p" ? run_p2p(*o, store) : run_fanin(*o, store);
    };
  });
}

}  // namespace mwctl
