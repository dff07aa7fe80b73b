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

// Rhombus serving pipeline.
//
//          P2
//   w1   /    \   w3
//      P1      P4
//   w2   \    /   w4
//          P3
//
// P1 alternates messages between the two middle stages, which forward to
// P4. --kill names a victim that kills itself after handling --kill-at
// messages; the survivors then wait for detection, check that exactly the
// worlds containing the victim broke, and run one all-reduce on every world
// still standing. With --recover a standby P5 forms w6 (P1, P5) and
// w7 (P5, P4) once a middle stage is lost.

#include <signal.h>

#include <algorithm>
#include <map>
#include <set>
#include <thread>

#include "common.hpp"

namespace mwctl {

namespace {

struct RhombusOptions {
  Common common;
  int rounds = 40;
  double rate = 20;
  std::string kill;
  int kill_at = 10;
  bool recover = false;
  int size = 32;
  double settle = 4.5;
  double stall_limit = 30;
  int64_t init_timeout_ms = 30000;
};

struct Member {
  const char* world;
  int rank;
};

// Worlds and ranks per role; rank 0 is the upstream end of each edge.
const std::map<std::string, std::vector<Member>>& base_layout() {
  static const std::map<std::string, std::vector<Member>> m = {
      {"P1", {{"w1", 0}, {"w2", 0}}},
      {"P2", {{"w1", 1}, {"w3", 0}}},
      {"P3", {{"w2", 1}, {"w4", 0}}},
      {"P4", {{"w3", 1}, {"w4", 1}}},
      {"P5", {{"w6", 1}, {"w7", 0}}},
  };
  return m;
}

std::set<std::string> members_of(const std::string& world) {
  std::set<std::string> out;
  for (const auto& [role, worlds] : base_layout()) {
    for (const auto& w : worlds) {
      if (world == w.world) out.insert(role);
    }
  }
  return out;
}

class Node {
 public:
  Node(const RhombusOptions& o, std::string store_addr)
      : o_(o), store_addr_(std::move(store_addr)), store_(store_addr_) {}

  int run();

 private:
  std::string full(const std::string& w) const { return o_.common.prefix + "-" + w; }
  std::string key(const std::string& k) const { return o_.common.prefix + "/rhombus/" + k; }
  const std::string& role() const { return o_.common.role; }
  bool victim() const { return o_.kill == role(); }

  void initialize(const std::vector<Member>& worlds, int64_t timeout_ms);
  [[noreturn]] void die(int handled);
  bool send(const std::string& w, int dst, std::vector<double>& msg);

  void run_source();
  void run_stage(const std::string& up, const std::string& down);
  void run_sink();
  // Starts initializing a recovery world in the background, once.
  void start_recovery(const std::string& w, int rank);
  bool recovery_ready();

  int verdict();

  RhombusOptions o_;
  std::string store_addr_;
  Store store_;
  Manager m_;
  std::map<std::string, int> ranks_;  // short world name -> my rank
  std::thread recovery_;
  std::string recovery_world_;
  std::atomic<int> recovery_state_{0};  // 0 none, 1 running, 2 ready, 3 failed
  std::vector<std::string> removed_;
  double data_end_ = 0;

  int sent_ = 0;
  int sent_recovered_ = 0;
  int forwarded_ = 0;
  int received_ = 0;
  std::map<std::string, int> received_on_;
  std::map<std::string, double> last_recv_on_;
};

void Node::initialize(const std::vector<Member>& worlds, int64_t timeout_ms) {
  std::vector<mw_status> st(worlds.size(), MW_OK);
  std::vector<std::string> err(worlds.size());
  std::vector<std::thread> ts;
  for (size_t i = 0; i < worlds.size(); ++i) {
    ts.emplace_back([&, i] {
      st[i] = m_.initialize(full(worlds[i].world), 2, worlds[i].rank, store_addr_, timeout_ms);
      if (st[i] != MW_OK) err[i] = mw_last_error();
    });
  }
  for (auto& t : ts) t.join();
  for (size_t i = 0; i < worlds.size(); ++i) {
    if (st[i] != MW_OK) throw ScenarioFail("initialize " + std::string(worlds[i].world) + ": " + err[i]);
    ranks_[worlds[i].world] = worlds[i].rank;
    report().emit({{"event", "ready"}, {"world", worlds[i].world}, {"rank", worlds[i].rank}});
  }
}

void Node::die(int handled) {
  double t = mono_now();
  store_.set(key("death"), std::to_string(t));
  report().emit({{"event", "death"}, {"after", handled}, {"at", t}});
  raise(SIGKILL);
  std::abort();
}

bool Node::send(const std::string& w, int dst, std::vector<double>& msg) {
  Work work;
  mw_status s =
      mw_isend(m_.comm(), full(w).c_str(), dst, MW_F64, msg.data(), msg.size(), work.out());
  if (s == MW_OK) s = work.wait(5000);
  if (s != MW_OK) {
    report().emit({{"event", "send_failed"},
                   {"world", w},
                   {"status", mw_status_name(s)},
                   {"detail", mw_last_error()}});
  }
  return s == MW_OK;
}

void Node::start_recovery(const std::string& w, int rank) {
  if (!o_.recover || recovery_state_ != 0) return;
  recovery_state_ = 1;
  recovery_world_ = w;
  report().emit({{"event", "recovery_begin"}, {"world", w}});
  recovery_ = std::thread([this, w, rank] {
    mw_status s = m_.initialize(full(w), 2, rank, store_addr_, o_.init_timeout_ms);
    recovery_state_ = s == MW_OK ? 2 : 3;
  });
}

bool Node::recovery_ready() {
  if (recovery_state_ != 2 || ranks_.count(recovery_world_)) return false;
  ranks_[recovery_world_] = role() == "P1" ? 0 : 1;
  report().emit({{"event", "ready"}, {"world", recovery_world_}});
  return true;
}

// A single posted receive on one world.
struct Inbound {
  std::string world;
  std::vector<double> buf;
  Work work;
  bool closed = false;
};

void post(Manager& m, const std::string& full_name, Inbound& in) {
  mw_status s = mw_irecv(m.comm(), full_name.c_str(), 0, MW_F64, in.buf.data(), in.buf.size(),
                         in.work.out());
  if (s != MW_OK) in.closed = true;
}

void Node::run_source() {
  double t0 = mono_now();
  store_.set(key("t0"), std::to_string(t0));
  std::vector<std::string> downs = {"w1", "w2"};
  std::vector<double> msg(o_.size, 0.0);
  size_t next = 0;
  for (int seq = 1; seq <= o_.rounds; ++seq) {
    sleep_until(t0 + seq / o_.rate);
    if (recovery_ready()) downs.push_back(recovery_world_);
    bool sent = false;
    while (!sent && !downs.empty()) {
      size_t i = next++ % downs.size();
      std::string w = downs[i];
      msg[0] = seq;
      msg[1] = mono_now();
      if (!m_.is_broken(full(w)) && send(w, 1, msg)) {
        sent = true;
        ++sent_;
        if (w == "w6") ++sent_recovered_;
        report().emit({{"event", "sent"}, {"world", w}, {"seq", seq}});
        break;
      }
      downs.erase(downs.begin() + i);
      if (o_.recover) {
        mw_remove_world(m_.get(), full(w).c_str());
        removed_.push_back(w);
        start_recovery("w6", 0);
      }
    }
    if (!sent) report().emit({{"event", "dropped"}, {"seq", seq}});
    if (victim() && seq == o_.kill_at) die(seq);
  }
  if (recovery_.joinable()) recovery_.join();
  if (recovery_ready()) downs.push_back(recovery_world_);
  std::vector<double> marker(o_.size, -1.0);
  for (const auto& w : downs) send(w, 1, marker);
}

void Node::run_stage(const std::string& up, const std::string& down) {
  Inbound in{up, std::vector<double>(o_.size), {}, false};
  bool down_ok = true;
  double last = mono_now();
  for (;;) {
    post(m_, full(up), in);
    if (in.closed) break;
    mw_status s = MW_ERR_TIMEOUT;
    while ((s = in.work.wait(1000)) == MW_ERR_TIMEOUT) {
      if (mono_now() - last > o_.stall_limit) throw ScenarioFail("no input on " + up);
    }
    last = mono_now();
    if (s != MW_OK) {
      report().emit({{"event", "recv_failed"},
                     {"world", up},
                     {"status", mw_status_name(s)},
                     {"detail", mw_last_error()}});
      break;
    }
    if (in.buf[0] < 0) break;
    ++forwarded_;
    if (down_ok) down_ok = send(down, 1, in.buf);
    if (victim() && forwarded_ == o_.kill_at) die(forwarded_);
  }
  if (down_ok) {
    std::vector<double> marker(o_.size, -1.0);
    send(down, 1, marker);
  }
}

void Node::run_sink() {
  std::vector<Inbound> ins;
  for (const char* w : {"w3", "w4"}) ins.push_back({w, std::vector<double>(o_.size), {}, false});
  for (auto& in : ins) post(m_, full(in.world), in);
  double last = mono_now();
  auto open = [&] {
    bool any = std::any_of(ins.begin(), ins.end(), [](const Inbound& i) { return !i.closed; });
    return any || recovery_state_ == 1 || (recovery_state_ == 2 && !ranks_.count("w7"));
  };
  while (open()) {
    bool progressed = false;
    if (recovery_ready()) {
      ins.push_back({"w7", std::vector<double>(o_.size), {}, false});
      post(m_, full("w7"), ins.back());
    }
    for (auto& in : ins) {
      if (in.closed) continue;
      mw_work_state st = in.work.poll();
      if (st == MW_WORK_PENDING) continue;
      progressed = true;
      last = mono_now();
      if (st == MW_WORK_FAILED) {
        mw_status s = in.work.wait(0);
        report().emit({{"event", "recv_failed"},
                       {"world", in.world},
                       {"status", mw_status_name(s)},
                       {"detail", mw_last_error()}});
        in.closed = true;
        if (o_.recover && in.world != "w7") {
          mw_remove_world(m_.get(), full(in.world).c_str());
          removed_.push_back(in.world);
          start_recovery("w7", 1);
        }
        continue;
      }
      if (in.buf[0] < 0) {
        in.closed = true;
        continue;
      }
      ++received_;
      ++received_on_[in.world];
      last_recv_on_[in.world] = last;
      report().emit({{"event", "recv"},
                     {"world", in.world},
                     {"seq", static_cast<int>(in.buf[0])},
                     {"latency", last - in.buf[1]}});
      if (victim() && received_ == o_.kill_at) die(received_);
      post(m_, full(in.world), in);
    }
    if (!progressed) {
      if (mono_now() - last > o_.stall_limit) throw ScenarioFail("sink stalled");
      std::this_thread::sleep_for(std::chrono::milliseconds(1));
    }
  }
  if (recovery_.joinable()) recovery_.join();
}

int Node::verdict() {
  sleep_until(data_end_ + o_.settle);
  std::set<std::string> expected, observed;
  for (const auto& [w, rank] : ranks_) {
    if (!o_.kill.empty() && members_of(w).count(o_.kill)) expected.insert(w);
    // Worlds removed after a failed operation count as broken too.
    bool removed = std::find(removed_.begin(), removed_.end(), w) != removed_.end();
    if (removed || m_.broken_event(full(w))) observed.insert(w);
  }
  std::vector<std::string> reasons;
  if (expected != observed) reasons.push_back("broken set differs from the victim's worlds");

  // One collective round on every world still standing.
  struct Round {
    std::string world;
    double send, recv = 0;
    Work work;
  };
  std::vector<Round> rounds;
  for (const auto& [w, rank] : ranks_) {
    if (m_.state(full(w)) != MW_WORLD_READY) continue;
    rounds.push_back({w, static_cast<double>(rank + 1), 0, {}});
  }
  for (auto& r : rounds) {
    check(mw_iall_reduce(m_.comm(), full(r.world).c_str(), MW_F64, MW_SUM, &r.send, &r.recv, 1,
                         r.work.out()),
          "all_reduce " + r.world);
  }
  json round_results = json::object();
  for (auto& r : rounds) {
    mw_status s = r.work.wait(15000);
    bool ok = s == MW_OK && r.recv == 3.0;
    round_results[r.world] = ok;
    if (!ok) reasons.push_back("post-failure round failed on " + r.world);
  }
  for (const auto& w : expected) {
    if (!round_results.contains(w)) round_results[w] = nullptr;
  }

  std::string death_text;
  std::optional<double> death_at;
  if (!o_.kill.empty() && store_.get(key("death"), &death_text)) death_at = std::stod(death_text);
  if (!o_.kill.empty() && !death_at) reasons.push_back("victim never died");
  if (role() == "P4") {
    if (o_.kill.empty() && received_ != o_.rounds) reasons.push_back("sink missed messages");
    if (death_at && (o_.kill == "P2" || o_.kill == "P3")) {
      std::string other = o_.kill == "P2" ? "w4" : "w3";
      if (last_recv_on_[other] <= *death_at) reasons.push_back("no traffic after the failure");
    }
    if (o_.recover && received_on_["w7"] == 0) reasons.push_back("nothing arrived through P5");
  }
  if (role() == "P1" && o_.recover && sent_recovered_ == 0) {
    reasons.push_back("nothing sent through P5");
  }
  if (role() == "P5" && forwarded_ == 0) reasons.push_back("P5 forwarded nothing");

  bool pass = reasons.empty();
  report().emit({{"event", "summary"},
                 {"victim", o_.kill},
                 {"expected_broken", expected},
                 {"observed_broken", observed},
                 {"rounds", round_results},
                 {"sent", sent_},
                 {"sent_recovered", sent_recovered_},
                 {"forwarded", forwarded_},
                 {"received", received_},
                 {"received_on", received_on_},
                 {"pass", pass},
                 {"reasons", reasons}});

  int survivors = 4 - (o_.kill.empty() ? 0 : 1) + (o_.recover ? 1 : 0);
  store_.barrier(key("end"), survivors, 60000);
  for (const auto& [w, rank] : ranks_) mw_remove_world(m_.get(), full(w).c_str());
  return pass ? kExitPass : kExitFail;
}

int Node::run() {
  const auto& layout = base_layout();
  auto it = layout.find(role());
  if (it == layout.end()) throw EnvError("unknown role " + role() + " (P1..P5)");
  if (!o_.kill.empty() && o_.kill != "P1" && o_.kill != "P2" && o_.kill != "P3" &&
      o_.kill != "P4") {
    throw EnvError("--kill must name one of P1..P4");
  }
  if (o_.recover && o_.kill != "P2" && o_.kill != "P3") {
    throw EnvError("--recover needs a middle stage (P2 or P3) as the victim");
  }
  if (role() == "P5" && !o_.recover) throw EnvError("P5 only runs with --recover");

  if (role() == "P5") {
    // Standby until P1 and P4 come for it.
    initialize(it->second, o_.init_timeout_ms + 60000);
    run_stage("w6", "w7");
  } else {
    initialize(it->second, o_.init_timeout_ms);
    store_.barrier(key("start"), 4, o_.init_timeout_ms);
    if (role() == "P1") {
      run_source();
    } else if (role() == "P4") {
      run_sink();
    } else {
      const auto& worlds = it->second;
      run_stage(worlds[0].world, worlds[1].world);
    }
  }
  data_end_ = mono_now();
  report().emit({{"event", "data_done"}});
  return verdict();
}

}  // namespace

void add_rhombus_command(CLI::App& app, Runner& run) {
  auto* cmd = app.add_subcommand("rhombus", "rhombus pipeline with optional kill and recovery");
  auto o = std::make_shared<RhombusOptions>();
  add_common(cmd, o->common);
  cmd->add_option("--role", o->common.role, "P1..P5")->required();
  cmd->add_option("--rounds", o->rounds, "messages P1 sends");
  cmd->add_option("--rate", o->rate, "messages per second from P1");
  cmd->add_option("--kill", o->kill, "victim role");
  cmd->add_option("--kill-at", o->kill_at, "victim dies after handling this many messages");
  cmd->add_flag("--recover", o->recover, "bring in P5 after a middle stage fails");
  cmd->add_option("--size", o->size, "message length in doubles")->check(CLI::Range(2, 1 << 20));
  cmd->add_option("--settle", o->settle, "seconds to wait for detection after the data phase");
  cmd->add_option("--init-timeout-ms", o->init_timeout_ms, "world initialization timeout");
  cmd->callback([&run, o] {
    run = [o] {
      report().open(o->common.out, o->common.role);
      Node node(*o, store_address(o->common));
      return node.run();
    };
  });
}

}  // namespace mwctl
