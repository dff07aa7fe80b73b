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

// A generic world member for fault-injection harnesses: joins the listed
// worlds, optionally drives continuous all-reduce traffic on each of them,
// and records readiness and broken notifications.
//
// Traffic stops by agreement: every round carries a stop vote, reduced with
// MAX, so all members of a world leave in the same round.

#include <thread>

#include "common.hpp"

namespace mwctl {

namespace {

struct MemberOptions {
  Common common;
  std::vector<std::string> worlds;  // name:size:rank
  double duration = 10;
  bool traffic = false;
  int elems = 1024;
  int64_t clock_offset_ms = 0;
  int parties = 0;
  int64_t init_timeout_ms = 30000;
  int64_t op_timeout_ms = 10000;
};

struct Spec {
  std::string name;
  int size;
  int rank;
};

Spec parse_spec(const std::string& text, const std::string& prefix) {
  auto a = text.find(':');
  auto b = text.find(':', a == std::string::npos ? a : a + 1);
  if (a == std::string::npos || b == std::string::npos) {
    throw EnvError("--worlds entries are name:size:rank, got " + text);
  }
  try {
    return {prefix + "-" + text.substr(0, a), std::stoi(text.substr(a + 1, b - a - 1)),
            std::stoi(text.substr(b + 1))};
  } catch (const std::exception&) {
    throw EnvError("bad world spec " + text);
  }
}

struct Traffic {
  int64_t rounds = 0;
  mw_status status = MW_OK;
  std::string detail;
};

Traffic drive(Manager& m, const MemberOptions& o, const std::string& world, double stop_at) {
  Traffic t;
  std::vector<double> in(o.elems), out(o.elems);
  for (;;) {
    in[0] = mono_now() >= stop_at ? 1.0 : 0.0;
    for (int i = 1; i < o.elems; ++i) in[i] = static_cast<double>(t.rounds + i);
    Work w;
    mw_status s = mw_iall_reduce(m.comm(), world.c_str(), MW_F64, MW_MAX, in.data(), out.data(),
                                 in.size(), w.out());
    if (s == MW_OK) s = w.wait(o.op_timeout_ms);
    if (s != MW_OK) {
      t.status = s;
      t.detail = mw_last_error();
      return t;
    }
    // Members run in lockstep, so every slot reduces to this member's input.
    for (int i = 1; i < o.elems; ++i) {
      if (out[i] != in[i]) {
        t.status = MW_ERR_INTERNAL;
        t.detail = "round " + std::to_string(t.rounds) + " slot " + std::to_string(i) +
                   " reduced to " + std::to_string(out[i]);
        return t;
      }
    }
    ++t.rounds;
    if (out[0] > 0) return t;
  }
}

int run_member(const MemberOptions& o, const std::string& store_addr) {
  std::vector<Spec> specs;
  for (const auto& w : o.worlds) specs.push_back(parse_spec(w, o.common.prefix));
  mw_manager_options mo;
  mw_manager_options_default(&mo);
  mo.clock_offset_ms = o.clock_offset_ms;
  mo.op_timeout_ms = 0;
  Manager m(&mo);

  std::vector<mw_status> st(specs.size(), MW_OK);
  std::vector<std::string> err(specs.size());
  {
    std::vector<std::thread> ts;
    for (size_t i = 0; i < specs.size(); ++i) {
      ts.emplace_back([&, i] {
        st[i] = m.initialize(specs[i].name, specs[i].size, specs[i].rank, store_addr,
                             o.init_timeout_ms);
        if (st[i] != MW_OK) err[i] = mw_last_error();
      });
    }
    for (auto& t : ts) t.join();
  }
  bool init_ok = true;
  for (size_t i = 0; i < specs.size(); ++i) {
    if (st[i] == MW_OK) {
      report().emit({{"event", "ready"}, {"world", specs[i].name}, {"rank", specs[i].rank}});
    } else {
      init_ok = false;
      report().emit({{"event", "init_failed"},
                     {"world", specs[i].name},
                     {"status", mw_status_name(st[i])},
                     {"detail", err[i]}});
    }
  }
  if (!init_ok) return kExitFail;

  double stop_at = mono_now() + o.duration;
  std::vector<Traffic> results(specs.size());
  if (o.traffic) {
    std::vector<std::thread> ts;
    for (size_t i = 0; i < specs.size(); ++i) {
      ts.emplace_back([&, i] { results[i] = drive(m, o, specs[i].name, stop_at); });
    }
    for (auto& t : ts) t.join();
  } else {
    sleep_until(stop_at);
  }

  json traffic = json::object();
  bool traffic_ok = true;
  for (size_t i = 0; i < specs.size() && o.traffic; ++i) {
    traffic[specs[i].name] = {{"rounds", results[i].rounds},
                              {"status", mw_status_name(results[i].status)},
                              {"detail", results[i].detail}};
    traffic_ok = traffic_ok && results[i].status == MW_OK;
  }
  // Snapshot before anyone leaves: departures after this point are expected.
  auto events = m.broken_events();
  json broken = json::array();
  for (const auto& e : events) broken.push_back(e.world);
  bool pass = traffic_ok && (!o.traffic || events.empty());
  report().emit({{"event", "summary"},
                 {"traffic", traffic},
                 {"broken", broken},
                 {"pass", pass}});
  if (o.parties > 0) {
    Store store(store_addr);
    store.barrier(o.common.prefix + "/member/done", o.parties, 60000);
  }
  for (const auto& s : specs) mw_remove_world(m.get(), s.name.c_str());
  return pass ? kExitPass : kExitFail;
}

}  // namespace

void add_member_command(CLI::App& app, Runner& run) {
  auto* cmd = app.add_subcommand("member", "join worlds and optionally drive traffic");
  auto o = std::make_shared<MemberOptions>();
  add_common(cmd, o->common);
  cmd->add_option("--role", o->common.role, "label for report records");
  cmd->add_option("--worlds", o->worlds, "name:size:rank entries")->delimiter(',')->required();
  cmd->add_option("--duration", o->duration, "seconds of traffic or idling after ready");
  cmd->add_flag("--traffic", o->traffic, "continuous all-reduce on every world");
  cmd->add_option("--elems", o->elems, "all-reduce length in doubles")->check(CLI::Range(1, 1 << 24));
  cmd->add_option("--clock-offset-ms", o->clock_offset_ms, "skew added to the watchdog clock");
  cmd->add_option("--parties", o->parties, "members that meet at the end (0: none)");
  cmd->add_option("--init-timeout-ms", o->init_timeout_ms, "world initialization timeout");
  cmd->add_option("--op-timeout-ms", o->op_timeout_ms, "per-round wait limit");
  cmd->callback([&run, o] {
    run = [o] {
      report().open(o->common.out, o->common.role);
      return run_member(*o, store_address(o->common));
    };
  });
}

}  // namespace mwctl
