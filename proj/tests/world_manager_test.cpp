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

#include <gtest/gtest.h>

#include <algorithm>
#include <atomic>
#include <future>
#include <map>
#include <random>
#include <set>

#include "test_util.hpp"

namespace mw {
namespace {

using testing::descriptor;
using testing::Group;
using testing::LocalStore;
using testing::run_parallel;
using testing::test_options;

double seconds(Clock::duration d) { return std::chrono::duration<double>(d).count(); }

template <typename F>
ErrorKind error_kind(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no error raised";
  return ErrorKind::kAborted;
}

Buffer one(float x) { return Buffer::from(std::vector<float>{x}); }

// One all-reduce round on every member of a fully formed group.
void sum_round(Group& g, const std::string& world, std::vector<int> members) {
  run_parallel(static_cast<int>(members.size()), [&](int r) {
    auto out = g.comm(members[r]).iall_reduce(world, one(1.0f), ReduceOp::kSum).wait(Millis(5000));
    if (std::get<Buffer>(out).to_vector<float>()[0] != static_cast<float>(members.size())) {
      throw std::runtime_error("bad sum in " + world);
    }
  });
}

TEST(WorldManagerExamples, TwoMembersBecomeReady) {
  LocalStore s;
  Group g(2, s.addr);
  g.form("w1");
  EXPECT_EQ(g[0].world_status("w1"), WorldState::kReady);
  EXPECT_EQ(g[1].world_status("w1"), WorldState::kReady);
  EXPECT_EQ(g[0].world_peers("w1").size(), 2u);
  sum_round(g, "w1", {0, 1});
}

TEST(WorldManagerExamples, LoneMemberTimesOutAndIsBroken) {
  LocalStore s;
  WorldManager m(test_options());
  auto t0 = Clock::now();
  EXPECT_EQ(error_kind([&] { m.initialize_world(descriptor("alone", 2, 0, s.addr), Millis(1000)); }),
            ErrorKind::kTimeout);
  double took = seconds(Clock::now() - t0);
  EXPECT_GE(took, 0.95);
  EXPECT_LT(took, 3.0);
  EXPECT_EQ(m.world_status("alone"), WorldState::kBroken);
  // The rank's rendezvous keys are withdrawn.
  StoreClient c(s.addr);
  EXPECT_EQ(c.get("world/alone/0/rank/0/addr"), std::nullopt);
}

TEST(WorldManagerExamples, UnknownNames) {
  WorldManager m(test_options());
  EXPECT_EQ(error_kind([&] { m.world_status("never"); }), ErrorKind::kUnknownWorld);
  EXPECT_EQ(error_kind([&] { m.remove_world("never"); }), ErrorKind::kUnknownWorld);
  EXPECT_EQ(&m.communicator(), &m.communicator());
  EXPECT_EQ(error_kind([&] { m.communicator().isend("never", 1, one(0)); }),
            ErrorKind::kUnknownWorld);
}

TEST(WorldManagerExamples, RemoveClearsStoreAndIsIdempotent) {
  LocalStore s;
  Group g(2, s.addr);
  g.form("gone");
  StoreClient c(s.addr);
  ASSERT_TRUE(c.get("world/gone/0/size"));
  g[0].remove_world("gone");
  EXPECT_EQ(g[0].world_status("gone"), WorldState::kRemoved);
  EXPECT_EQ(c.get("world/gone/0/size"), std::nullopt);
  EXPECT_EQ(c.get("world/gone/0/rank/1/addr"), std::nullopt);
  g[0].remove_world("gone");
  EXPECT_EQ(g[0].world_status("gone"), WorldState::kRemoved);
  g[1].remove_world("gone");
}

TEST(WorldManagerExamples, RemoveAbortsPendingRecv) {
  LocalStore s;
  Group g(2, s.addr);
  g.form("rm");
  auto h = g.comm(0).irecv("rm", 1, DType::kF32, 1);
  g[0].remove_world("rm");
  try {
    h.wait(Millis(2000));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kAborted);
    EXPECT_EQ(e.world(), "rm");
  }
  EXPECT_EQ(h.notifications(), 1);
}

TEST(WorldManagerExamples, MarkBrokenIsolatesOneWorld) {
  LocalStore s;
  Group g(2, s.addr);
  g.form("bad");
  g.form("good");
  std::atomic<int> broken_events{0};
  g[0].set_broken_listener([&](const std::string& w, const Error&) {
    EXPECT_EQ(w, "bad");
    broken_events.fetch_add(1);
  });
  auto r = g.comm(0).irecv("bad", 1, DType::kF32, 1);
  auto big = Buffer::zeros(DType::kF32, 8 << 20);  // too large to be fully buffered
  auto snd = g.comm(0).isend("bad", 1, big);
  Error cause(ErrorKind::kRemoteWorker, "rank 1 is gone", "bad");
  g[0].mark_broken("bad", cause);
  g[0].mark_broken("bad", cause);
  for (auto* h : {&r, &snd}) {
    try {
      h->wait(Millis(2000));
      ADD_FAILURE();
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::kBrokenWorld);
      EXPECT_NE(std::string(e.what()).find("rank 1 is gone"), std::string::npos);
    }
    EXPECT_EQ(h->notifications(), 1);
  }
  EXPECT_EQ(broken_events.load(), 1);
  EXPECT_EQ(g[0].world_status("bad"), WorldState::kBroken);
  EXPECT_EQ(error_kind([&] { g.comm(0).isend("bad", 1, one(0)); }), ErrorKind::kBrokenWorld);
  EXPECT_EQ(g[0].world_status("good"), WorldState::kReady);
  sum_round(g, "good", {0, 1});
  // A Broken name cannot be reused until it is removed.
  EXPECT_EQ(error_kind([&] { g[0].initialize_world(descriptor("bad", 2, 0, s.addr)); }),
            ErrorKind::kWorldExists);
  g[0].remove_world("bad");
  EXPECT_EQ(g[0].world_status("bad"), WorldState::kRemoved);
}

TEST(WorldManagerExamples, SecondLocalInitIsWorldExists) {
  LocalStore s;
  WorldManager m(test_options());
  auto first = std::async(std::launch::async, [&] {
    return error_kind([&] { m.initialize_world(descriptor("dup", 2, 0, s.addr), Millis(1000)); });
  });
  std::this_thread::sleep_for(Millis(100));
  EXPECT_EQ(m.world_status("dup"), WorldState::kInitializing);
  EXPECT_EQ(error_kind([&] { m.initialize_world(descriptor("dup", 2, 0, s.addr), Millis(1000)); }),
            ErrorKind::kWorldExists);
  EXPECT_EQ(first.get(), ErrorKind::kTimeout);
}

TEST(WorldManagerExamples, SizeMismatch) {
  LocalStore s;
  WorldManager a(test_options()), b(test_options());
  auto leader = std::async(std::launch::async, [&] {
    return error_kind([&] { a.initialize_world(descriptor("sz", 2, 0, s.addr), Millis(1500)); });
  });
  EXPECT_EQ(error_kind([&] { b.initialize_world(descriptor("sz", 3, 1, s.addr), Millis(1000)); }),
            ErrorKind::kSizeMismatch);
  EXPECT_EQ(leader.get(), ErrorKind::kTimeout);
}

TEST(WorldManagerExamples, RankConflict) {
  LocalStore s;
  Group g(4, s.addr);
  // Members 0 and 1 take ranks 0 and 1 of a size-3 world.
  auto f0 = std::async(std::launch::async, [&] {
    g[0].initialize_world(descriptor("rc", 3, 0, s.addr), Millis(10000));
  });
  auto f1 = std::async(std::launch::async, [&] {
    g[1].initialize_world(descriptor("rc", 3, 1, s.addr), Millis(10000));
  });
  StoreClient c(s.addr);
  c.wait("world/rc/0/rank/1/addr", Millis(5000));
  // Member 2 claims rank 1 as well.
  EXPECT_EQ(error_kind([&] { g[2].initialize_world(descriptor("rc", 3, 1, s.addr), Millis(2000)); }),
            ErrorKind::kRankConflict);
  g[3].initialize_world(descriptor("rc", 3, 2, s.addr), Millis(10000));
  f0.get();
  f1.get();
  sum_round(g, "rc", {0, 1, 3});
}

TEST(WorldManagerExamples, NameReuseAfterRemoveGetsFreshEpoch) {
  LocalStore s;
  Group g(2, s.addr);
  g.form("again");
  EXPECT_EQ(g[0].world_epoch("again"), 0u);
  auto old_instance = g[0].world_instance("again");
  g[0].remove_world("again");
  g[1].remove_world("again");
  g.form("again");
  EXPECT_EQ(g[0].world_epoch("again"), 1u);
  EXPECT_EQ(g[1].world_epoch("again"), 1u);
  EXPECT_NE(g[0].world_instance("again"), old_instance);
  sum_round(g, "again", {0, 1});
}

TEST(WorldManagerExamples, InitializationDoesNotStallOtherWorlds) {
  LocalStore s;
  Group g(3, s.addr);
  g.form("busy", {0, 1});
  std::atomic<bool> stop{false};
  std::thread streamer([&] {
    while (!stop) g.comm(1).isend("busy", 0, Buffer::zeros(DType::kF32, 1024)).wait(Millis(5000));
  });
  // Member 0 waits in a rendezvous for 600 ms while receiving on "busy".
  auto init = std::async(std::launch::async, [&] {
    g[0].initialize_world(descriptor("late", 2, 0, s.addr), Millis(10000));
  });
  auto joiner = std::async(std::launch::async, [&] {
    std::this_thread::sleep_for(Millis(600));
    g[2].initialize_world(descriptor("late", 2, 1, s.addr), Millis(10000));
  });
  double max_gap = 0;
  auto last = Clock::now();
  int received = 0;
  while (init.wait_for(Millis(0)) != std::future_status::ready) {
    g.comm(0).irecv("busy", 1, DType::kF32, 1024).wait(Millis(5000));
    auto now = Clock::now();
    max_gap = std::max(max_gap, seconds(now - last));
    last = now;
    ++received;
  }
  init.get();
  joiner.get();
  stop = true;
  // Drain whatever the streamer still has in flight.
  g.comm(0).irecv("busy", 1, DType::kF32, 1024);
  streamer.join();
  RecordProperty("max_gap_ms", std::to_string(max_gap * 1e3));
  EXPECT_GT(received, 10);
  EXPECT_LT(max_gap, 0.1);
}

TEST(WorldManagerProperties, OnlineInstantiationLeavesExistingWorldsAlone) {
  LocalStore s;
  Group g(3, s.addr);
  g.form("base", {0, 1});
  sum_round(g, "base", {0, 1});
  auto epoch = g[0].world_epoch("base");
  auto instance = g[0].world_instance("base");
  auto ids = g.comm(0).connection_ids(instance);
  ASSERT_EQ(ids.size(), 2u);
  ASSERT_NE(ids[1], 0u);
  for (int i = 0; i < 4; ++i) {
    std::string name = "extra" + std::to_string(i);
    g.form(name, {0, 2});
    sum_round(g, name, {0, 2});
  }
  EXPECT_EQ(g[0].world_epoch("base"), epoch);
  EXPECT_EQ(g[0].world_instance("base"), instance);
  EXPECT_EQ(g.comm(0).connection_ids(instance), ids);
  sum_round(g, "base", {0, 1});
  EXPECT_EQ(g.comm(0).connection_ids(instance), ids);
}

// Submission cost to one world must not depend on how many others exist.
TEST(WorldManagerProperties, SubmitCostIndependentOfWorldCount) {
  LocalStore s;
  Group g(2, s.addr);
  g.form("target");
  auto batch_median = [&] {
    std::vector<double> batches;
    for (int b = 0; b < 21; ++b) {
      auto t0 = Clock::now();
      for (int i = 0; i < 500; ++i) g.comm(0).irecv("target", 1, DType::kF32, 1);
      batches.push_back(seconds(Clock::now() - t0));
    }
    std::sort(batches.begin(), batches.end());
    return batches[batches.size() / 2];
  };
  batch_median();  // warm up
  double alone = batch_median();
  for (int i = 0; i < 16; ++i) g.form("other" + std::to_string(i));
  double crowded = batch_median();
  double again = batch_median();
  RecordProperty("alone_us", std::to_string(alone * 1e6));
  RecordProperty("crowded_us", std::to_string(crowded * 1e6));
  double ratio = std::min(crowded, again) / alone;
  EXPECT_GT(ratio, 0.8);
  EXPECT_LT(ratio, 1.2);
}

// Concurrent init/remove/mark_broken never produce an illegal transition,
// and each world's observed history is a connected path.
TEST(WorldManagerProperties, TransitionsStayLegalUnderStress) {
  LocalStore s;
  Group g(2, s.addr);
  std::mutex mu;
  std::map<std::pair<int, std::string>, std::vector<std::pair<WorldState, WorldState>>> seen;
  for (int m = 0; m < 2; ++m) {
    g[m].set_transition_observer([&, m](const std::string& w, WorldState from, WorldState to) {
      std::lock_guard<std::mutex> lock(mu);
      seen[{m, w}].push_back({from, to});
    });
  }
  std::vector<std::string> names = {"s0", "s1", "s2"};
  run_parallel(4, [&](int t) {
    int m = t % 2;
    std::mt19937 rng(31 + t);
    for (int i = 0; i < 25; ++i) {
      const std::string& w = names[rng() % names.size()];
      try {
        switch (rng() % 3) {
          case 0:
            g[m].initialize_world(descriptor(w, 2, m, s.addr), Millis(300));
            break;
          case 1:
            g[m].remove_world(w);
            break;
          default:
            g[m].mark_broken(w, Error(ErrorKind::kRemoteWorker, "stress", w));
            break;
        }
      } catch (const Error&) {
      }
    }
  });
  std::size_t total = 0;
  for (auto& [key, path] : seen) {
    for (std::size_t i = 0; i < path.size(); ++i) {
      EXPECT_TRUE(is_legal_transition(path[i].first, path[i].second))
          << key.second << ": " << to_string(path[i].first) << " -> " << to_string(path[i].second);
      if (i > 0 && path[i - 1].second != WorldState::kRemoved) {
        EXPECT_EQ(path[i - 1].second, path[i].first) << key.second;
      }
    }
    total += path.size();
  }
  RecordProperty("transitions", std::to_string(total));
  EXPECT_GT(total, 10u);
}

TEST(WorldManagerExamples, LegalTransitionTable) {
  using S = WorldState;
  const S all[] = {S::kInitializing, S::kReady, S::kBroken, S::kRemoved};
  std::set<std::pair<S, S>> legal = {{S::kInitializing, S::kReady},
                                     {S::kInitializing, S::kBroken},
                                     {S::kReady, S::kBroken},
                                     {S::kReady, S::kRemoved},
                                     {S::kBroken, S::kRemoved}};
  for (S a : all) {
    for (S b : all) EXPECT_EQ(is_legal_transition(a, b), legal.count({a, b}) == 1);
  }
}

}  // namespace
}  // namespace mw
