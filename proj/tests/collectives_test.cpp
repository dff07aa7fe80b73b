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

#include "mw/collectives.hpp"

#include <gtest/gtest.h>

#include <random>

#include "collective_cases.hpp"
#include "oracle.hpp"
#include "test_util.hpp"

namespace mw {
namespace {

using testing::Group;
using testing::LocalStore;

constexpr Millis kWait{20000};

template <typename T>
std::vector<T> as(const WorkResult& r) {
  return std::get<Buffer>(r).to_vector<T>();
}

// Submits one call per rank and waits for all of them.
std::vector<WorkResult> collective(Group& g, const std::string& world,
                                   const std::function<WorkHandle(Communicator&, Rank)>& f) {
  std::vector<WorkHandle> hs;
  for (int r = 0; r < g.size(); ++r) hs.push_back(f(g.comm(r), r));
  std::vector<WorkResult> out;
  for (auto& h : hs) out.push_back(h.wait(kWait));
  return out;
}

TEST(ReduceInto, MatchesOracleOnRandomInputs) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 400; ++trial) {
    DType d = kAllDTypes[trial % 5];
    auto op = static_cast<ReduceOp>((trial / 5) % 4);
    std::size_t n = rng() % 300;
    int ranks = 2 + static_cast<int>(rng() % 4);
    std::vector<oracle::Bytes> in;
    for (int r = 0; r < ranks; ++r) in.push_back(oracle::random_payload(rng, d, n));
    Buffer acc = oracle::to_buffer(d, in[0]);
    for (int r = 1; r < ranks; ++r) reduce_into(op, acc, oracle::to_buffer(d, in[r]));
    ASSERT_EQ(oracle::to_bytes(acc), oracle::reduce(d, op, in))
        << dtype_name(d) << " " << reduce_op_name(op) << " n=" << n;
  }
}

TEST(ReduceInto, IntegerSumWraps) {
  Buffer acc = Buffer::from<std::int32_t>(std::vector<std::int32_t>{INT32_MAX});
  reduce_into(ReduceOp::kSum, acc, Buffer::from<std::int32_t>(std::vector<std::int32_t>{1}));
  EXPECT_EQ(acc.to_vector<std::int32_t>()[0], INT32_MIN);
  Buffer u = Buffer::from<std::uint8_t>(std::vector<std::uint8_t>{200});
  reduce_into(ReduceOp::kProd, u, Buffer::from<std::uint8_t>(std::vector<std::uint8_t>{2}));
  EXPECT_EQ(u.to_vector<std::uint8_t>()[0], 144);
}

TEST(ReduceInto, ShapeMismatchIsProtocol) {
  Buffer a(DType::kF32, 2), b(DType::kF32, 3);
  try {
    reduce_into(ReduceOp::kSum, a, b);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kProtocol);
  }
}

CollectiveCall call(OpKind op, Rank root, std::size_t inputs) {
  CollectiveCall c;
  c.world = "w";
  c.op = op;
  c.root = root;
  for (std::size_t i = 0; i < inputs; ++i) c.inputs.push_back(Buffer::zeros(DType::kF32, 1));
  return c;
}

void expect_protocol(const CollectiveCall& c, Rank rank, int size) {
  try {
    validate_call(c, rank, size);
    FAIL() << "accepted " << op_kind_name(c.op);
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kProtocol);
  }
}

TEST(ValidateCall, RejectsSelfSend) { expect_protocol(call(OpKind::kSend, 1, 1), 1, 3); }

TEST(ValidateCall, RejectsPeerOutOfRange) {
  expect_protocol(call(OpKind::kRecv, 3, 0), 0, 3);
  expect_protocol(call(OpKind::kBroadcast, -1, 1), 0, 3);
}

TEST(ValidateCall, ScatterNeedsOnePartPerRank) {
  expect_protocol(call(OpKind::kScatter, 0, 2), 0, 3);
  EXPECT_NO_THROW(validate_call(call(OpKind::kScatter, 0, 3), 0, 3));
  // Non-roots supply no parts.
  EXPECT_NO_THROW(validate_call(call(OpKind::kScatter, 0, 0), 1, 3));
}

TEST(ValidateCall, OutputListLengthMustMatchWorldSize) {
  auto c = call(OpKind::kAllGather, 0, 1);
  c.outputs = {Buffer(DType::kF32, 1), Buffer(DType::kF32, 1)};
  expect_protocol(c, 0, 3);
  c.outputs.push_back(Buffer(DType::kF32, 1));
  EXPECT_NO_THROW(validate_call(c, 0, 3));
}

class CollectiveExamples : public ::testing::Test {
 protected:
  LocalStore store;
};

TEST_F(CollectiveExamples, SendRecvIdentity) {
  Group g(2, store.addr);
  g.form("w");
  auto s = g.comm(0).isend("w", 1, Buffer::from<float>(std::vector<float>{1, 2, 3}));
  auto r = g.comm(1).irecv("w", 0, DType::kF32, 3);
  EXPECT_EQ(as<float>(r.wait(kWait)), (std::vector<float>{1, 2, 3}));
  s.wait(kWait);
}

TEST_F(CollectiveExamples, TenSendsArriveInOrder) {
  Group g(2, store.addr);
  g.form("w");
  std::vector<WorkHandle> sends, recvs;
  for (int i = 0; i < 10; ++i) {
    sends.push_back(g.comm(0).isend("w", 1, Buffer::from<std::int32_t>(std::vector<int>{i})));
  }
  for (int i = 0; i < 10; ++i) recvs.push_back(g.comm(1).irecv("w", 0, DType::kI32, 1));
  for (int i = 0; i < 10; ++i) EXPECT_EQ(as<std::int32_t>(recvs[i].wait(kWait))[0], i);
}

TEST_F(CollectiveExamples, SelfSendIsProtocol) {
  Group g(2, store.addr);
  g.form("w");
  try {
    g.comm(0).isend("w", 0, Buffer::zeros(DType::kF32, 1));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kProtocol);
  }
}

TEST_F(CollectiveExamples, RecvShapeMismatchIsProtocol) {
  Group g(2, store.addr);
  g.form("w");
  g.comm(0).isend("w", 1, Buffer::zeros(DType::kF32, 5));
  auto r = g.comm(1).irecv("w", 0, DType::kF32, 4);
  try {
    r.wait(kWait);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kProtocol);
  }
  // A single mismatched receive leaves the world usable.
  g.comm(0).isend("w", 1, Buffer::from<float>(std::vector<float>{4}));
  EXPECT_EQ(as<float>(g.comm(1).irecv("w", 0, DType::kF32, 1).wait(kWait)),
            std::vector<float>{4});
}

TEST_F(CollectiveExamples, BroadcastSizeThree) {
  Group g(3, store.addr);
  g.form("w");
  auto res = collective(g, "w", [](Communicator& c, Rank r) {
    return c.ibroadcast("w", 0,
                        r == 0 ? Buffer::from<std::int32_t>(std::vector<std::int32_t>{7, 8})
                               : Buffer(DType::kI32, 2));
  });
  for (auto& x : res) EXPECT_EQ(as<std::int32_t>(x), (std::vector<std::int32_t>{7, 8}));
}

TEST_F(CollectiveExamples, AllReduceSumSizeThree) {
  Group g(3, store.addr);
  g.form("w");
  std::vector<std::vector<float>> in = {{1, 2}, {3, 4}, {5, 6}};
  auto res = collective(g, "w", [&](Communicator& c, Rank r) {
    return c.iall_reduce("w", Buffer::from<float>(in[r]), ReduceOp::kSum);
  });
  for (auto& x : res) EXPECT_EQ(as<float>(x), (std::vector<float>{9, 12}));
}

TEST_F(CollectiveExamples, AllReduceMaxI64) {
  Group g(2, store.addr);
  g.form("w");
  std::vector<std::vector<std::int64_t>> in = {{1, 9}, {5, 3}};
  auto res = collective(g, "w", [&](Communicator& c, Rank r) {
    return c.iall_reduce("w", Buffer::from<std::int64_t>(in[r]), ReduceOp::kMax);
  });
  for (auto& x : res) EXPECT_EQ(as<std::int64_t>(x), (std::vector<std::int64_t>{5, 9}));
}

TEST_F(CollectiveExamples, ReduceToRankOne) {
  Group g(3, store.addr);
  g.form("w");
  std::vector<std::vector<float>> in = {{1, 2}, {3, 4}, {5, 6}};
  auto res = collective(g, "w", [&](Communicator& c, Rank r) {
    return c.ireduce("w", 1, Buffer::from<float>(in[r]), ReduceOp::kSum);
  });
  EXPECT_EQ(as<float>(res[1]), (std::vector<float>{9, 12}));
  EXPECT_TRUE(std::holds_alternative<std::monostate>(res[0]));
}

TEST_F(CollectiveExamples, ReduceProd) {
  Group g(2, store.addr);
  g.form("w");
  std::vector<std::vector<float>> in = {{2, 3}, {4, 5}};
  auto res = collective(g, "w", [&](Communicator& c, Rank r) {
    return c.ireduce("w", 0, Buffer::from<float>(in[r]), ReduceOp::kProd);
  });
  EXPECT_EQ(as<float>(res[0]), (std::vector<float>{8, 15}));
}

TEST_F(CollectiveExamples, AllGatherAndEmptyBuffers) {
  Group g(3, store.addr);
  g.form("w");
  auto res = collective(g, "w", [](Communicator& c, Rank r) {
    return c.iall_gather("w", Buffer::from<std::int32_t>(std::vector<std::int32_t>{r}));
  });
  for (auto& x : res) {
    auto& list = std::get<std::vector<Buffer>>(x);
    ASSERT_EQ(list.size(), 3u);
    for (int i = 0; i < 3; ++i) EXPECT_EQ(list[i].to_vector<std::int32_t>()[0], i);
  }
  auto empty = collective(g, "w", [](Communicator& c, Rank) {
    return c.iall_gather("w", Buffer(DType::kF64, 0));
  });
  for (auto& x : empty) {
    for (auto& b : std::get<std::vector<Buffer>>(x)) EXPECT_EQ(b.size(), 0u);
  }
}

TEST_F(CollectiveExamples, GatherToRankTwo) {
  Group g(3, store.addr);
  g.form("w");
  auto res = collective(g, "w", [](Communicator& c, Rank r) {
    return c.igather("w", 2, Buffer::from<std::int32_t>(std::vector<std::int32_t>{10 + r}));
  });
  auto& list = std::get<std::vector<Buffer>>(res[2]);
  for (int i = 0; i < 3; ++i) EXPECT_EQ(list[i].to_vector<std::int32_t>()[0], 10 + i);
}

TEST_F(CollectiveExamples, ScatterParts) {
  Group g(3, store.addr);
  g.form("w");
  auto res = collective(g, "w", [](Communicator& c, Rank r) {
    std::vector<Buffer> parts;
    if (r == 0) {
      for (int i = 1; i <= 3; ++i) parts.push_back(Buffer::from<float>(std::vector<float>{float(i)}));
    }
    return c.iscatter("w", 0, parts, DType::kF32, 1);
  });
  for (int r = 0; r < 3; ++r) EXPECT_EQ(as<float>(res[r])[0], float(r + 1));
}

TEST_F(CollectiveExamples, ScatterWithTooFewPartsIsProtocol) {
  Group g(3, store.addr);
  g.form("w");
  std::vector<Buffer> parts(2, Buffer::zeros(DType::kF32, 1));
  try {
    g.comm(0).iscatter("w", 0, parts, DType::kF32, 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kProtocol);
  }
}

// Every collective on every world size against the oracle, a few cases
// each; the acceptance run does 200.
TEST(CollectiveProperties, MatchOracleOnRandomCases) {
  LocalStore store;
  for (int n = 2; n <= 5; ++n) {
    Group g(n, store.addr);
    std::string world = "rand" + std::to_string(n);
    g.form(world);
    for (OpKind op : testing::kAllOps) {
      auto st = testing::run_collective_cases(g, world, op, 15, 1000 * n + static_cast<int>(op));
      EXPECT_EQ(st.first_failure, "");
      EXPECT_EQ(st.cases, 15);
    }
  }
}

}  // namespace
}  // namespace mw
