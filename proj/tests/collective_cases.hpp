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

// Randomized end-to-end collective cases checked against the oracle.
// Shared by the unit tests and the acceptance run.

#ifndef MW_TESTS_COLLECTIVE_CASES_HPP_
#define MW_TESTS_COLLECTIVE_CASES_HPP_

#include <random>
#include <string>
#include <vector>

#include "oracle.hpp"
#include "test_util.hpp"

namespace mw::testing {

inline constexpr OpKind kAllOps[] = {OpKind::kSend,      OpKind::kRecv,   OpKind::kBroadcast,
                                     OpKind::kAllReduce, OpKind::kReduce, OpKind::kAllGather,
                                     OpKind::kGather,    OpKind::kScatter};

struct CaseStats {
  int cases = 0;
  std::string first_failure;  // empty when all matched
};

namespace detail {

inline oracle::Bytes bytes_of(const WorkResult& r) { return oracle::to_bytes(std::get<Buffer>(r)); }

inline std::vector<oracle::Bytes> list_of(const WorkResult& r) {
  std::vector<oracle::Bytes> out;
  for (const auto& b : std::get<std::vector<Buffer>>(r)) out.push_back(oracle::to_bytes(b));
  return out;
}

}  // namespace detail

// Runs `cases` random instances of `op` on the Ready world `world`, which
// spans all members of `g` (member k is rank k). kSend and kRecv both run a
// ring shift, each rank sending to rank+1; they differ in which side is
// submitted first.
inline CaseStats run_collective_cases(Group& g, const std::string& world, OpKind op, int cases,
                                      std::uint64_t seed) {
  CaseStats st;
  const int n = g.size();
  std::mt19937_64 rng(seed);
  for (int c = 0; c < cases && st.first_failure.empty(); ++c) {
    // Cycle dtypes so every one gets cases/5 of them.
    DType d = kAllDTypes[static_cast<std::size_t>(c) % std::size(kAllDTypes)];
    auto rop = static_cast<ReduceOp>(rng() % 4);
    // Mostly short vectors, sometimes empty, sometimes long.
    std::size_t count = rng() % 10 == 0 ? rng() % 4000 : rng() % 65;
    if (rng() % 20 == 0) count = 0;
    Rank root = static_cast<Rank>(rng() % n);
    std::vector<oracle::Bytes> in(n);
    for (auto& b : in) b = oracle::random_payload(rng, d, count);
    std::vector<std::vector<oracle::Bytes>> parts(n);  // scatter input at the root
    for (int r = 0; r < n; ++r) parts[root].push_back(oracle::random_payload(rng, d, count));

    std::vector<WorkHandle> hs(n), extra(n);
    auto buf = [&](int r) { return oracle::to_buffer(d, in[r]); };
    for (int r = 0; r < n; ++r) {
      Communicator& comm = g.comm(r);
      switch (op) {
        case OpKind::kSend:
          hs[r] = comm.isend(world, (r + 1) % n, buf(r));
          extra[r] = comm.irecv(world, (r + n - 1) % n, d, count);
          break;
        case OpKind::kRecv:
          extra[r] = comm.irecv(world, (r + n - 1) % n, d, count);
          hs[r] = comm.isend(world, (r + 1) % n, buf(r));
          break;
        case OpKind::kBroadcast:
          hs[r] = comm.ibroadcast(world, root, r == root ? buf(r) : Buffer(d, count));
          break;
        case OpKind::kAllReduce:
          hs[r] = comm.iall_reduce(world, buf(r), rop);
          break;
        case OpKind::kReduce:
          hs[r] = comm.ireduce(world, root, buf(r), rop);
          break;
        case OpKind::kAllGather:
          hs[r] = comm.iall_gather(world, buf(r));
          break;
        case OpKind::kGather:
          hs[r] = comm.igather(world, root, buf(r));
          break;
        case OpKind::kScatter: {
          std::vector<Buffer> mine;
          if (r == root) {
            for (const auto& p : parts[root]) mine.push_back(oracle::to_buffer(d, p));
          }
          hs[r] = comm.iscatter(world, root, mine, d, count);
          break;
        }
      }
    }
    std::string where = std::string(op_kind_name(op)) + " n=" + std::to_string(n) +
                        " case " + std::to_string(c) + " " + std::string(dtype_name(d)) +
                        " count=" + std::to_string(count);
    try {
      oracle::Bytes reduced;
      if (op == OpKind::kAllReduce || op == OpKind::kReduce) reduced = oracle::reduce(d, rop, in);
      for (int r = 0; r < n; ++r) {
        WorkResult res = hs[r].wait(Millis(30000));
        bool ok = true;
        switch (op) {
          case OpKind::kSend:
          case OpKind::kRecv:
            ok = detail::bytes_of(extra[r].wait(Millis(30000))) == in[(r + n - 1) % n];
            break;
          case OpKind::kBroadcast:
            ok = detail::bytes_of(res) == in[root];
            break;
          case OpKind::kAllReduce:
            ok = detail::bytes_of(res) == reduced;
            break;
          case OpKind::kReduce:
            ok = r == root ? detail::bytes_of(res) == reduced
                           : std::holds_alternative<std::monostate>(res);
            break;
          case OpKind::kAllGather:
            ok = detail::list_of(res) == in;
            break;
          case OpKind::kGather:
            ok = r == root ? detail::list_of(res) == in
                           : std::holds_alternative<std::monostate>(res);
            break;
          case OpKind::kScatter:
            ok = detail::bytes_of(res) == parts[root][r];
            break;
        }
        if (!ok) {
          st.first_failure = where + ": rank " + std::to_string(r) + " differs from oracle";
          break;
        }
      }
    } catch (const std::exception& e) {
      st.first_failure = where + ": " + e.what();
    }
    ++st.cases;
  }
  return st;
}

}  // namespace mw::testing

#endif  // MW_TESTS_COLLECTIVE_CASES_HPP_
