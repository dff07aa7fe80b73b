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

#include <cstdlib>
#include <random>

#include "mw/core.hpp"

namespace mw {
namespace {

template <typename F>
Error catch_error(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e;
  }
  ADD_FAILURE() << "no error raised";
  return Error(ErrorKind::kProtocol, "none");
}

WorldDescriptor valid_descriptor() {
  WorldDescriptor d;
  d.name = "w1";
  d.size = 2;
  d.my_rank = 0;
  d.store_addr = Endpoint{"127.0.0.1", 29500};
  return d;
}

TEST(Descriptor, MinimalWorldIsValid) { EXPECT_NO_THROW(validate_descriptor(valid_descriptor())); }

TEST(Descriptor, RankAtSizeIsRejected) {
  auto d = valid_descriptor();
  d.my_rank = 2;
  Error e = catch_error([&] { validate_descriptor(d); });
  EXPECT_EQ(e.kind(), ErrorKind::kProtocol);
  EXPECT_NE(std::string(e.what()).find("rank out of range"), std::string::npos);
}

TEST(Descriptor, NegativeRankIsRejected) {
  auto d = valid_descriptor();
  d.my_rank = -1;
  EXPECT_EQ(catch_error([&] { validate_descriptor(d); }).kind(), ErrorKind::kProtocol);
}

TEST(Descriptor, BadNameIsRejected) {
  auto d = valid_descriptor();
  d.name = "bad name!";
  Error e = catch_error([&] { validate_descriptor(d); });
  EXPECT_EQ(e.kind(), ErrorKind::kProtocol);
  EXPECT_NE(std::string(e.what()).find("invalid world name"), std::string::npos);
}

TEST(Descriptor, SizeBelowTwoIsRejected) {
  for (int size : {-1, 0, 1}) {
    auto d = valid_descriptor();
    d.size = size;
    EXPECT_EQ(catch_error([&] { validate_descriptor(d); }).kind(), ErrorKind::kProtocol);
  }
}

TEST(WorldName, LengthBoundary) {
  EXPECT_FALSE(is_valid_world_name(""));
  EXPECT_TRUE(is_valid_world_name(std::string(128, 'a')));
  EXPECT_FALSE(is_valid_world_name(std::string(129, 'a')));
}

// Every single byte, alone and embedded in an otherwise valid name, is
// accepted exactly when it is in [A-Za-z0-9_-].
TEST(WorldName, CharsetIsExact) {
  const std::string allowed =
      "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789_-";
  for (int c = 0; c < 256; ++c) {
    char ch = static_cast<char>(c);
    bool expect = allowed.find(ch) != std::string::npos;
    EXPECT_EQ(is_valid_world_name(std::string(1, ch)), expect) << "byte " << c;
    EXPECT_EQ(is_valid_world_name("ab" + std::string(1, ch) + "cd"), expect) << "byte " << c;
  }
}

TEST(WorldName, RandomValidNames) {
  const std::string allowed =
      "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789_-";
  std::mt19937_64 rng(7);
  for (int i = 0; i < 500; ++i) {
    std::string name(1 + rng() % 128, 'x');
    for (auto& ch : name) ch = allowed[rng() % allowed.size()];
    EXPECT_TRUE(is_valid_world_name(name)) << name;
  }
}

TEST(DType, Widths) {
  EXPECT_EQ(dtype_width(DType::kF32), 4u);
  EXPECT_EQ(dtype_width(DType::kF64), 8u);
  EXPECT_EQ(dtype_width(DType::kI32), 4u);
  EXPECT_EQ(dtype_width(DType::kI64), 8u);
  EXPECT_EQ(dtype_width(DType::kU8), 1u);
  for (int tag = 0; tag < 256; ++tag) {
    EXPECT_EQ(dtype_from_wire(static_cast<std::uint8_t>(tag)).has_value(), tag >= 1 && tag <= 5);
  }
}

// Little-endian bytes of an unsigned value, computed by shifting.
template <typename U>
std::vector<std::byte> le_bytes(U v) {
  std::vector<std::byte> out;
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    out.push_back(static_cast<std::byte>((v >> (8 * i)) & 0xFF));
  }
  return out;
}

template <typename T, typename U>
void check_round_trip(std::mt19937_64& rng) {
  for (int trial = 0; trial < 50; ++trial) {
    std::size_t n = rng() % 300;
    std::vector<T> values(n);
    std::vector<std::byte> expected;
    for (auto& v : values) {
      U raw = static_cast<U>(rng());
      std::memcpy(&v, &raw, sizeof(T));
      auto b = le_bytes(raw);
      expected.insert(expected.end(), b.begin(), b.end());
    }
    Buffer b = Buffer::from(values);
    ASSERT_EQ(b.size(), n);
    ASSERT_EQ(b.byte_size(), n * sizeof(T));
    std::vector<std::byte> got(b.bytes().begin(), b.bytes().end());
    EXPECT_EQ(got, expected);
    std::vector<T> back = b.to_vector<T>();
    EXPECT_EQ(std::memcmp(back.data(), values.data(), n * sizeof(T)), 0);
    EXPECT_EQ(Buffer::from_bytes(b.dtype(), b.bytes()), b);
  }
}

TEST(Buffer, RoundTripAllDTypes) {
  std::mt19937_64 rng(11);
  check_round_trip<float, std::uint32_t>(rng);
  check_round_trip<double, std::uint64_t>(rng);
  check_round_trip<std::int32_t, std::uint32_t>(rng);
  check_round_trip<std::int64_t, std::uint64_t>(rng);
  check_round_trip<std::uint8_t, std::uint8_t>(rng);
}

TEST(Buffer, F32Encoding) {
  Buffer b = Buffer::from(std::vector<float>{1.0f, 2.0f});
  std::vector<std::byte> got(b.bytes().begin(), b.bytes().end());
  std::vector<std::byte> want = {std::byte{0x00}, std::byte{0x00}, std::byte{0x80},
                                 std::byte{0x3F}, std::byte{0x00}, std::byte{0x00},
                                 std::byte{0x00}, std::byte{0x40}};
  EXPECT_EQ(got, want);
}

TEST(Buffer, RaggedBytesAreRejected) {
  std::vector<std::byte> bytes(7);
  EXPECT_EQ(catch_error([&] { Buffer::from_bytes(DType::kI32, bytes); }).kind(),
            ErrorKind::kProtocol);
}

TEST(Buffer, DecodeWithWrongTypeIsRejected) {
  Buffer b = Buffer::from(std::vector<float>{1.0f});
  EXPECT_THROW(b.to_vector<double>(), Error);
}

TEST(Buffer, EqualityNeedsShapeAndBytes) {
  auto a = Buffer::from(std::vector<std::int32_t>{1, 2});
  EXPECT_EQ(a, Buffer::from(std::vector<std::int32_t>{1, 2}));
  EXPECT_FALSE(a == Buffer::from(std::vector<std::int32_t>{1, 3}));
  EXPECT_FALSE(a == Buffer::from(std::vector<float>{1, 2}));
  EXPECT_EQ(Buffer::zeros(DType::kU8, 0), Buffer::zeros(DType::kU8, 0));
}

TEST(ErrorDisplay, ContainsKindAndWorld) {
  for (auto kind : {ErrorKind::kBrokenWorld, ErrorKind::kRemoteWorker, ErrorKind::kTimeout,
                    ErrorKind::kUnknownWorld, ErrorKind::kWorldExists, ErrorKind::kRankConflict,
                    ErrorKind::kSizeMismatch, ErrorKind::kProtocol, ErrorKind::kAborted}) {
    Error e(kind, "detail text", "world-7");
    std::string s = e.what();
    EXPECT_NE(s.find(to_string(kind)), std::string::npos) << s;
    EXPECT_NE(s.find("world-7"), std::string::npos) << s;
    EXPECT_NE(s.find("detail text"), std::string::npos) << s;
  }
  Error bare(ErrorKind::kTimeout, "slow");
  EXPECT_NE(std::string(bare.what()).find("Timeout"), std::string::npos);
}

TEST(ErrorDisplay, BrokenAndAbortedNeedAWorld) {
  EXPECT_THROW(Error(ErrorKind::kBrokenWorld, "x"), std::invalid_argument);
  EXPECT_THROW(Error(ErrorKind::kAborted, "x"), std::invalid_argument);
  EXPECT_EQ(broken_world("w", "x").world(), std::optional<std::string>("w"));
}

TEST(Endpoint, Parse) {
  EXPECT_EQ(Endpoint::parse("127.0.0.1:29500"), (Endpoint{"127.0.0.1", 29500}));
  EXPECT_EQ(Endpoint::parse("localhost:0"), (Endpoint{"localhost", 0}));
  EXPECT_EQ(Endpoint::parse("10.0.0.1:4000").to_string(), "10.0.0.1:4000");
  for (const char* bad : {"", "host", ":80", "host:", "host:99999", "host:8x"}) {
    EXPECT_THROW(Endpoint::parse(bad), Error) << bad;
  }
}

TEST(Environment, StoreAddressDefault) {
  const char* old = std::getenv("MW_STORE_ADDR");
  std::string saved = old ? old : "";
  ::unsetenv("MW_STORE_ADDR");
  EXPECT_EQ(default_store_endpoint(), (Endpoint{"127.0.0.1", 29500}));
  ::setenv("MW_STORE_ADDR", "10.1.2.3:1234", 1);
  EXPECT_EQ(default_store_endpoint(), (Endpoint{"10.1.2.3", 1234}));
  if (old) {
    ::setenv("MW_STORE_ADDR", saved.c_str(), 1);
  } else {
    ::unsetenv("MW_STORE_ADDR");
  }
}

}  // namespace
}  // namespace mw
