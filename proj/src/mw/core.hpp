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

#ifndef MW_CORE_HPP_
#define MW_CORE_HPP_

#include <array>
#include <bit>
#include <chrono>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

namespace mw {

using Rank = int;
using Clock = std::chrono::steady_clock;
using Millis = std::chrono::milliseconds;

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

enum class ErrorKind {
  kBrokenWorld,
  kRemoteWorker,
  kTimeout,
  kUnknownWorld,
  kWorldExists,
  kRankConflict,
  kSizeMismatch,
  kProtocol,
  kAborted,
};

std::string_view to_string(ErrorKind kind);

// The single error type raised by the library. BrokenWorld and Aborted always
// name the world they refer to.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, std::string detail,
        std::optional<std::string> world = std::nullopt);

  ErrorKind kind() const { return kind_; }
  const std::optional<std::string>& world() const { return world_; }
  const std::string& detail() const { return detail_; }

 private:
  ErrorKind kind_;
  std::optional<std::string> world_;
  std::string detail_;
};

Error broken_world(std::string world, std::string detail);
Error aborted(std::string world, std::string detail);
Error protocol_error(std::string detail,
                     std::optional<std::string> world = std::nullopt);

// ---------------------------------------------------------------------------
// Element types and reductions
// ---------------------------------------------------------------------------

// Numeric values double as the on-wire dtype byte.
enum class DType : std::uint8_t {
  kF32 = 1,
  kF64 = 2,
  kI32 = 3,
  kI64 = 4,
  kU8 = 5,
};

inline constexpr DType kAllDTypes[] = {DType::kF32, DType::kF64, DType::kI32,
                                       DType::kI64, DType::kU8};

std::size_t dtype_width(DType dtype);
std::string_view dtype_name(DType dtype);
std::optional<DType> dtype_from_wire(std::uint8_t tag);

template <typename T>
struct dtype_of;
template <>
struct dtype_of<float> {
  static constexpr DType value = DType::kF32;
};
template <>
struct dtype_of<double> {
  static constexpr DType value = DType::kF64;
};
template <>
struct dtype_of<std::int32_t> {
  static constexpr DType value = DType::kI32;
};
template <>
struct dtype_of<std::int64_t> {
  static constexpr DType value = DType::kI64;
};
template <>
struct dtype_of<std::uint8_t> {
  static constexpr DType value = DType::kU8;
};

enum class ReduceOp : std::uint8_t { kSum = 0, kProd = 1, kMin = 2, kMax = 3 };

std::string_view reduce_op_name(ReduceOp op);

// ---------------------------------------------------------------------------
// Buffer: a flat typed payload stored little-endian.
// ---------------------------------------------------------------------------

class Buffer {
 public:
  Buffer() = default;
  // Uninitialized storage for `len` elements.
  Buffer(DType dtype, std::size_t len);

  static Buffer zeros(DType dtype, std::size_t len);
  static Buffer from_bytes(DType dtype, std::span<const std::byte> bytes);
  // Wraps caller-owned memory. The caller keeps it alive for the lifetime of
  // every copy of the returned buffer.
  static Buffer borrow(DType dtype, void* data, std::size_t len);

  template <typename T>
  static Buffer from(std::span<const T> values) {
    Buffer b(dtype_of<T>::value, values.size());
    if constexpr (std::endian::native == std::endian::little) {
      if (!values.empty()) {
        std::memcpy(b.data_.get(), values.data(), values.size_bytes());
      }
    } else {
      for (std::size_t i = 0; i < values.size(); ++i) {
        store_le(b.data_.get() + i * sizeof(T), values[i]);
      }
    }
    return b;
  }
  template <typename T>
  static Buffer from(const std::vector<T>& values) {
    return from(std::span<const T>(values));
  }

  template <typename T>
  std::vector<T> to_vector() const {
    if (dtype_of<T>::value != dtype_) {
      throw protocol_error("buffer dtype mismatch on decode");
    }
    std::vector<T> out(len_);
    if constexpr (std::endian::native == std::endian::little) {
      if (len_ > 0) std::memcpy(out.data(), data_.get(), len_ * sizeof(T));
    } else {
      for (std::size_t i = 0; i < len_; ++i) {
        out[i] = load_le<T>(data_.get() + i * sizeof(T));
      }
    }
    return out;
  }

  DType dtype() const { return dtype_; }
  std::size_t size() const { return len_; }
  std::size_t byte_size() const { return len_ * dtype_width(dtype_); }
  bool same_shape(const Buffer& other) const {
    return dtype_ == other.dtype_ && len_ == other.len_;
  }

  std::span<const std::byte> bytes() const { return {data_.get(), byte_size()}; }
  // Writable view. Only meaningful before the buffer has been handed out.
  std::span<std::byte> mutable_bytes() const {
    return {data_.get(), byte_size()};
  }
  const void* data() const { return data_.get(); }

  friend bool operator==(const Buffer& a, const Buffer& b);

 private:
  template <typename T>
  static void store_le(std::byte* dst, T value) {
    auto raw = std::bit_cast<std::array<std::byte, sizeof(T)>>(value);
    for (std::size_t i = 0; i < sizeof(T); ++i) dst[i] = raw[sizeof(T) - 1 - i];
  }
  template <typename T>
  static T load_le(const std::byte* src) {
    std::array<std::byte, sizeof(T)> raw;
    for (std::size_t i = 0; i < sizeof(T); ++i) raw[i] = src[sizeof(T) - 1 - i];
    return std::bit_cast<T>(raw);
  }

  DType dtype_ = DType::kU8;
  std::size_t len_ = 0;
  std::shared_ptr<std::byte[]> data_;
};

// ---------------------------------------------------------------------------
// Endpoints and world descriptors
// ---------------------------------------------------------------------------

struct Endpoint {
  std::string host;
  std::uint16_t port = 0;

  // Accepts "host:port". Throws Error(kProtocol) on malformed input.
  static Endpoint parse(std::string_view text);
  std::string to_string() const;
  friend bool operator==(const Endpoint&, const Endpoint&) = default;
};

inline constexpr std::size_t kMaxWorldNameBytes = 128;

bool is_valid_world_name(std::string_view name);
// Throws Error(kProtocol, "invalid world name") on violation.
void validate_world_name(std::string_view name);

struct WorldDescriptor {
  std::string name;
  int size = 0;
  Rank my_rank = 0;
  Endpoint store_addr;
  Endpoint listen_addr{"127.0.0.1", 0};
};

// Throws Error(kProtocol) naming the violated rule.
void validate_descriptor(const WorldDescriptor& d);

// ---------------------------------------------------------------------------
// Environment
// ---------------------------------------------------------------------------

std::optional<std::string> env_string(const char* name);
std::optional<std::int64_t> env_int(const char* name);

// MW_STORE_ADDR or the conventional local default.
Endpoint default_store_endpoint();

}  // namespace mw

#endif  // MW_CORE_HPP_
