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

#include "mw/core.hpp"

#include <algorithm>
#include <charconv>
#include <cstdlib>

namespace mw {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kBrokenWorld:
      return "BrokenWorld";
    case ErrorKind::kRemoteWorker:
      return "RemoteWorker";
    case ErrorKind::kTimeout:
      return "Timeout";
    case ErrorKind::kUnknownWorld:
      return "UnknownWorld";
    case ErrorKind::kWorldExists:
      return "WorldExists";
    case ErrorKind::kRankConflict:
      return "RankConflict";
    case ErrorKind::kSizeMismatch:
      return "SizeMismatch";
    case ErrorKind::kProtocol:
      return "Protocol";
    case ErrorKind::kAborted:
      return "Aborted";
  }
  return "Unknown";
}

namespace {

std::string format_error(ErrorKind kind, const std::string& detail,
                         const std::optional<std::string>& world) {
  std::string msg(to_string(kind));
  if (world) {
    msg += " [world ";
    msg += *world;
    msg += "]";
  }
  if (!detail.empty()) {
    msg += ": ";
    msg += detail;
  }
  return msg;
}

}  // namespace

Error::Error(ErrorKind kind, std::string detail,
             std::optional<std::string> world)
    : std::runtime_error(format_error(kind, detail, world)),
      kind_(kind),
      world_(std::move(world)),
      detail_(std::move(detail)) {
  if ((kind_ == ErrorKind::kBrokenWorld || kind_ == ErrorKind::kAborted) &&
      !world_) {
    throw std::invalid_argument("BrokenWorld/Aborted errors require a world");
  }
}

Error broken_world(std::string world, std::string detail) {
  return Error(ErrorKind::kBrokenWorld, std::move(detail), std::move(world));
}

Error aborted(std::string world, std::string detail) {
  return Error(ErrorKind::kAborted, std::move(detail), std::move(world));
}

Error protocol_error(std::string detail, std::optional<std::string> world) {
  return Error(ErrorKind::kProtocol, std::move(detail), std::move(world));
}

std::size_t dtype_width(DType dtype) {
  switch (dtype) {
    case DType::kF32:
    case DType::kI32:
      return 4;
    case DType::kF64:
    case DType::kI64:
      return 8;
    case DType::kU8:
      return 1;
  }
  return 0;
}

std::string_view dtype_name(DType dtype) {
  switch (dtype) {
    case DType::kF32:
      return "f32";
    case DType::kF64:
      return "f64";
    case DType::kI32:
      return "i32";
    case DType::kI64:
      return "i64";
    case DType::kU8:
      return "u8";
  }
  return "?";
}

std::optional<DType> dtype_from_wire(std::uint8_t tag) {
  if (tag >= 1 && tag <= 5) return static_cast<DType>(tag);
  return std::nullopt;
}

std::string_view reduce_op_name(ReduceOp op) {
  switch (op) {
    case ReduceOp::kSum:
      return "sum";
    case ReduceOp::kProd:
      return "prod";
    case ReduceOp::kMin:
      return "min";
    case ReduceOp::kMax:
      return "max";
  }
  return "?";
}

Buffer::Buffer(DType dtype, std::size_t len) : dtype_(dtype), len_(len) {
  if (len > 0) data_.reset(new std::byte[len * dtype_width(dtype)]);
}

Buffer Buffer::zeros(DType dtype, std::size_t len) {
  Buffer b(dtype, len);
  if (len > 0) std::memset(b.data_.get(), 0, b.byte_size());
  return b;
}

Buffer Buffer::from_bytes(DType dtype, std::span<const std::byte> bytes) {
  std::size_t width = dtype_width(dtype);
  if (bytes.size() % width != 0) {
    throw protocol_error("byte length is not a multiple of the element width");
  }
  Buffer b(dtype, bytes.size() / width);
  if (!bytes.empty()) std::memcpy(b.data_.get(), bytes.data(), bytes.size());
  return b;
}

Buffer Buffer::borrow(DType dtype, void* data, std::size_t len) {
  Buffer b;
  b.dtype_ = dtype;
  b.len_ = len;
  if (len > 0) {
    if (data == nullptr) throw protocol_error("null buffer with non-zero length");
    b.data_ = std::shared_ptr<std::byte[]>(static_cast<std::byte*>(data),
                                           [](std::byte*) {});
  }
  return b;
}

bool operator==(const Buffer& a, const Buffer& b) {
  if (!a.same_shape(b)) return false;
  if (a.byte_size() == 0) return true;
  return std::memcmp(a.data(), b.data(), a.byte_size()) == 0;
}

Endpoint Endpoint::parse(std::string_view text) {
  auto colon = text.rfind(':');
  if (colon == std::string_view::npos || colon == 0 ||
      colon + 1 >= text.size()) {
    throw protocol_error("malformed endpoint '" + std::string(text) +
                         "', expected host:port");
  }
  unsigned port = 0;
  auto port_text = text.substr(colon + 1);
  auto [ptr, ec] =
      std::from_chars(port_text.data(), port_text.data() + port_text.size(), port);
  if (ec != std::errc() || ptr != port_text.data() + port_text.size() ||
      port > 65535) {
    throw protocol_error("malformed port in endpoint '" + std::string(text) + "'");
  }
  return Endpoint{std::string(text.substr(0, colon)),
                  static_cast<std::uint16_t>(port)};
}

std::string Endpoint::to_string() const {
  return host + ":" + std::to_string(port);
}

bool is_valid_world_name(std::string_view name) {
  if (name.empty() || name.size() > kMaxWorldNameBytes) return false;
  return std::all_of(name.begin(), name.end(), [](char c) {
    return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') ||
           (c >= '0' && c <= '9') || c == '_' || c == '-';
  });
}

void validate_world_name(std::string_view name) {
  if (!is_valid_world_name(name)) {
    throw protocol_error("invalid world name '" + std::string(name) + "'");
  }
}

void validate_descriptor(const WorldDescriptor& d) {
  validate_world_name(d.name);
  if (d.size < 2) {
    throw protocol_error("world size must be at least 2", d.name);
  }
  if (d.my_rank < 0 || d.my_rank >= d.size) {
    throw protocol_error("rank out of range", d.name);
  }
  if (d.store_addr.host.empty()) {
    throw protocol_error("missing store address", d.name);
  }
}

std::optional<std::string> env_string(const char* name) {
  const char* value = std::getenv(name);
  if (value == nullptr || *value == '\0') return std::nullopt;
  return std::string(value);
}

std::optional<std::int64_t> env_int(const char* name) {
  auto text = env_string(name);
  if (!text) return std::nullopt;
  std::int64_t value = 0;
  auto [ptr, ec] = std::from_chars(text->data(), text->data() + text->size(), value);
  if (ec != std::errc() || ptr != text->data() + text->size()) return std::nullopt;
  return value;
}

Endpoint default_store_endpoint() {
  if (auto addr = env_string("MW_STORE_ADDR")) return Endpoint::parse(*addr);
  return Endpoint{"127.0.0.1", 29500};
}

}  // namespace mw
