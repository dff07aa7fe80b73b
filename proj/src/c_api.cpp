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

#include "mw/mw.h"

#include <cstring>
#include <new>
#include <string>
#include <system_error>

#include "mw/communicator.hpp"
#include "mw/store.hpp"
#include "mw/transport.hpp"
#include "mw/world_manager.hpp"

struct mw_store_server {
  std::unique_ptr<mw::StoreServer> server;
  std::string address;
};

struct mw_store {
  std::unique_ptr<mw::StoreClient> client;
};

struct mw_communicator {
  mw::WorldManager* manager = nullptr;
};

struct mw_manager {
  std::unique_ptr<mw::WorldManager> manager;
  mw_communicator comm;
};

struct mw_work {
  mw::WorkHandle handle;
};

struct mw_listener {
  std::shared_ptr<mw::Listener> listener;
  std::string address;
};

struct mw_conn {
  std::unique_ptr<mw::Connection> conn;
};

namespace {

thread_local std::string g_last_error;

mw_status status_of(mw::ErrorKind k) {
  switch (k) {
    case mw::ErrorKind::kBrokenWorld: return MW_ERR_BROKEN_WORLD;
    case mw::ErrorKind::kRemoteWorker: return MW_ERR_REMOTE_WORKER;
    case mw::ErrorKind::kTimeout: return MW_ERR_TIMEOUT;
    case mw::ErrorKind::kUnknownWorld: return MW_ERR_UNKNOWN_WORLD;
    case mw::ErrorKind::kWorldExists: return MW_ERR_WORLD_EXISTS;
    case mw::ErrorKind::kRankConflict: return MW_ERR_RANK_CONFLICT;
    case mw::ErrorKind::kSizeMismatch: return MW_ERR_SIZE_MISMATCH;
    case mw::ErrorKind::kProtocol: return MW_ERR_PROTOCOL;
    case mw::ErrorKind::kAborted: return MW_ERR_ABORTED;
  }
  return MW_ERR_INTERNAL;
}

mw_status fail(mw_status s, std::string msg) {
  g_last_error = std::move(msg);
  return s;
}

template <typename F>
mw_status guard(F&& f) {
  try {
    f();
    return MW_OK;
  } catch (const mw::Error& e) {
    return fail(status_of(e.kind()), e.what());
  } catch (const std::system_error& e) {
    return fail(MW_ERR_OS, e.what());
  } catch (const std::bad_alloc&) {
    return fail(MW_ERR_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return fail(MW_ERR_INTERNAL, e.what());
  }
}

mw_status invalid(const char* what) { return fail(MW_ERR_INVALID_ARGUMENT, what); }

bool valid_dtype(mw_dtype d) { return d >= MW_F32 && d <= MW_U8; }

mw::DType to_dtype(mw_dtype d) { return static_cast<mw::DType>(d); }

std::optional<mw::Millis> opt_ms(int64_t ms) {
  if (ms < 0) return std::nullopt;
  return mw::Millis(ms);
}

mw::Buffer borrow(mw_dtype d, const void* p, size_t count) {
  return mw::Buffer::borrow(to_dtype(d), const_cast<void*>(p), count);
}

// Splits a contiguous array of parts * count elements into borrowed parts.
std::vector<mw::Buffer> split(mw_dtype d, const void* p, int parts, size_t count) {
  std::vector<mw::Buffer> out;
  auto* base = static_cast<const std::byte*>(p);
  size_t stride = count * mw::dtype_width(to_dtype(d));
  for (int i = 0; i < parts; ++i) out.push_back(borrow(d, base + i * stride, count));
  return out;
}

mw_status submit(mw_communicator* c, mw::CollectiveCall call, mw_work** out) {
  if (!c || !out) return invalid("null communicator or output handle");
  return guard([&] {
    auto w = std::make_unique<mw_work>();
    w->handle = c->manager->communicator().submit(std::move(call));
    *out = w.release();
  });
}

mw::CollectiveCall base_call(const char* world, mw::OpKind op, mw_dtype dtype, size_t count) {
  mw::CollectiveCall call;
  call.world = world;
  call.op = op;
  call.dtype = to_dtype(dtype);
  call.count = count;
  return call;
}

mw_status copy_out(const std::string& v, void* buf, size_t cap, size_t* len) {
  if (len) *len = v.size();
  if (v.size() > cap) return invalid("value larger than the supplied buffer");
  if (!v.empty()) std::memcpy(buf, v.data(), v.size());
  return MW_OK;
}

}  // namespace

extern "C" {

const char* mw_version(void) { return "0.1.0"; }

const char* mw_status_name(mw_status s) {
  switch (s) {
    case MW_OK: return "OK";
    case MW_ERR_BROKEN_WORLD: return "BrokenWorld";
    case MW_ERR_REMOTE_WORKER: return "RemoteWorker";
    case MW_ERR_TIMEOUT: return "Timeout";
    case MW_ERR_UNKNOWN_WORLD: return "UnknownWorld";
    case MW_ERR_WORLD_EXISTS: return "WorldExists";
    case MW_ERR_RANK_CONFLICT: return "RankConflict";
    case MW_ERR_SIZE_MISMATCH: return "SizeMismatch";
    case MW_ERR_PROTOCOL: return "Protocol";
    case MW_ERR_ABORTED: return "Aborted";
    case MW_ERR_NOT_FOUND: return "NotFound";
    case MW_ERR_INVALID_ARGUMENT: return "InvalidArgument";
    case MW_ERR_OS: return "OS";
    case MW_ERR_INTERNAL: return "Internal";
  }
  return "Unknown";
}

const char* mw_last_error(void) { return g_last_error.c_str(); }

size_t mw_dtype_size(mw_dtype dtype) {
  return valid_dtype(dtype) ? mw::dtype_width(to_dtype(dtype)) : 0;
}

// ---- store ----------------------------------------------------------------

mw_status mw_store_server_start(const char* listen_addr, mw_store_server** out) {
  if (!listen_addr || !out) return invalid("null argument");
  return guard([&] {
    auto s = std::make_unique<mw_store_server>();
    s->server = mw::StoreServer::serve(mw::Endpoint::parse(listen_addr));
    s->address = s->server->address().to_string();
    *out = s.release();
  });
}

const char* mw_store_server_address(const mw_store_server* s) {
  return s ? s->address.c_str() : "";
}

void mw_store_server_stop(mw_store_server* s) {
  if (!s) return;
  s->server->stop();
  delete s;
}

mw_status mw_store_connect(const char* addr, int64_t timeout_ms, mw_store** out) {
  if (!addr || !out) return invalid("null argument");
  return guard([&] {
    auto s = std::make_unique<mw_store>();
    auto t = timeout_ms < 0 ? mw::kDefaultStoreTimeout : mw::Millis(timeout_ms);
    s->client = std::make_unique<mw::StoreClient>(mw::Endpoint::parse(addr), t);
    s->client->ensure_connected();
    *out = s.release();
  });
}

void mw_store_close(mw_store* s) { delete s; }

mw_status mw_store_set(mw_store* s, const char* key, const void* value, size_t len) {
  if (!s || !key || (!value && len)) return invalid("null argument");
  return guard([&] {
    s->client->set(key, std::string_view(static_cast<const char*>(value), len));
  });
}

mw_status mw_store_get(mw_store* s, const char* key, void* buf, size_t cap, size_t* len) {
  if (!s || !key) return invalid("null argument");
  std::optional<std::string> v;
  mw_status st = guard([&] { v = s->client->get(key); });
  if (st != MW_OK) return st;
  if (!v) return fail(MW_ERR_NOT_FOUND, std::string("key not found: ") + key);
  return copy_out(*v, buf, cap, len);
}

mw_status mw_store_add(mw_store* s, const char* key, int64_t delta, int64_t* out) {
  if (!s || !key) return invalid("null argument");
  return guard([&] {
    int64_t v = s->client->add(key, delta);
    if (out) *out = v;
  });
}

mw_status mw_store_wait(mw_store* s, const char* key, int64_t timeout_ms, void* buf,
                        size_t cap, size_t* len) {
  if (!s || !key || timeout_ms < 0) return invalid("null argument or negative timeout");
  std::string v;
  mw_status st = guard([&] { v = s->client->wait(key, mw::Millis(timeout_ms)); });
  if (st != MW_OK) return st;
  return copy_out(v, buf, cap, len);
}

mw_status mw_store_delete(mw_store* s, const char* key) {
  if (!s || !key) return invalid("null argument");
  return guard([&] { s->client->erase(key); });
}

mw_status mw_store_delete_prefix(mw_store* s, const char* prefix) {
  if (!s || !prefix) return invalid("null argument");
  return guard([&] { s->client->erase_prefix(prefix); });
}

// ---- manager ----------------------------------------------------------------

void mw_manager_options_default(mw_manager_options* o) {
  if (!o) return;
  mw::ManagerOptions d;
  o->heartbeat_interval_ms = d.watchdog.heartbeat_interval.count();
  o->liveness_timeout_ms = d.watchdog.liveness_timeout.count();
  o->scan_interval_ms = d.watchdog.scan_interval.count();
  o->enable_watchdog = d.enable_watchdog ? 1 : 0;
  o->poller_yield = d.poller_mode == mw::PollerMode::kYield ? 1 : 0;
  o->op_timeout_ms = d.op_timeout ? d.op_timeout->count() : 0;
  o->init_timeout_ms = d.init_timeout.count();
  o->clock_offset_ms = 0;
}

mw_status mw_manager_create(const mw_manager_options* opts, mw_manager** out) {
  if (!out) return invalid("null output handle");
  mw_manager_options o;
  mw_manager_options_default(&o);
  if (opts) o = *opts;
  return guard([&] {
    mw::ManagerOptions mo;
    mo.watchdog.heartbeat_interval = mw::Millis(o.heartbeat_interval_ms);
    mo.watchdog.liveness_timeout = mw::Millis(o.liveness_timeout_ms);
    mo.watchdog.scan_interval = mw::Millis(o.scan_interval_ms);
    mo.watchdog.validate();
    mo.enable_watchdog = o.enable_watchdog != 0;
    mo.poller_mode = o.poller_yield ? mw::PollerMode::kYield : mw::PollerMode::kSpin;
    mo.op_timeout = o.op_timeout_ms > 0 ? std::optional<mw::Millis>(o.op_timeout_ms)
                                        : std::nullopt;
    mo.init_timeout = mw::Millis(o.init_timeout_ms);
    if (o.clock_offset_ms != 0) {
      auto offset = mw::Millis(o.clock_offset_ms);
      mo.clock = [offset] { return mw::Clock::now() + offset; };
    }
    auto m = std::make_unique<mw_manager>();
    m->manager = std::make_unique<mw::WorldManager>(mo);
    m->comm.manager = m->manager.get();
    *out = m.release();
  });
}

void mw_manager_destroy(mw_manager* m) { delete m; }

mw_status mw_initialize_world(mw_manager* m, const mw_world_desc* d, int64_t timeout_ms) {
  if (!m || !d || !d->name) return invalid("null argument");
  return guard([&] {
    mw::WorldDescriptor wd;
    wd.name = d->name;
    wd.size = d->size;
    wd.my_rank = d->rank;
    wd.store_addr =
        d->store_addr ? mw::Endpoint::parse(d->store_addr) : mw::default_store_endpoint();
    if (d->listen_addr) wd.listen_addr = mw::Endpoint::parse(d->listen_addr);
    m->manager->initialize_world(wd, opt_ms(timeout_ms));
  });
}

mw_status mw_remove_world(mw_manager* m, const char* name) {
  if (!m || !name) return invalid("null argument");
  return guard([&] { m->manager->remove_world(name); });
}

mw_status mw_mark_broken(mw_manager* m, const char* name, const char* reason) {
  if (!m || !name) return invalid("null argument");
  return guard([&] {
    m->manager->mark_broken(
        name, mw::Error(mw::ErrorKind::kAborted, reason ? reason : "marked broken", name));
  });
}

mw_status mw_world_status(mw_manager* m, const char* name, mw_world_state* out) {
  if (!m || !name || !out) return invalid("null argument");
  return guard([&] { *out = static_cast<mw_world_state>(m->manager->world_status(name)); });
}

mw_status mw_world_rank(mw_manager* m, const char* name, int* rank, int* size) {
  if (!m || !name) return invalid("null argument");
  return guard([&] {
    auto b = m->manager->resolve(name);
    if (rank) *rank = b.rank;
    if (size) *size = b.size;
  });
}

void mw_set_broken_callback(mw_manager* m, mw_broken_fn fn, void* user) {
  if (!m) return;
  if (!fn) {
    m->manager->set_broken_listener(nullptr);
    return;
  }
  m->manager->set_broken_listener([fn, user](const std::string& world, const mw::Error& e) {
    fn(world.c_str(), status_of(e.kind()), e.what(), user);
  });
}

mw_communicator* mw_manager_communicator(mw_manager* m) { return m ? &m->comm : nullptr; }

uint64_t mw_poller_iterations(const mw_communicator* c) {
  return c ? c->manager->communicator().iterations() : 0;
}

// ---- collectives ------------------------------------------------------------

mw_status mw_isend(mw_communicator* c, const char* world, int dst, mw_dtype dtype,
                   const void* data, size_t count, mw_work** out) {
  if (!world || !valid_dtype(dtype) || (!data && count)) return invalid("bad argument");
  auto call = base_call(world, mw::OpKind::kSend, dtype, count);
  call.root = dst;
  call.inputs.push_back(borrow(dtype, data, count));
  return submit(c, std::move(call), out);
}

mw_status mw_irecv(mw_communicator* c, const char* world, int src, mw_dtype dtype, void* data,
                   size_t count, mw_work** out) {
  if (!world || !valid_dtype(dtype) || (!data && count)) return invalid("bad argument");
  auto call = base_call(world, mw::OpKind::kRecv, dtype, count);
  call.root = src;
  call.outputs.push_back(borrow(dtype, data, count));
  return submit(c, std::move(call), out);
}

mw_status mw_ibroadcast(mw_communicator* c, const char* world, int root, mw_dtype dtype,
                        const void* send, void* recv, size_t count, mw_work** out) {
  if (!c || !world || !valid_dtype(dtype)) return invalid("bad argument");
  int rank = 0;
  mw_status st = guard([&] { rank = c->manager->resolve(world).rank; });
  if (st != MW_OK) return st;
  auto call = base_call(world, mw::OpKind::kBroadcast, dtype, count);
  call.root = root;
  if (rank == root) {
    if (!send && count) return invalid("broadcast root needs a send buffer");
    call.inputs.push_back(borrow(dtype, send, count));
  } else if (!recv && count) {
    return invalid("broadcast needs a receive buffer");
  }
  if (recv) call.outputs.push_back(borrow(dtype, recv, count));
  return submit(c, std::move(call), out);
}

mw_status mw_iall_reduce(mw_communicator* c, const char* world, mw_dtype dtype,
                         mw_reduce_op op, const void* send, void* recv, size_t count,
                         mw_work** out) {
  if (!world || !valid_dtype(dtype) || ((!send || !recv) && count) || op < MW_SUM ||
      op > MW_MAX) {
    return invalid("bad argument");
  }
  auto call = base_call(world, mw::OpKind::kAllReduce, dtype, count);
  call.reduce_op = static_cast<mw::ReduceOp>(op);
  call.inputs.push_back(borrow(dtype, send, count));
  call.outputs.push_back(borrow(dtype, recv, count));
  return submit(c, std::move(call), out);
}

mw_status mw_ireduce(mw_communicator* c, const char* world, int root, mw_dtype dtype,
                     mw_reduce_op op, const void* send, void* recv, size_t count,
                     mw_work** out) {
  if (!c || !world || !valid_dtype(dtype) || (!send && count) || op < MW_SUM || op > MW_MAX) {
    return invalid("bad argument");
  }
  int rank = 0;
  mw_status st = guard([&] { rank = c->manager->resolve(world).rank; });
  if (st != MW_OK) return st;
  auto call = base_call(world, mw::OpKind::kReduce, dtype, count);
  call.root = root;
  call.reduce_op = static_cast<mw::ReduceOp>(op);
  call.inputs.push_back(borrow(dtype, send, count));
  if (rank == root) {
    if (!recv && count) return invalid("reduce root needs a receive buffer");
    call.outputs.push_back(borrow(dtype, recv, count));
  }
  return submit(c, std::move(call), out);
}

mw_status mw_iall_gather(mw_communicator* c, const char* world, mw_dtype dtype,
                         const void* send, void* recv, size_t count, mw_work** out) {
  if (!c || !world || !valid_dtype(dtype) || ((!send || !recv) && count)) {
    return invalid("bad argument");
  }
  int size = 0;
  mw_status st = guard([&] { size = c->manager->resolve(world).size; });
  if (st != MW_OK) return st;
  auto call = base_call(world, mw::OpKind::kAllGather, dtype, count);
  call.inputs.push_back(borrow(dtype, send, count));
  call.outputs = split(dtype, recv, size, count);
  return submit(c, std::move(call), out);
}

mw_status mw_igather(mw_communicator* c, const char* world, int root, mw_dtype dtype,
                     const void* send, void* recv, size_t count, mw_work** out) {
  if (!c || !world || !valid_dtype(dtype) || (!send && count)) return invalid("bad argument");
  mw::WorldBinding b;
  mw_status st = guard([&] { b = c->manager->resolve(world); });
  if (st != MW_OK) return st;
  auto call = base_call(world, mw::OpKind::kGather, dtype, count);
  call.root = root;
  call.inputs.push_back(borrow(dtype, send, count));
  if (b.rank == root) {
    if (!recv && count) return invalid("gather root needs a receive buffer");
    call.outputs = split(dtype, recv, b.size, count);
  }
  return submit(c, std::move(call), out);
}

mw_status mw_iscatter(mw_communicator* c, const char* world, int root, mw_dtype dtype,
                      const void* send, void* recv, size_t count, mw_work** out) {
  if (!c || !world || !valid_dtype(dtype) || (!recv && count)) return invalid("bad argument");
  mw::WorldBinding b;
  mw_status st = guard([&] { b = c->manager->resolve(world); });
  if (st != MW_OK) return st;
  auto call = base_call(world, mw::OpKind::kScatter, dtype, count);
  call.root = root;
  if (b.rank == root) {
    if (!send && count) return invalid("scatter root needs a send buffer");
    call.inputs = split(dtype, send, b.size, count);
  }
  call.outputs.push_back(borrow(dtype, recv, count));
  return submit(c, std::move(call), out);
}

mw_work_state mw_work_poll(const mw_work* w) {
  if (!w) return MW_WORK_FAILED;
  return static_cast<mw_work_state>(w->handle.poll());
}

mw_status mw_work_wait(mw_work* w, int64_t timeout_ms) {
  if (!w) return invalid("null work handle");
  return guard([&] { w->handle.wait(opt_ms(timeout_ms)); });
}

void mw_work_free(mw_work* w) { delete w; }

// ---- direct transport -------------------------------------------------------

mw_status mw_listener_open(const char* addr, const char* world, int my_rank, int world_size,
                           mw_listener** out) {
  if (!addr || !world || !out) return invalid("null argument");
  return guard([&] {
    auto l = std::make_unique<mw_listener>();
    l->listener = mw::Listener::open(mw::Endpoint::parse(addr), world, my_rank, world_size);
    l->address = l->listener->address().to_string();
    *out = l.release();
  });
}

const char* mw_listener_address(const mw_listener* l) { return l ? l->address.c_str() : ""; }

mw_status mw_listener_accept(mw_listener* l, int64_t timeout_ms, mw_conn** out) {
  if (!l || !out) return invalid("null argument");
  return guard([&] {
    auto c = std::make_unique<mw_conn>();
    c->conn = l->listener->accept(mw::Millis(timeout_ms < 0 ? INT32_MAX : timeout_ms));
    *out = c.release();
  });
}

void mw_listener_close(mw_listener* l) {
  if (!l) return;
  l->listener->close();
  delete l;
}

mw_status mw_conn_connect(const char* addr, const char* world, int my_rank, int64_t timeout_ms,
                          mw_conn** out) {
  if (!addr || !world || !out) return invalid("null argument");
  return guard([&] {
    auto c = std::make_unique<mw_conn>();
    auto t = timeout_ms < 0 ? mw::kHandshakeTimeout : mw::Millis(timeout_ms);
    c->conn = mw::Connection::connect(mw::Endpoint::parse(addr), world, my_rank,
                                      mw::Clock::now() + t);
    *out = c.release();
  });
}

mw_status mw_conn_send(mw_conn* c, mw_dtype dtype, const void* data, size_t count) {
  if (!c || !valid_dtype(dtype) || (!data && count)) return invalid("bad argument");
  return guard([&] { c->conn->send_data(borrow(dtype, data, count)); });
}

mw_status mw_conn_recv(mw_conn* c, mw_dtype dtype, void* data, size_t count,
                       int64_t timeout_ms) {
  if (!c || !valid_dtype(dtype) || (!data && count)) return invalid("bad argument");
  return guard([&] { c->conn->recv_data_into(borrow(dtype, data, count), opt_ms(timeout_ms)); });
}

void mw_conn_close(mw_conn* c, int send_bye) {
  if (!c) return;
  c->conn->close(send_bye != 0);
  delete c;
}

}  // extern "C"
