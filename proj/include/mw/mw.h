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

/* C interface to the mw collective-communication library.
 *
 * All functions return an mw_status. On failure, mw_last_error() describes
 * the most recent error on the calling thread. Handles are opaque.
 *
 * Non-blocking collectives borrow the caller's buffers: they must stay valid
 * and untouched until the returned work handle is terminal. */

#ifndef MW_MW_H_
#define MW_MW_H_

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(__GNUC__)
#define MW_API __attribute__((visibility("default")))
#else
#define MW_API
#endif

typedef enum mw_status {
  MW_OK = 0,
  MW_ERR_BROKEN_WORLD = 1,
  MW_ERR_REMOTE_WORKER = 2,
  MW_ERR_TIMEOUT = 3,
  MW_ERR_UNKNOWN_WORLD = 4,
  MW_ERR_WORLD_EXISTS = 5,
  MW_ERR_RANK_CONFLICT = 6,
  MW_ERR_SIZE_MISMATCH = 7,
  MW_ERR_PROTOCOL = 8,
  MW_ERR_ABORTED = 9,
  MW_ERR_NOT_FOUND = 10,
  MW_ERR_INVALID_ARGUMENT = 11,
  MW_ERR_OS = 12,
  MW_ERR_INTERNAL = 13
} mw_status;

typedef enum mw_dtype {
  MW_F32 = 1,
  MW_F64 = 2,
  MW_I32 = 3,
  MW_I64 = 4,
  MW_U8 = 5
} mw_dtype;

typedef enum mw_reduce_op { MW_SUM = 0, MW_PROD = 1, MW_MIN = 2, MW_MAX = 3 } mw_reduce_op;

typedef enum mw_world_state {
  MW_WORLD_INITIALIZING = 0,
  MW_WORLD_READY = 1,
  MW_WORLD_BROKEN = 2,
  MW_WORLD_REMOVED = 3
} mw_world_state;

typedef enum mw_work_state {
  MW_WORK_PENDING = 0,
  MW_WORK_DONE = 1,
  MW_WORK_FAILED = 2
} mw_work_state;

MW_API const char* mw_version(void);
MW_API const char* mw_status_name(mw_status s);
MW_API const char* mw_last_error(void);
MW_API size_t mw_dtype_size(mw_dtype dtype);

/* ---- Rendezvous store ---------------------------------------------------- */

typedef struct mw_store_server mw_store_server;
typedef struct mw_store mw_store;

/* listen_addr is "host:port"; port 0 picks a free port. */
MW_API mw_status mw_store_server_start(const char* listen_addr, mw_store_server** out);
/* "host:port" actually bound. Valid until the server is stopped. */
MW_API const char* mw_store_server_address(const mw_store_server* s);
MW_API void mw_store_server_stop(mw_store_server* s);

/* Connects immediately; MW_ERR_TIMEOUT if the store is unreachable within
 * timeout_ms. timeout_ms < 0 selects the default (5000). */
MW_API mw_status mw_store_connect(const char* addr, int64_t timeout_ms, mw_store** out);
MW_API void mw_store_close(mw_store* s);
MW_API mw_status mw_store_set(mw_store* s, const char* key, const void* value, size_t len);
/* MW_ERR_NOT_FOUND if absent. *len receives the value length; if it exceeds
 * cap nothing is copied and MW_ERR_INVALID_ARGUMENT is returned. */
MW_API mw_status mw_store_get(mw_store* s, const char* key, void* buf, size_t cap,
                              size_t* len);
MW_API mw_status mw_store_add(mw_store* s, const char* key, int64_t delta, int64_t* out);
MW_API mw_status mw_store_wait(mw_store* s, const char* key, int64_t timeout_ms, void* buf,
                               size_t cap, size_t* len);
MW_API mw_status mw_store_delete(mw_store* s, const char* key);
MW_API mw_status mw_store_delete_prefix(mw_store* s, const char* prefix);

/* ---- World manager ------------------------------------------------------- */

typedef struct mw_manager mw_manager;
typedef struct mw_communicator mw_communicator;
typedef struct mw_work mw_work;

typedef struct mw_manager_options {
  int64_t heartbeat_interval_ms;
  int64_t liveness_timeout_ms;
  int64_t scan_interval_ms;
  int enable_watchdog;
  int poller_yield;       /* 0 spin, 1 spin with yield */
  int64_t op_timeout_ms;  /* 0 = none */
  int64_t init_timeout_ms;
  /* Added to the watchdog's local clock readings. Staleness only depends on
   * differences, so any constant offset must leave detection unchanged; used
   * for clock-skew fault injection. */
  int64_t clock_offset_ms;
} mw_manager_options;

/* Defaults, overridden by the MW_* environment variables. */
MW_API void mw_manager_options_default(mw_manager_options* opts);
/* opts may be NULL for the defaults. */
MW_API mw_status mw_manager_create(const mw_manager_options* opts, mw_manager** out);
MW_API void mw_manager_destroy(mw_manager* m);

typedef struct mw_world_desc {
  const char* name;
  int size;
  int rank;
  const char* store_addr;  /* NULL: MW_STORE_ADDR or 127.0.0.1:29500 */
  const char* listen_addr; /* NULL: 127.0.0.1:0 */
} mw_world_desc;

/* timeout_ms < 0 selects the manager's init timeout. */
MW_API mw_status mw_initialize_world(mw_manager* m, const mw_world_desc* d, int64_t timeout_ms);
MW_API mw_status mw_remove_world(mw_manager* m, const char* name);
MW_API mw_status mw_mark_broken(mw_manager* m, const char* name, const char* reason);
MW_API mw_status mw_world_status(mw_manager* m, const char* name, mw_world_state* out);
/* Rank and size of a Ready world. */
MW_API mw_status mw_world_rank(mw_manager* m, const char* name, int* rank, int* size);

/* Called once per world that becomes Broken, from a library thread. */
typedef void (*mw_broken_fn)(const char* world, mw_status cause, const char* detail,
                             void* user);
MW_API void mw_set_broken_callback(mw_manager* m, mw_broken_fn fn, void* user);

/* The manager's communicator; the same handle on every call. */
MW_API mw_communicator* mw_manager_communicator(mw_manager* m);
MW_API uint64_t mw_poller_iterations(const mw_communicator* c);

/* ---- Non-blocking collectives ------------------------------------------- */

MW_API mw_status mw_isend(mw_communicator* c, const char* world, int dst, mw_dtype dtype,
                          const void* data, size_t count, mw_work** out);
MW_API mw_status mw_irecv(mw_communicator* c, const char* world, int src, mw_dtype dtype,
                          void* data, size_t count, mw_work** out);
/* send is read at the root only; recv may be NULL at the root. */
MW_API mw_status mw_ibroadcast(mw_communicator* c, const char* world, int root, mw_dtype dtype,
                               const void* send, void* recv, size_t count, mw_work** out);
MW_API mw_status mw_iall_reduce(mw_communicator* c, const char* world, mw_dtype dtype,
                                mw_reduce_op op, const void* send, void* recv, size_t count,
                                mw_work** out);
/* recv is written at the root only. */
MW_API mw_status mw_ireduce(mw_communicator* c, const char* world, int root, mw_dtype dtype,
                            mw_reduce_op op, const void* send, void* recv, size_t count,
                            mw_work** out);
/* recv holds size * count elements, in rank order. */
MW_API mw_status mw_iall_gather(mw_communicator* c, const char* world, mw_dtype dtype,
                                const void* send, void* recv, size_t count, mw_work** out);
MW_API mw_status mw_igather(mw_communicator* c, const char* world, int root, mw_dtype dtype,
                            const void* send, void* recv, size_t count, mw_work** out);
/* send holds size * count elements at the root. */
MW_API mw_status mw_iscatter(mw_communicator* c, const char* world, int root, mw_dtype dtype,
                             const void* send, void* recv, size_t count, mw_work** out);

MW_API mw_work_state mw_work_poll(const mw_work* w);
/* timeout_ms < 0 waits forever. MW_ERR_TIMEOUT leaves the work pending.
 * A failed work returns its error. */
MW_API mw_status mw_work_wait(mw_work* w, int64_t timeout_ms);
/* Frees the handle. A pending operation keeps running and keeps using its
 * buffers. */
MW_API void mw_work_free(mw_work* w);

/* ---- Direct transport ---------------------------------------------------- */

/* Blocking framed connections outside any manager, as used by baselines. */
typedef struct mw_listener mw_listener;
typedef struct mw_conn mw_conn;

MW_API mw_status mw_listener_open(const char* addr, const char* world, int my_rank,
                                  int world_size, mw_listener** out);
MW_API const char* mw_listener_address(const mw_listener* l);
MW_API mw_status mw_listener_accept(mw_listener* l, int64_t timeout_ms, mw_conn** out);
MW_API void mw_listener_close(mw_listener* l);

MW_API mw_status mw_conn_connect(const char* addr, const char* world, int my_rank,
                                 int64_t timeout_ms, mw_conn** out);
MW_API mw_status mw_conn_send(mw_conn* c, mw_dtype dtype, const void* data, size_t count);
/* timeout_ms < 0 waits forever. */
MW_API mw_status mw_conn_recv(mw_conn* c, mw_dtype dtype, void* data, size_t count,
                              int64_t timeout_ms);
MW_API void mw_conn_close(mw_conn* c, int send_bye);

#ifdef __cplusplus
}
#endif

#endif /* MW_MW_H_ */
