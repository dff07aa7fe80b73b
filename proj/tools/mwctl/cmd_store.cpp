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

#include <signal.h>

#include <cstdio>

#include "common.hpp"

namespace mwctl {

namespace {

int run_store(const std::string& listen) {
  // Block the termination signals before any library thread exists so they
  // are only ever delivered to sigwait below.
  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &set, nullptr);

  mw_store_server* server = nullptr;
  if (mw_store_server_start(listen.c_str(), &server) != MW_OK) {
    std::fprintf(stderr, "mwctl store: cannot listen on %s: %s\n", listen.c_str(),
                 mw_last_error());
    return kExitEnv;
  }
  report().emit({{"event", "listening"}, {"addr", mw_store_server_address(server)}});
  int sig = 0;
  sigwait(&set, &sig);
  mw_store_server_stop(server);
  report().emit({{"event", "stopped"}, {"signal", sig}});
  return kExitPass;
}

}  // namespace

void add_store_command(CLI::App& app, Runner& run) {
  auto* cmd = app.add_subcommand("store", "run the rendezvous store until interrupted");
  auto listen = std::make_shared<std::string>("127.0.0.1:29500");
  auto out = std::make_shared<std::string>();
  cmd->add_option("--listen", *listen, "address to bind, host:port");
  cmd->add_option("--out", *out, "report path (default stdout)");
  cmd->callback([&run, listen, out] {
    run = [listen, out] {
      report().open(*out, "store");
      return run_store(*listen);
    };
  });
}

}  // namespace mwctl
