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

// mwctl: rendezvous store, demo scenarios, fault injection and benchmarks.

#include <cstdio>

#include "common.hpp"

int main(int argc, char** argv) {
  CLI::App app{"mw control tool"};
  app.require_subcommand(1);
  mwctl::Runner run;
  mwctl::add_store_command(app, run);
  mwctl::add_fault_command(app, run);
  mwctl::add_join_command(app, run);
  mwctl::add_bench_command(app, run);
  mwctl::add_rhombus_command(app, run);
  mwctl::add_member_command(app, run);
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : mwctl::kExitEnv;
  }
  try {
    return run ? run() : mwctl::kExitEnv;
  } catch (const mwctl::EnvError& e) {
    std::fprintf(stderr, "mwctl: %s\n", e.what());
    return mwctl::kExitEnv;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "mwctl: FAIL: %s\n", e.what());
    mwctl::report().emit({{"event", "error"}, {"detail", e.what()}});
    return mwctl::kExitFail;
  }
}
