/* Copyright 2026 The RFCN Authors. All Rights Reserved.

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

#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace rfcn {

/// Process exit codes of the `rfcn` tool.
enum ExitCode : int {
  kExitOk = 0,
  kExitRuntime = 1,       // I/O, format, shape or numeric failure
  kExitUsage = 2,         // bad flags or configuration
  kExitDivergence = 3,    // training produced a non-finite loss or gradient
  kExitVerification = 4,  // gradcheck above tolerance
};

/**
 * Runs one `rfcn` invocation. args[0] is the program name. Subcommands:
 * gen-data, train, eval, predict, gradcheck, preset. Normal output goes to
 * `out`, progress and diagnostics to `err`.
 *
 * --threads falls back to the RFCN_THREADS environment variable, then 1.
 */
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace rfcn
