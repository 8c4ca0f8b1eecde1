// Copyright 2026 The flexattn Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Command-line front end: gen, run, sweep and heatmap subcommands.

#ifndef FLEXATTN_CLI_HPP_
#define FLEXATTN_CLI_HPP_

namespace flexattn {

enum ExitCode : int {
  kExitOk = 0,
  kExitInternal = 1,
  kExitUsage = 2,
  kExitIo = 3,
  kExitViolation = 4,
};

// Parses argv[1..] and runs the selected subcommand. Never throws.
int run_cli(int argc, const char* const* argv);

}  // namespace flexattn

#endif  // FLEXATTN_CLI_HPP_
