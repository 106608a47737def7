// Copyright 2026 The LHGM Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef LHGM_CLI_H_
#define LHGM_CLI_H_

#include <iosfwd>

namespace lhgm {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;

// Entry point of the `lhgm` tool. Subcommands: train, compress, decompress,
// eval, fit-dist, histogram, ablate-warmup. Returns kExitUsage for bad
// arguments or configuration and kExitData for unreadable, corrupt or
// mismatched data.
int RunCli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace lhgm

#endif  // LHGM_CLI_H_
