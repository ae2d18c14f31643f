// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace pasta::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitStageFailure = 1;
inline constexpr int kExitUsage = 2;

/// Runs one subcommand. `args` excludes the program name. Help text goes to
/// `out`; logs and structured errors go to `err`; data goes to files only.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace pasta::cli
