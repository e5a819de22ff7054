#pragma once

// `tractorc` command line: synth, pretrain, train, register, cluster, eval,
// gradcheck, config. Exit codes: 0 success, 1 user error (bad flags, unreadable
// or malformed inputs), 2 internal error (divergence, failed gradient check).

#include <iosfwd>
#include <string>
#include <vector>

namespace tractorc {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUser = 1;
inline constexpr int kExitInternal = 2;

/// args excludes the program name. Machine-readable results go to `out`,
/// progress and errors to `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace tractorc
