// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <ostream>

namespace burnlora::cli {

/// Exit codes. Failures also print one line to `err`:
///   error: code=<kind> exit=<n> message=<text>
enum Exit : int { ok = 0, usage = 2, io = 3, config = 4, data = 5, internal = 6 };

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace burnlora::cli
