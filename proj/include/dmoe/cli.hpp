// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

namespace dmoe {

// Parses and runs one verb. Returns the process exit status: 0 on success,
// 1 on a runtime error, 2 on a usage or configuration error. `args` excludes
// the program name.
int dispatch(const std::vector<std::string>& args);
int dispatch(int argc, char** argv);

}  // namespace dmoe
