#pragma once

#include <iosfwd>

namespace ope::cli {

// Parses argv and runs one subcommand. Returns 0 on success, 2 on invalid
// flags or input, 1 on runtime failure.
int run(int argc, char** argv, std::ostream& out, std::ostream& err);

}  // namespace ope::cli
