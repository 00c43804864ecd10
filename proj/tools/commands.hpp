#pragma once

namespace puicl::cli {

/// Parses argv and runs one subcommand. Returns the process exit code.
int run(int argc, char** argv);

}  // namespace puicl::cli
