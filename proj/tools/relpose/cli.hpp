#pragma once

namespace relpose::cli {

// Runs the relpose command line. Returns the process exit code: 0 on
// success, 1 on usage errors, 2 on data errors (unreadable or malformed
// inputs, failed checks).
int run(int argc, char** argv);

}  // namespace relpose::cli
