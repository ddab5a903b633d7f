#pragma once

#include <string>
#include <vector>

namespace disclabel {

// Command-line pipeline: gen-phantoms, preprocess, train, predict, evaluate,
// plot. Returns 0 on success, 1 on validation/usage errors, 2 on I/O errors.
// args excludes the program name. DISCLABEL_SEED provides the default seed
// when a subcommand's --seed flag is absent.
int run(std::vector<std::string> args);

int run(int argc, const char* const* argv);

}  // namespace disclabel
