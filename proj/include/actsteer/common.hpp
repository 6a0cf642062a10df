#pragma once

#include <stdexcept>
#include <string>

namespace actsteer {

// Operand shape mismatch in a tensor primitive.
struct shape_error : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Bad user input: config files, CLI arguments, violated preconditions.
struct config_error : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Malformed, truncated or inconsistent files on disk.
struct io_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Non-finite values where finite ones are required. Carries the training
// step index when raised inside the optimizer loop (-1 otherwise).
struct numeric_error : std::runtime_error {
    explicit numeric_error(const std::string& what, long step = -1)
        : std::runtime_error(what), step_index(step) {}
    long step_index;
};

// Process exit codes used by the CLI.
inline constexpr int exit_ok = 0;
inline constexpr int exit_config_error = 2;
inline constexpr int exit_numeric_error = 3;

}  // namespace actsteer
