#pragma once

#include <stdexcept>
#include <string>

namespace statecast {

/// Malformed or inconsistent input: bad files, geometry mismatches, violated
/// operation preconditions. Maps to exit code 3 in the CLI.
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid run configuration (flag/config-file values). Maps to exit code 2.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A violated internal invariant; indicates a bug, not bad input. Exit code 4.
class InternalError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

namespace detail {

inline void require(bool condition, const std::string& message) {
    if (!condition) throw DataError(message);
}

inline void ensure(bool condition, const std::string& message) {
    if (!condition) throw InternalError(message);
}

}  // namespace detail
}  // namespace statecast
