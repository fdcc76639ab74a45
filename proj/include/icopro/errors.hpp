#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace icopro {

// Invalid configuration or mismatched shapes supplied by the caller.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// API called in the wrong state (e.g. backward without forward, step after done).
class UsageError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

// Non-finite values encountered during computation.
class NumericalError : public std::runtime_error {
public:
    NumericalError(const std::string& what, std::size_t index)
        : std::runtime_error(what + " (parameter index " + std::to_string(index) + ")"), index_(index) {}

    std::size_t index() const noexcept { return index_; }

private:
    std::size_t index_;
};

// Malformed file on disk.
class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace icopro
