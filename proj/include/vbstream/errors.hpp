#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace vbs {

// Cholesky pivot failure. Carries the index of the first non-positive pivot,
// which callers use to report which coordinate of a statistics matrix went bad.
class NotPositiveDefinite : public std::runtime_error {
public:
    NotPositiveDefinite(std::size_t pivot, const std::string& what)
        : std::runtime_error(what), pivot_(pivot) {}

    std::size_t pivot() const noexcept { return pivot_; }

private:
    std::size_t pivot_;
};

class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class StateError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

// Non-finite value produced inside an otherwise valid computation.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace vbs
