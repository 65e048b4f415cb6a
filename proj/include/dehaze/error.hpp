#pragma once

#include <stdexcept>
#include <string>

namespace dehaze {

/// Invalid user-supplied parameter (geometry, counts, ranges).
class ParameterError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Violated interface contract, e.g. rasters of mismatched shape.
class ContractError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

/// Non-finite or ill-conditioned arithmetic detected at runtime.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Config file problems: unknown keys, out-of-range values, bad syntax.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace dehaze
