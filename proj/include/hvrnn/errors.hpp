#pragma once

#include <stdexcept>
#include <string>

namespace hvrnn {

// API misuse: a caller violated a documented precondition.
class ContractViolation : public std::runtime_error {
public:
    explicit ContractViolation(const std::string& msg) : std::runtime_error(msg) {}
};

// NaN/Inf surfaced during computation.
class NumericError : public std::runtime_error {
public:
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed file contents (IDX, PGM, checkpoint, config).
class FormatError : public std::runtime_error {
public:
    explicit FormatError(const std::string& msg) : std::runtime_error(msg) {}
};

// Invalid run configuration (maps to CLI exit code 2).
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace hvrnn
