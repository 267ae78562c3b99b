#pragma once

#include <stdexcept>
#include <string>

namespace pathalign {

// Raised for malformed or inconsistent input records and files (CLI exit 2).
class DataError : public std::runtime_error {
public:
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// Raised for numeric failures: non-finite losses or gradients, degenerate
// embeddings (CLI exit 3).
class NumericError : public std::runtime_error {
public:
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace pathalign
