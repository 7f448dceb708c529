#pragma once

#include <stdexcept>
#include <string>

namespace icumort {

// Error taxonomy mirrors the CLI exit codes: usage_error -> 1,
// config_error / data_error -> 2, anything else -> 3.
class usage_error : public std::runtime_error {
public:
    explicit usage_error(const std::string& msg) : std::runtime_error(msg) {}
};

class config_error : public std::runtime_error {
public:
    explicit config_error(const std::string& msg) : std::runtime_error(msg) {}
};

class data_error : public std::runtime_error {
public:
    explicit data_error(const std::string& msg) : std::runtime_error(msg) {}
};

class internal_error : public std::runtime_error {
public:
    explicit internal_error(const std::string& msg) : std::runtime_error(msg) {}
};

} // namespace icumort
