#pragma once

#include <stdexcept>
#include <string>

namespace sigmae {

/// Base class for all library errors.
class error : public std::runtime_error {
public:
    explicit error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Invalid configuration: bad option values, inconsistent dimensions,
/// malformed config files. CLI exit code 2.
class config_error : public error {
public:
    explicit config_error(const std::string& msg) : error(msg) {}
};

/// Bad or missing data: unreadable files, corrupt payloads, non-finite
/// values admitted from I/O. CLI exit code 3.
class data_error : public error {
public:
    explicit data_error(const std::string& msg) : error(msg) {}
};

/// Numeric failure at runtime: non-finite loss or gradient, shape
/// mismatches between tensors. CLI exit code 4.
class numeric_error : public error {
public:
    explicit numeric_error(const std::string& msg) : error(msg) {}
};

} // namespace sigmae
