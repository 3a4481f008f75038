#pragma once

#include <stdexcept>
#include <string>

namespace fairstg {

// Error categories map onto CLI exit codes: config 2, data 3, training 4.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct DataError : std::runtime_error {
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

struct TrainError : std::runtime_error {
    explicit TrainError(const std::string& msg) : std::runtime_error(msg) {}
};

} // namespace fairstg
