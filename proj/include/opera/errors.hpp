#pragma once

#include <stdexcept>
#include <string>

namespace opera {

struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& msg) : std::runtime_error("shape error: " + msg) {}
};

struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error("numeric error: " + msg) {}
};

struct DomainError : std::runtime_error {
    explicit DomainError(const std::string& msg) : std::runtime_error("domain error: " + msg) {}
};

struct ConsistencyError : std::runtime_error {
    explicit ConsistencyError(const std::string& msg) : std::runtime_error("consistency error: " + msg) {}
};

struct DegenerateError : std::runtime_error {
    explicit DegenerateError(const std::string& msg) : std::runtime_error("degenerate input: " + msg) {}
};

struct StateError : std::runtime_error {
    explicit StateError(const std::string& msg) : std::runtime_error("state error: " + msg) {}
};

struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error("config error: " + msg) {}
};

struct ParseError : std::runtime_error {
    explicit ParseError(const std::string& msg) : std::runtime_error("parse error: " + msg) {}
};

struct SamplingError : std::runtime_error {
    explicit SamplingError(const std::string& msg) : std::runtime_error("sampling error: " + msg) {}
};

// Thrown by the training loop when the loss stops being finite.
struct DivergenceError : std::runtime_error {
    int last_good_epoch;
    DivergenceError(const std::string& msg, int epoch)
        : std::runtime_error("divergence: " + msg), last_good_epoch(epoch) {}
};

}  // namespace opera
