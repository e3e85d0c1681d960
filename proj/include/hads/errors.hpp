#pragma once

#include <stdexcept>
#include <string>

namespace hads {

/// Error categories. The CLI maps these onto stable exit codes.
enum class ErrorKind { Dimension, Config, Data, State, Numeric };

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

struct DimensionError : Error {
    explicit DimensionError(const std::string& w) : Error(ErrorKind::Dimension, w) {}
};
struct ConfigError : Error {
    explicit ConfigError(const std::string& w) : Error(ErrorKind::Config, w) {}
};
struct DataError : Error {
    explicit DataError(const std::string& w) : Error(ErrorKind::Data, w) {}
};
struct StateError : Error {
    explicit StateError(const std::string& w) : Error(ErrorKind::State, w) {}
};
struct NumericError : Error {
    explicit NumericError(const std::string& w) : Error(ErrorKind::Numeric, w) {}
};

inline const char* to_string(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::Dimension: return "dimension";
        case ErrorKind::Config: return "config";
        case ErrorKind::Data: return "data";
        case ErrorKind::State: return "state";
        case ErrorKind::Numeric: return "numeric";
    }
    return "unknown";
}

}  // namespace hads
