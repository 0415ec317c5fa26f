#pragma once

#include <stdexcept>
#include <string>

namespace advknn {

/// Base class for all toolkit errors. The category string is stable and
/// machine-readable; the CLI prints it as `error: <category>: <what>`.
class Error : public std::runtime_error {
public:
    Error(std::string category, const std::string& msg)
        : std::runtime_error(msg), category_(std::move(category)) {}

    const std::string& category() const noexcept { return category_; }

private:
    std::string category_;
};

struct ShapeError : Error {
    explicit ShapeError(const std::string& msg) : Error("shape", msg) {}
};

struct ContractError : Error {
    explicit ContractError(const std::string& msg) : Error("contract", msg) {}
};

struct NumericError : Error {
    explicit NumericError(const std::string& msg) : Error("numeric", msg) {}
};

struct FormatError : Error {
    explicit FormatError(const std::string& msg) : Error("format", msg) {}
};

struct TruncationError : Error {
    explicit TruncationError(const std::string& msg) : Error("truncation", msg) {}
};

struct PairingError : Error {
    explicit PairingError(const std::string& msg) : Error("pairing", msg) {}
};

struct CoverageError : Error {
    explicit CoverageError(const std::string& msg) : Error("coverage", msg) {}
};

struct TrainingError : Error {
    explicit TrainingError(const std::string& msg) : Error("training", msg) {}
};

struct ConfigError : Error {
    explicit ConfigError(const std::string& msg) : Error("config", msg) {}
};

struct FingerprintError : Error {
    explicit FingerprintError(const std::string& msg) : Error("fingerprint", msg) {}
};

struct DependencyError : Error {
    explicit DependencyError(const std::string& msg) : Error("dependency", msg) {}
};

struct IoError : Error {
    explicit IoError(const std::string& msg) : Error("io", msg) {}
};

} // namespace advknn
