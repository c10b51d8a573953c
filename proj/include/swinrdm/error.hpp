#pragma once

#include <stdexcept>
#include <string>

namespace swinrdm {

/// Base class for every error raised by the library. `kind()` is the stable
/// machine-readable tag the CLI writes into its error record.
class Error : public std::runtime_error {
public:
    Error(std::string kind, const std::string& message)
        : std::runtime_error(message), kind_(std::move(kind)) {}

    const std::string& kind() const noexcept { return kind_; }

private:
    std::string kind_;
};

class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& message) : Error("config", message) {}
};

class ShapeError : public Error {
public:
    explicit ShapeError(const std::string& message) : Error("shape", message) {}
};

class DataError : public Error {
public:
    explicit DataError(const std::string& message) : Error("data", message) {}
};

class RangeError : public Error {
public:
    explicit RangeError(const std::string& message) : Error("range", message) {}
};

class IoError : public Error {
public:
    explicit IoError(const std::string& message) : Error("io", message) {}
};

/// Raised when a training loss becomes non-finite.
class TrainingDiverged : public Error {
public:
    TrainingDiverged(const std::string& message, int epoch, long step)
        : Error("diverged", message), epoch_(epoch), step_(step) {}

    int epoch() const noexcept { return epoch_; }
    long step() const noexcept { return step_; }

private:
    int epoch_;
    long step_;
};

} // namespace swinrdm
