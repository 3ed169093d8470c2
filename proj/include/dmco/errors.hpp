#pragma once

#include <stdexcept>
#include <string>

namespace dmco {

/// Inconsistent dimensions, empty inputs, bad parameter records.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A sampler id that was never registered.
class UnknownSamplerError : public ConfigError {
public:
    explicit UnknownSamplerError(const std::string& id)
        : ConfigError("unknown sampler id '" + id + "'") {}
};

/// Non-finite values produced during simulation or optimization.
class NumericError : public std::runtime_error {
public:
    explicit NumericError(const std::string& what, int time = -1)
        : std::runtime_error(time >= 0 ? what + " (t=" + std::to_string(time) + ")" : what),
          time_(time) {}

    /// Offending decision time, or -1 when not tied to a time step.
    int time() const noexcept { return time_; }

private:
    int time_;
};

/// Argument outside the mathematical domain of a formula.
class DomainError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

/// Closed form requested outside the regime where it is known.
class UnsupportedRegimeError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class CorruptFileError : public IoError {
public:
    using IoError::IoError;
};

class UnsupportedVersionError : public IoError {
public:
    UnsupportedVersionError(unsigned found, unsigned supported)
        : IoError("unsupported checkpoint version " + std::to_string(found) +
                  " (this build reads version " + std::to_string(supported) + ")"),
          found_(found), supported_(supported) {}

    unsigned found() const noexcept { return found_; }
    unsigned supported() const noexcept { return supported_; }

private:
    unsigned found_;
    unsigned supported_;
};

}  // namespace dmco
