#pragma once

#include <stdexcept>
#include <string>

namespace kleinlab {

// Every library failure carries a stable name that the CLI reports verbatim.
class Error : public std::runtime_error {
public:
    Error(std::string name, const std::string& what)
        : std::runtime_error(name + ": " + what), name_(std::move(name)) {}
    const std::string& name() const noexcept { return name_; }

private:
    std::string name_;
};

// Input that can never be valid (bad disks, bad knobs, malformed files).
class ConfigError : public Error {
public:
    using Error::Error;
};

// A computation that was set up correctly but failed to produce a number.
class NumericalError : public Error {
public:
    using Error::Error;
};

} // namespace kleinlab
