#pragma once

#include <stdexcept>
#include <string>

namespace hrg {

// Error taxonomy used across the library: dimension/shape violations,
// precondition (contract) violations, file ingestion problems, and
// episode sampling problems.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ShapeError : Error {
    using Error::Error;
};

struct ContractError : Error {
    using Error::Error;
};

struct IoError : Error {
    using Error::Error;
};

struct SamplingError : Error {
    using Error::Error;
};

struct ConfigError : Error {
    using Error::Error;
};

}  // namespace hrg
