#pragma once

#include <stdexcept>
#include <string>

namespace adaptree {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ConfigError : Error { using Error::Error; };
struct ValidationError : Error { using Error::Error; };
struct InvariantViolation : Error { using Error::Error; };
struct DegenerateCellError : Error { using Error::Error; };
struct RankDeficientError : Error { using Error::Error; };
struct InsufficientDataError : Error { using Error::Error; };
struct NumericalError : Error { using Error::Error; };

}  // namespace adaptree
