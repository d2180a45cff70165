#pragma once

#include <stdexcept>
#include <string>

namespace jumpctl {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Input shape problems (matrix sizes, block counts, vector lengths).
struct DimensionError : Error {
    using Error::Error;
};

// Mode or step index outside the valid range.
struct IndexError : Error {
    using Error::Error;
};

struct NotErgodicError : Error {
    using Error::Error;
};

struct InvalidInitialModeError : Error {
    using Error::Error;
};

// An eigenvalue/power iteration stagnated without meeting its tolerance.
struct ConvergenceError : Error {
    using Error::Error;
};

// A fixed-point solver hit its iteration cap.
struct NotConvergedError : Error {
    using Error::Error;
};

// The mode-averaged input weight of the control Riccati map is singular
// (typically: no successor mode ever delivers the control packet).
struct SingularBtildeError : Error {
    using Error::Error;
};

// The innovation weight of the filtering Riccati map is singular.
struct SingularRtildeError : Error {
    using Error::Error;
};

// No output-injection gain with a contractive error-moment operator was found.
struct NoInitialGainError : Error {
    using Error::Error;
};

// Inputs handed to an identity check do not satisfy its premise.
struct HypothesisError : Error {
    using Error::Error;
};

struct InsufficientTrialsError : Error {
    using Error::Error;
};

struct ConfigError : Error {
    using Error::Error;
};

} // namespace jumpctl
