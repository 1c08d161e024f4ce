#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace sgt {

// Base class for every typed failure the solver can raise. Each subsystem
// throws a distinct type so callers (and the CLI exit-code mapping) can tell
// a lost contraction certificate from an I/O problem without string matching.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// field_core
struct NonFiniteField : Error { using Error::Error; };

// map solves (grid inversion and the per-step implicit relation)
struct MapSolveFailed : Error { using Error::Error; };
struct ContractionLost : Error { using Error::Error; };

// elliptic
struct EllipticSingular : Error { using Error::Error; };
struct IncompatibleRHS : Error { using Error::Error; };

// ma_step
struct ABTooLarge : Error { using Error::Error; };
struct DegenerateDeterminant : Error { using Error::Error; };
struct ConvexityLost : Error { using Error::Error; };
struct NewtonDiverged : Error { using Error::Error; };
struct PositivityLost : Error { using Error::Error; };

// stepper
struct LipschitzCapExceeded : Error { using Error::Error; };
struct FlowRoundTripFailed : Error { using Error::Error; };

// diagnostics
struct InsufficientSnapshots : Error { using Error::Error; };

// cli_io
struct ConfigInvalid : Error {
    explicit ConfigInvalid(std::vector<std::string> violations_)
        : Error(join(violations_)), violations(std::move(violations_)) {}
    std::vector<std::string> violations;

  private:
    static std::string join(const std::vector<std::string>& v) {
        std::string s = "invalid configuration:";
        for (const auto& m : v) { s += "\n  - "; s += m; }
        return s;
    }
};
struct IOError : Error { using Error::Error; };
struct ChecksumMismatch : Error { using Error::Error; };
struct VersionMismatch : Error { using Error::Error; };

} // namespace sgt
