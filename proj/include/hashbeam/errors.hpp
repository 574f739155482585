#pragma once

#include <stdexcept>
#include <string>

namespace hashbeam {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Bad or inconsistent configuration / arguments.
struct ConfigError : Error { using Error::Error; };

// Matrix or vector shapes do not line up.
struct DimensionError : Error { using Error::Error; };

// Unregularized normal equations are singular or too ill-conditioned.
struct SingularSystemError : Error { using Error::Error; };

// A statistical routine was handed fewer samples than it needs.
struct InsufficientSamplesError : Error { using Error::Error; };

// Calibration produced an operating point that fails its verification pass.
struct CalibrationError : Error { using Error::Error; };

// No feasible hash length within the search cap meets the metric targets.
struct UnmetTargetError : Error { using Error::Error; };

// File read/write or format problems.
struct IoError : Error { using Error::Error; };

}  // namespace hashbeam
