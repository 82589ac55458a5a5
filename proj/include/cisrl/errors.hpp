#pragma once

#include <stdexcept>
#include <string>

namespace cisrl {

/// Base class for all library errors.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// File or config contents do not parse as the expected format.
struct FormatError : Error {
  using Error::Error;
};

/// File carries a version tag this build does not understand.
struct VersionError : Error {
  using Error::Error;
};

/// Stored checksum does not match the payload.
struct ChecksumError : Error {
  using Error::Error;
};

/// Weights file describes a different network architecture.
struct ArchMismatchError : Error {
  using Error::Error;
};

/// Query state lies outside the set a table or grid covers.
struct OutsideSetError : Error {
  using Error::Error;
};

/// A member cell has no sampled action with a member successor.
struct MissingSafeActionError : Error {
  MissingSafeActionError(int i_ca, int i_temp)
      : Error("no safe action for member cell (" + std::to_string(i_ca) + ", " +
              std::to_string(i_temp) + ")"),
        cell_ca(i_ca),
        cell_temp(i_temp) {}
  int cell_ca;
  int cell_temp;
};

/// Rejection sampling exhausted its attempt budget.
struct SamplingError : Error {
  using Error::Error;
};

/// Training produced a non-finite loss or parameter.
struct NonFiniteError : Error {
  using Error::Error;
};

/// Experiment configuration is inconsistent or has unknown keys.
struct ConfigError : Error {
  using Error::Error;
};

}  // namespace cisrl
