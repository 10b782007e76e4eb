#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace orbit {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// File access / codec failures.
struct NotFoundError : Error { using Error::Error; };
struct DecodeError : Error { using Error::Error; };
struct IoError : Error { using Error::Error; };

// Contract violations on shapes and numeric parameters.
struct ShapeError : Error { using Error::Error; };
struct SizeError : Error { using Error::Error; };
struct ParamError : Error { using Error::Error; };

// Dataset / training surface.
struct EmptyDatasetError : Error { using Error::Error; };
struct SplitError : Error { using Error::Error; };

// Weight archive surface.
struct ArchiveError : Error { using Error::Error; };
struct ConfigMismatchError : Error { using Error::Error; };
struct WeightsUnavailableError : Error { using Error::Error; };

// User-facing configuration (CLI / JSON) problems. Maps to exit code 2.
struct ConfigError : Error { using Error::Error; };

}  // namespace orbit
