#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace frmlp {

using Shape = std::vector<std::int64_t>;

/// Error hierarchy. Every failure mode in the library throws one of these;
/// the CLI maps them to exit codes and messages.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Operand extents do not satisfy an op's shape contract.
struct ShapeError : Error {
    using Error::Error;
};

/// Input values outside an op's mathematical domain (log of a negative, ...).
struct DomainError : Error {
    using Error::Error;
};

/// API misuse: non-scalar backward, repeated backward, partition of
/// non-multiple extents, and similar caller mistakes.
struct UsageError : Error {
    using Error::Error;
};

/// Invalid run/network configuration.
struct ConfigError : Error {
    using Error::Error;
};

/// Malformed file content. Carries the byte offset of the defect.
struct FormatError : Error {
    explicit FormatError(const std::string& msg, std::uint64_t offset)
        : Error(msg + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}
    std::uint64_t offset() const { return offset_; }

  private:
    std::uint64_t offset_ = 0;
};

/// Checkpoint/volume format version not supported by this build.
struct VersionError : Error {
    using Error::Error;
};

/// A synthesis routine could not satisfy its postcondition.
struct GenerationError : Error {
    using Error::Error;
};

struct IoError : Error {
    using Error::Error;
};

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ", ";
        out += std::to_string(s[i]);
    }
    out += "]";
    return out;
}

}  // namespace frmlp
