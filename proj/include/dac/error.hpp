#ifndef DAC_ERROR_HPP_INCLUDED
#define DAC_ERROR_HPP_INCLUDED

#include <stdexcept>
#include <string>

namespace dac {

/// Broad error families. The numeric value is the CLI exit code.
enum class ErrorFamily : int {
    usage = 2,
    io = 3,
    invariant = 4,
    numeric = 5,
};

enum class ErrorKind {
    usage,
    io_error,
    bad_magic,
    version_mismatch,
    checksum_fail,
    invariant_violation,
    dimension_mismatch,
    missing_group,
    empty_bundle,
    length_mismatch,
    insufficient_views,
    zero_norm,
    non_positive_temperature,
};

constexpr const char* kind_name(ErrorKind kind) noexcept
{
    switch (kind) {
    case ErrorKind::usage: return "Usage";
    case ErrorKind::io_error: return "IoError";
    case ErrorKind::bad_magic: return "BadMagic";
    case ErrorKind::version_mismatch: return "VersionMismatch";
    case ErrorKind::checksum_fail: return "ChecksumFail";
    case ErrorKind::invariant_violation: return "InvariantViolation";
    case ErrorKind::dimension_mismatch: return "DimensionMismatch";
    case ErrorKind::missing_group: return "MissingGroup";
    case ErrorKind::empty_bundle: return "EmptyBundle";
    case ErrorKind::length_mismatch: return "LengthMismatch";
    case ErrorKind::insufficient_views: return "InsufficientViews";
    case ErrorKind::zero_norm: return "ZeroNorm";
    case ErrorKind::non_positive_temperature: return "NonPositiveTemperature";
    }
    return "Unknown";
}

constexpr ErrorFamily family_of(ErrorKind kind) noexcept
{
    switch (kind) {
    case ErrorKind::usage:
        return ErrorFamily::usage;
    case ErrorKind::io_error:
    case ErrorKind::bad_magic:
    case ErrorKind::version_mismatch:
    case ErrorKind::checksum_fail:
        return ErrorFamily::io;
    case ErrorKind::zero_norm:
    case ErrorKind::non_positive_temperature:
        return ErrorFamily::numeric;
    default:
        return ErrorFamily::invariant;
    }
}

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what)
        : std::runtime_error(std::string(kind_name(kind)) + ": " + what), kind_(kind)
    {
    }

    ErrorKind kind() const noexcept { return kind_; }
    ErrorFamily family() const noexcept { return family_of(kind_); }
    int exit_code() const noexcept { return static_cast<int>(family()); }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what)
{
    throw Error(kind, what);
}

} // namespace dac

#endif // DAC_ERROR_HPP_INCLUDED
