#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace sscd {

// Error categories. The CLI maps each category to a distinct exit code.

class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class ParameterError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Frame ordering, chain gaps and other graph-structure violations.
class StructuralError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class NumericalError : public std::runtime_error {
public:
    explicit NumericalError(const std::string& what, std::size_t index = npos)
        : std::runtime_error(what), index_(index) {}

    static constexpr std::size_t npos = static_cast<std::size_t>(-1);

    /// Offending element (flat parameter index for gradients), or npos.
    std::size_t index() const noexcept { return index_; }

private:
    std::size_t index_;
};

/// Raised by brute-force oracles when the enumeration would be too large.
class OracleScopeError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class IoErrorCode {
    open_failed,
    write_failed,
    bad_magic,
    version_mismatch,
    truncated,
    trailing_bytes,
    malformed_record,
};

const char* to_string(IoErrorCode code) noexcept;

class IoError : public std::runtime_error {
public:
    IoError(IoErrorCode code, const std::string& what)
        : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

    IoErrorCode code() const noexcept { return code_; }

private:
    IoErrorCode code_;
};

}  // namespace sscd
