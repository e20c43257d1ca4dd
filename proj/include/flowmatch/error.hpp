#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace flowmatch {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Tensor extents do not agree with what an operation requires.
class DimensionError : public Error {
public:
    using Error::Error;
};

/// Malformed file contents. `offset()` is the byte position where parsing failed.
class FormatError : public Error {
public:
    FormatError(const std::string& what, std::size_t offset)
        : Error(what + " (at byte " + std::to_string(offset) + ")"), offset_(offset) {}
    explicit FormatError(const std::string& what) : Error(what), offset_(0) {}

    std::size_t offset() const noexcept { return offset_; }

    /// Same error and offset, message prefixed with e.g. the file name.
    FormatError prefixed(const std::string& prefix) const { return FormatError(prefix + what(), offset_, Tag{}); }

private:
    struct Tag {};
    FormatError(const std::string& message, std::size_t offset, Tag) : Error(message), offset_(offset) {}

    std::size_t offset_;
};

/// Weights, config file or architecture are inconsistent with each other.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// A computation would exceed a configured resource cap.
class ResourceError : public Error {
public:
    using Error::Error;
};

/// A kernel produced NaN or Inf from finite inputs.
class NumericError : public Error {
public:
    using Error::Error;
};

/// Loss or metric requested over an empty set of valid pixels.
class UndefinedMetricError : public Error {
public:
    using Error::Error;
};

}  // namespace flowmatch
