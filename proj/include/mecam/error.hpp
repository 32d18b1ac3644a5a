#pragma once

#include <stdexcept>
#include <string>

namespace mecam {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Bad command-line usage or an invalid configuration value.
class UsageError : public Error {
public:
    using Error::Error;
};

/// Tensor shapes that do not fit the operation.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// NaN or Inf produced where finite values are required.
class NumericError : public Error {
public:
    using Error::Error;
};

enum class DataErrorKind {
    io,
    missing_file,
    bad_magic,
    bad_maxval,
    truncated,
    malformed,
    label_out_of_range,
    duplicate_id,
    unsupported_version,
    crc_mismatch,
};

const char* to_string(DataErrorKind kind);

/// Anything wrong with files on disk: images, manifests, checkpoints.
class DataError : public Error {
public:
    DataError(DataErrorKind kind, const std::string& what)
        : Error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

    DataErrorKind kind() const noexcept { return kind_; }

private:
    DataErrorKind kind_;
};

inline const char* to_string(DataErrorKind kind) {
    switch (kind) {
        case DataErrorKind::io: return "io error";
        case DataErrorKind::missing_file: return "missing file";
        case DataErrorKind::bad_magic: return "bad magic";
        case DataErrorKind::bad_maxval: return "unsupported maxval";
        case DataErrorKind::truncated: return "truncated";
        case DataErrorKind::malformed: return "malformed";
        case DataErrorKind::label_out_of_range: return "label out of range";
        case DataErrorKind::duplicate_id: return "duplicate id";
        case DataErrorKind::unsupported_version: return "unsupported version";
        case DataErrorKind::crc_mismatch: return "crc mismatch";
    }
    return "data error";
}

}  // namespace mecam
