#pragma once

#include <stdexcept>
#include <string>

namespace clem {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// A raw code string violated its code system's format.
struct FormatError : Error {
    using Error::Error;
};

/// A corpus / config / report file violated its schema.
struct SchemaError : Error {
    using Error::Error;
};

struct IoError : Error {
    using Error::Error;
};

/// Magic bytes or format version of a binary artifact did not match.
struct VersionError : Error {
    using Error::Error;
};

struct ConfigError : Error {
    using Error::Error;
};

} // namespace clem
