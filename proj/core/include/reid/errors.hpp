#pragma once

#include <stdexcept>
#include <string>

namespace reid {

// Base class for everything thrown by this library. Each failure mode gets
// its own type so callers (and the CLI) can name what went wrong.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// File could not be opened, read or written.
class IoError : public Error {
public:
    using Error::Error;
};

// Manifest header or row does not parse.
class ManifestError : public Error {
public:
    using Error::Error;
};

// Manifest row references an image file that is absent or does not decode.
class MissingImageError : public Error {
public:
    using Error::Error;
};

class DuplicateImageIdError : public Error {
public:
    using Error::Error;
};

// Probe/gallery construction violated (e.g. identity seen in one camera only).
class ProtocolError : public Error {
public:
    using Error::Error;
};

// Tensor/vector dimension mismatch.
class ShapeError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class CheckpointError : public Error {
public:
    using Error::Error;
};

// Batch/pair sampling preconditions not met.
class SamplingError : public Error {
public:
    using Error::Error;
};

// NaN/Inf surfaced, or an iterative solver misbehaved.
class NumericError : public Error {
public:
    using Error::Error;
};

class InvalidArgument : public Error {
public:
    using Error::Error;
};

}  // namespace reid
