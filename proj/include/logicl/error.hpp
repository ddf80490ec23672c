#pragma once

#include <stdexcept>
#include <string>

namespace logicl {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid configuration: bad regex, out-of-range hyperparameter, parse failure.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Input produced no usable sequences.
class EmptyCorpusError : public Error {
public:
    using Error::Error;
};

/// Malformed file content (JSONL, matrix, cache). Carries the location when known.
class FormatError : public Error {
public:
    using Error::Error;
};

/// An input whose vector representation collapses to zero.
class DegenerateInputError : public Error {
public:
    using Error::Error;
};

/// Network or endpoint failure; retryable.
class TransportError : public Error {
public:
    using Error::Error;
};

/// LLM reply without a usable probability. Keeps the raw text.
class ResponseParseError : public Error {
public:
    ResponseParseError(const std::string& what, std::string raw)
        : Error(what), raw_(std::move(raw)) {}
    const std::string& raw() const noexcept { return raw_; }

private:
    std::string raw_;
};

/// Cached artifact does not match the current fingerprint.
class CacheInvalidError : public Error {
public:
    using Error::Error;
};

/// A pipeline stage was requested before the stage it depends on.
class MissingArtifactError : public Error {
public:
    using Error::Error;
};

/// Optimization diverged (non-finite loss or gradient).
class TrainingError : public Error {
public:
    using Error::Error;
};

}  // namespace logicl
