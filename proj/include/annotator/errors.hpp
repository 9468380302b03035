#pragma once

#include <stdexcept>
#include <string>

namespace annotator {

// Base class for all toolkit errors.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Malformed input data: taxonomy files, record files, fixtures, replies.
class ParseError : public Error {
public:
    using Error::Error;
};

// Invalid or inconsistent run configuration.
class ConfigError : public Error {
public:
    using Error::Error;
};

// Filesystem failures (missing paths, unwritable directories).
class IoError : public Error {
public:
    using Error::Error;
};

// Failures talking to a completion or embedding backend.
class BackendError : public Error {
public:
    enum class Kind {
        auth,       // bad credentials, never retried
        rate_limit, // throttled, retryable
        timeout,    // transport timeout or unreachable host, retryable
        malformed,  // reply did not match the wire protocol
        other,
    };

    BackendError(Kind kind, const std::string& message, std::string raw_payload = {})
        : Error(message), kind_(kind), raw_payload_(std::move(raw_payload)) {}

    Kind kind() const { return kind_; }
    bool retryable() const { return kind_ == Kind::rate_limit || kind_ == Kind::timeout; }

    // Verbatim backend reply, kept for diagnostics when kind is malformed.
    const std::string& raw_payload() const { return raw_payload_; }

private:
    Kind kind_;
    std::string raw_payload_;
};

// Metric aggregation failures (e.g. no classes left after exclusion).
class EvalError : public Error {
public:
    using Error::Error;
};

}  // namespace annotator
