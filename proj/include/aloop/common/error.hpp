#pragma once

#include <stdexcept>
#include <string>

namespace aloop {

/// Caller violated an operation's precondition (bad literal, wrong state, shape mismatch).
class UsageError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

/// A named entity (session, sample, route target) does not exist.
class NotFoundError : public UsageError {
public:
    using UsageError::UsageError;
};

/// Input text could not be parsed. `line()` is 1-based, 0 when unknown.
class ParseError : public std::runtime_error {
public:
    ParseError(const std::string& what, int line = 0)
        : std::runtime_error(line > 0 ? what + " (line " + std::to_string(line) + ")" : what),
          line_(line) {}
    int line() const noexcept { return line_; }

private:
    int line_;
};

/// A mandatory YAML section is absent.
class MissingSectionError : public ParseError {
public:
    explicit MissingSectionError(std::string section)
        : ParseError("missing section: " + section), section_(std::move(section)) {}
    const std::string& section() const noexcept { return section_; }

private:
    std::string section_;
};

/// Operation attempted while another one owns the resource (e.g. an AL iteration in flight).
class ConflictError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Numerical failure during training (NaN/inf loss).
class TrainingError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace aloop
