#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace rio {

/// Base of every exception thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

/// Malformed input record. Carries the file, line (1-based, 0 if unknown) and field name.
class ParseError : public Error {
public:
    ParseError(std::string file, std::size_t line, std::string field, const std::string& what);

    const std::string& file() const { return file_; }
    std::size_t line() const { return line_; }
    const std::string& field() const { return field_; }

private:
    std::string file_;
    std::size_t line_;
    std::string field_;
};

/// Timestamps not strictly increasing.
class SequenceOrderError : public Error {
public:
    using Error::Error;
};

class DegenerateGeometry : public Error {
public:
    using Error::Error;
};

class InsufficientPoints : public Error {
public:
    using Error::Error;
};

class DegenerateFit : public Error {
public:
    using Error::Error;
};

class ExtrapolationTooFar : public Error {
public:
    using Error::Error;
};

class InsufficientCorrespondences : public Error {
public:
    using Error::Error;
};

class SingularSystem : public Error {
public:
    using Error::Error;
};

class DanglingReference : public Error {
public:
    using Error::Error;
};

class NoOverlap : public Error {
public:
    using Error::Error;
};

}  // namespace rio
