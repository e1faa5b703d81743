#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace reliqa {

/// Base of every exception thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed input text. Carries the 1-based line number when known.
class ParseError : public Error {
public:
    ParseError(std::size_t line, const std::string& what)
        : Error("line " + std::to_string(line) + ": " + what), line_(line) {}

    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

/// Well-formed input that violates a data-model invariant.
class ValidationError : public Error {
public:
    using Error::Error;
};

/// Argument outside the mathematical domain of an operation.
class DomainError : public Error {
public:
    using Error::Error;
};

/// Shape mismatch between tensors, layers or channels.
class DimensionError : public Error {
public:
    using Error::Error;
};

/// Risk is undefined when nothing is answered.
class UndefinedRiskError : public DomainError {
public:
    UndefinedRiskError() : DomainError("undefined risk: coverage is 0") {}
};

/// No candidate threshold meets a requested risk.
class UnreachableRiskError : public Error {
public:
    explicit UnreachableRiskError(double target)
        : Error("target risk unreachable: " + std::to_string(target)), target_(target) {}

    double target() const noexcept { return target_; }

private:
    double target_;
};

} // namespace reliqa
