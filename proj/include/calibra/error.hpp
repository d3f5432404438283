#pragma once

#include <stdexcept>
#include <string>

namespace calibra {

// Error taxonomy shared by all modules. Everything derives from Error so
// callers can catch the whole family at the CLI boundary.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed file contents (bad magic, unparsable header, unsupported dtype).
class FormatError : public Error {
public:
    explicit FormatError(const std::string& msg) : Error(msg) {}
};

// Recognized format but a layout we refuse (e.g. Fortran-order arrays).
class UnsupportedLayout : public Error {
public:
    explicit UnsupportedLayout(const std::string& msg) : Error(msg) {}
};

// Filesystem-level failures.
class IoError : public Error {
public:
    explicit IoError(const std::string& msg) : Error(msg) {}
};

// A domain-type invariant was violated at construction or call time.
class ValidationError : public Error {
public:
    explicit ValidationError(const std::string& msg) : Error(msg) {}
};

// Arguments outside an operation's mathematical domain (empty mask,
// non-positive temperature, ...).
class DomainError : public Error {
public:
    explicit DomainError(const std::string& msg) : Error(msg) {}
};

// Numerical breakdown: NaN loss, unsolvable system, missing bracket.
class NumericalError : public Error {
public:
    explicit NumericalError(const std::string& msg) : Error(msg) {}
};

// API misuse across calls (e.g. a backward pass fed a mismatched cache).
class StateError : public Error {
public:
    explicit StateError(const std::string& msg) : Error(msg) {}
};

// A region mask selected no usable pixels.
class EmptyRegion : public Error {
public:
    explicit EmptyRegion(const std::string& msg) : Error(msg) {}
};

}  // namespace calibra
