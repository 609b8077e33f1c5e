#pragma once

#include <stdexcept>
#include <string>

namespace fedsim {

// Mismatched dimensions between objects that must agree (matrix shapes,
// parameter vector lengths). Message names both shapes.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Argument outside its mathematical domain (negative sigma, zero-width
// layer, fraction outside (0,1)).
class DomainError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Structurally valid input that fails a semantic requirement (single-class
// dataset, infeasible partition, empty training set).
class ValidationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Malformed text input; message carries line/column coordinates.
class ParseError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Wire protocol violation: bad magic, unsupported version, out-of-order
// round, lost connection, oversized payload.
class ProtocolError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Non-finite values where finite ones are required; message identifies the
// offending index.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace fedsim
