// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace motok {

// Base class for everything thrown by this library.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Tensor shape disagreement (matmul inner dims, kernel larger than input, ...).
class DimError : public Error {
public:
    using Error::Error;
};

// Invalid configuration: divisibility violations, bad head counts, unknown
// config keys, grid mismatches.
class ConfigError : public Error {
public:
    using Error::Error;
};

// Malformed input text (trajectory files, skeleton files, config files).
class ParseError : public Error {
public:
    using Error::Error;
};

// Well-formed input that violates a semantic invariant (non-orthonormal
// rotation, checkpoint/manifest mismatch).
class ValidationError : public Error {
public:
    using Error::Error;
};

// Runtime failure during optimization (non-finite loss or gradient).
class TrainError : public Error {
public:
    using Error::Error;
};

// Argument outside the mathematical domain of an operation (sigma <= 0,
// non-decreasing noise schedule, degenerate ray).
class DomainError : public Error {
public:
    using Error::Error;
};

// Metric is undefined on the given inputs (no mutually detected joints,
// all translation steps degenerate).
class MetricError : public Error {
public:
    using Error::Error;
};

// I/O failure (unreadable/unwritable path, bad magic).
class IoError : public Error {
public:
    using Error::Error;
};

}  // namespace motok
