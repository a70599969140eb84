#pragma once

#include <stdexcept>
#include <string>

namespace m2r {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Operand extents do not fit together.
class DimensionError : public Error {
public:
    using Error::Error;
};

// A hyperparameter or layer configuration is invalid.
class ConfigError : public Error {
public:
    using Error::Error;
};

// A call precondition was violated (odd extents, non-scalar loss, ...).
class ContractError : public Error {
public:
    using Error::Error;
};

// Softmax over an axis where every entry is -inf.
class DegenerateAxisError : public Error {
public:
    using Error::Error;
};

// Unknown magic, unsupported version or malformed record.
class FormatError : public Error {
public:
    using Error::Error;
};

// Checksum mismatch or truncated payload.
class IntegrityError : public Error {
public:
    using Error::Error;
};

// Loss or gradient became NaN/Inf.
class NumericError : public Error {
public:
    using Error::Error;
};

class UninitializedError : public Error {
public:
    using Error::Error;
};

}  // namespace m2r
