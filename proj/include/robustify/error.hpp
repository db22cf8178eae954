#pragma once

#include <stdexcept>
#include <string>

namespace robustify {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Formula outside the post-condition grammar, or arity violations.
class FormulaError : public Error {
public:
    using Error::Error;
};

/// Thresholds, seeds or property descriptions out of their documented range.
class SpecError : public Error {
public:
    using Error::Error;
};

/// Malformed or unsupported ONNX content.
class ModelError : public Error {
public:
    using Error::Error;
};

/// Malformed VNNLIB text.
class ParseError : public Error {
public:
    using Error::Error;
};

} // namespace robustify
