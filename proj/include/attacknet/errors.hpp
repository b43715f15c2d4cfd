#pragma once

#include <stdexcept>
#include <string>

namespace attacknet {

// Base type for every recoverable toolkit error. The CLI maps subclasses
// onto exit codes; library code never calls abort/exit.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Tensor/layer dimension mismatches and invalid shapes.
struct ShapeError : Error {
  using Error::Error;
};

// Invalid model or synthesis configuration (e.g. spatial dims not divisible
// by the pooling factor).
struct ConfigError : Error {
  using Error::Error;
};

// Non-finite values where finite ones are required (NaN/Inf activations,
// gradients or losses).
struct NumericError : Error {
  using Error::Error;
};

// Batch statistics cannot be formed (fewer than two elements per channel).
struct DegenerateBatchError : NumericError {
  using NumericError::NumericError;
};

// Bad runtime arguments: mismatched lengths, empty inputs, out-of-range
// values.
struct InputError : Error {
  using Error::Error;
};

// Class label outside {0, 1}.
struct LabelError : InputError {
  using InputError::InputError;
};

// A requested split would leave one side without samples of some class.
struct SplitError : InputError {
  using InputError::InputError;
};

// An error rate is requested for a class with zero samples.
struct UndefinedRateError : InputError {
  using InputError::InputError;
};

// Unrecognized magic bytes, versions or header fields in packed files.
struct FormatError : Error {
  using Error::Error;
};

// Structurally parseable file whose content contradicts itself (CRC
// mismatch, shape disagreeing with the embedded config, bad labels).
struct CorruptionError : Error {
  using Error::Error;
};

// Missing, unreadable, unwritable or truncated files.
struct IoError : Error {
  using Error::Error;
};

}  // namespace attacknet
