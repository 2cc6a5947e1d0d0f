// Copyright 2026 The gdc Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace gdc {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input: bad config, out-of-vocab ids, invalid sequences.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// The requested moments cannot be reached by any exponential tilt of the base.
class InfeasibleConstraint : public Error {
 public:
  using Error::Error;
};

/// Non-finite parameters, gradients or estimates.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// Raised when an enumeration would exceed the configured space bound.
class SpaceTooLarge : public Error {
 public:
  using Error::Error;
};

/// Quasi-rejection sampling accepted nothing within its attempt budget.
class StarvationError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace gdc
