#pragma once

#include <stdexcept>
#include <string>

namespace ctlgan {

/// Caller passed arguments that violate an operation's preconditions.
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A computation produced or consumed non-finite values, or a matrix lost definiteness.
class NumericFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A metric has no defined value for the given inputs (e.g. no cluster with two members).
class UndefinedMetric : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Run configuration is inconsistent or references missing artifacts.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Input data on disk could not be decoded or has the wrong shape.
class InvalidData : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace ctlgan
