// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace ccpc {

/// Tensor extents do not match what an operation requires.
class DimensionError : public std::invalid_argument {
 public:
  explicit DimensionError(const std::string& what)
      : std::invalid_argument("dimension mismatch: " + what) {}
};

/// Distribution or layer parameters violate their invariants.
class InvalidParamsError : public std::invalid_argument {
 public:
  explicit InvalidParamsError(const std::string& what)
      : std::invalid_argument("invalid parameters: " + what) {}
};

/// The compressed payload cannot be decoded.
class CorruptStreamError : public std::runtime_error {
 public:
  explicit CorruptStreamError(const std::string& what)
      : std::runtime_error("corrupt stream: " + what) {}
};

/// Bitstream or checkpoint written by an incompatible version/model.
class VersionMismatchError : public std::runtime_error {
 public:
  explicit VersionMismatchError(const std::string& what)
      : std::runtime_error("version mismatch: " + what) {}
};

/// Loss or gradient went non-finite during training.
class NonFiniteError : public std::runtime_error {
 public:
  explicit NonFiniteError(const std::string& what)
      : std::runtime_error("non-finite value: " + what) {}
};

/// An ablation sweep ran out of its wall-clock budget.
class BudgetExhaustedError : public std::runtime_error {
 public:
  explicit BudgetExhaustedError(const std::string& what)
      : std::runtime_error("budget exhausted: " + what) {}
};

class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace ccpc
