#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace dccnn {

/// Base class for all library errors.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidInput : public Error {
 public:
  using Error::Error;
};

class NumericalError : public Error {
 public:
  using Error::Error;
};

class EmptyDataset : public Error {
 public:
  using Error::Error;
};

class InsufficientSamples : public Error {
 public:
  using Error::Error;
};

/// A dual coefficient fell outside its feasible interval.
class InfeasibleDual : public Error {
 public:
  InfeasibleDual(const std::string& what, std::size_t index)
      : Error(what), index(index) {}
  std::size_t index;
};

/// No eigenvalue reached the recovery threshold; carries the largest one seen.
class NoFiltersRecovered : public Error {
 public:
  NoFiltersRecovered(const std::string& what, double max_eigenvalue)
      : Error(what), max_eigenvalue(max_eigenvalue) {}
  double max_eigenvalue;
};

// ---- dataset file errors ----

class BadMagic : public Error {
 public:
  BadMagic(const std::string& what, std::uint32_t expected, std::uint32_t got)
      : Error(what), expected(expected), got(got) {}
  std::uint32_t expected;
  std::uint32_t got;
};

class CountMismatch : public Error {
 public:
  using Error::Error;
};

class TruncatedFile : public Error {
 public:
  using Error::Error;
};

// ---- model stream errors ----

class CorruptStream : public Error {
 public:
  CorruptStream(const std::string& what, std::size_t byte_offset)
      : Error(what + " (at byte " + std::to_string(byte_offset) + ")"),
        byte_offset(byte_offset) {}
  std::size_t byte_offset;
};

class UnsupportedVersion : public Error {
 public:
  UnsupportedVersion(const std::string& what, std::uint32_t version)
      : Error(what), version(version) {}
  std::uint32_t version;
};

}  // namespace dccnn
