#pragma once

#include <stdexcept>
#include <string>

namespace prequel {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Input file does not match its declared schema (missing column, bad row).
class SchemaError : public Error {
 public:
  using Error::Error;
};

// An operation was called outside its documented preconditions.
class PreconditionError : public Error {
 public:
  using Error::Error;
};

// A statistic is mathematically undefined for the given input
// (e.g. Pearson's r of a constant vector).
class UndefinedStatistic : public Error {
 public:
  using Error::Error;
};

// An external client could not be reached or broke the wire contract.
// Callers may retry.
class TransportError : public Error {
 public:
  using Error::Error;
};

}  // namespace prequel
