#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

#include <Eigen/Core>

namespace xmreid {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed input files and records.
class FormatError : public Error {
 public:
  using Error::Error;
};

// Inputs that parse but violate a contract (ranges, dimensions, invariants).
class ValidationError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf produced during a computation.
class NumericError : public Error {
 public:
  using Error::Error;
};

// FNV-1a, 64 bit.
inline std::uint64_t fnv1a(std::string_view bytes,
                           std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v);

}  // namespace xmreid
