#pragma once

#include <stdexcept>
#include <string>

namespace comogen {

// Base of every error raised by the library. Commands map it to a nonzero
// exit status.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor or sequence shape does not match what an operation requires.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Argument outside its valid domain (for example t outside [0, 1]).
class RangeError : public Error {
 public:
  using Error::Error;
};

class UnsatisfiableScene : public Error {
 public:
  using Error::Error;
};

class VocabularyError : public Error {
 public:
  using Error::Error;
};

// Unreadable, incomplete or inconsistent file on disk.
class FormatError : public Error {
 public:
  using Error::Error;
};

// A latent or loss went non-finite.
class NumericError : public Error {
 public:
  NumericError(const std::string& what, long step) : Error(what), step_(step) {}
  long step() const noexcept { return step_; }

 private:
  long step_;
};

}  // namespace comogen
