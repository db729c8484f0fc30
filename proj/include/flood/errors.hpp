#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace flood {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidShape : public Error {
 public:
  using Error::Error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

// Malformed or unsupported image payload. offset() is the byte position at
// which decoding stopped.
class DecodeError : public Error {
 public:
  DecodeError(const std::string& what, std::size_t offset)
      : Error(what + " (at byte offset " + std::to_string(offset) + ")"), detail_(what), offset_(offset) {}
  std::size_t offset() const noexcept { return offset_; }
  const std::string& detail() const noexcept { return detail_; }

 private:
  std::string detail_;
  std::size_t offset_;
};

// Well-formed payload in a variant this decoder does not handle (16-bit PNG,
// interlacing, PPM maxval other than 255).
class UnsupportedFormat : public DecodeError {
 public:
  using DecodeError::DecodeError;
};

class CorruptArchive : public Error {
 public:
  using Error::Error;
};

class UnsupportedVersion : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class TrainingError : public Error {
 public:
  TrainingError(const std::string& what, int epoch, int batch)
      : Error(what + " (epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch) + ")"),
        epoch_(epoch),
        batch_(batch) {}
  int epoch() const noexcept { return epoch_; }
  int batch() const noexcept { return batch_; }

 private:
  int epoch_;
  int batch_;
};

}  // namespace flood
