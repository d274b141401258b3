#pragma once

#include <stdexcept>
#include <string>

namespace spanqa {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor engine
class DimensionError : public Error { using Error::Error; };
class DegenerateMaskError : public Error { using Error::Error; };
class LabelError : public Error { using Error::Error; };
class GraphError : public Error { using Error::Error; };

// Configuration and data
class ConfigError : public Error { using Error::Error; };
class ParseError : public Error { using Error::Error; };
class SchemaError : public Error { using Error::Error; };
class AlignmentError : public Error { using Error::Error; };
class FormatError : public Error { using Error::Error; };
class IndexError : public Error { using Error::Error; };
class EmptyInputError : public Error { using Error::Error; };
class InputError : public Error { using Error::Error; };

// Decoding
class OrderingError : public Error { using Error::Error; };

// Training
class TrainingError : public Error { using Error::Error; };

// Checkpoints report which part of the file was bad so callers can tell a
// foreign file from a stale or truncated one.
class CheckpointError : public Error {
 public:
  enum class Kind { Io, Magic, Version, Truncated, Schema };

  CheckpointError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

}  // namespace spanqa
