#pragma once

#include <stdexcept>
#include <string>

namespace makevlp {

// Base for everything thrown by this library.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Bad configuration or contract violation on user-supplied options. CLI exit 2.
struct ConfigError : Error {
  using Error::Error;
};

// Filesystem / parsing failures. CLI exit 3.
struct IoError : Error {
  using Error::Error;
};

// Numeric failure at runtime (non-finite loss, degenerate map). CLI exit 4.
struct NumericError : Error {
  using Error::Error;
};

// Checkpoint/manifest incompatibility. CLI exit 5.
struct CompatError : Error {
  using Error::Error;
};

struct MissingFile : IoError {
  explicit MissingFile(const std::string& path) : IoError("missing file: " + path) {}
};

struct SchemaViolation : IoError {
  int line_no;
  std::string field;
  SchemaViolation(int line, std::string fld)
      : IoError("schema violation at line " + std::to_string(line) + ", field '" + fld + "'"),
        line_no(line),
        field(std::move(fld)) {}
};

struct EmptyManifest : IoError {
  explicit EmptyManifest(const std::string& path) : IoError("manifest has no records: " + path) {}
};

struct InvalidConfig : ConfigError {
  explicit InvalidConfig(const std::string& what) : ConfigError("invalid config: " + what) {}
};

struct EmptyBatch : ConfigError {
  EmptyBatch() : ConfigError("cannot build a batch from zero records") {}
};

struct ShapeMismatch : Error {
  explicit ShapeMismatch(const std::string& what) : Error("shape mismatch: " + what) {}
};

struct NoValidPairs : NumericError {
  NoValidPairs() : NumericError("no valid image-text pairs in batch mask") {}
};

struct DegenerateMap : NumericError {
  DegenerateMap() : NumericError("similarity map sums to a non-positive value") {}
};

struct InsufficientData : ConfigError {
  explicit InsufficientData(const std::string& what) : ConfigError(what) {}
};

struct NonFiniteLoss : NumericError {
  long long step;
  explicit NonFiniteLoss(long long s, const std::string& detail)
      : NumericError("non-finite loss at step " + std::to_string(s) + ": " + detail), step(s) {}
};

struct IoFailure : IoError {
  using IoError::IoError;
};

struct VersionMismatch : CompatError {
  using CompatError::CompatError;
};

struct EmptyPromptSet : ConfigError {
  EmptyPromptSet() : ConfigError("prompt set resolves to zero templates") {}
};

struct NoScorableConcepts : NumericError {
  NoScorableConcepts() : NumericError("no concept has both a positive and a negative label") {}
};

}  // namespace makevlp
