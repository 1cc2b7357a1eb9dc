#pragma once

#include <stdexcept>
#include <string>

namespace s2t {

// Root of every error raised by the library. The CLI maps subclasses onto
// exit codes (ConfigError -> 2, DataError -> 3).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// Anything wrong with input data: annotation files, feature files, corpora.
class DataError : public Error {
 public:
  using Error::Error;
};

// Annotation parsing. `path()` is a JSON-pointer-like location such as
// "rallies[0].tactics[1].states".
class AnnotationError : public DataError {
 public:
  AnnotationError(const std::string& kind, std::string path, const std::string& what)
      : DataError(kind + " at " + (path.empty() ? std::string("<root>") : path) + ": " + what),
        path_(std::move(path)) {}
  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

class SyntaxError : public AnnotationError {
 public:
  SyntaxError(std::string path, const std::string& what)
      : AnnotationError("syntax error", std::move(path), what) {}
};

class SchemaError : public AnnotationError {
 public:
  SchemaError(std::string path, const std::string& what)
      : AnnotationError("schema error", std::move(path), what) {}
};

class InvariantError : public AnnotationError {
 public:
  InvariantError(std::string path, const std::string& what)
      : AnnotationError("invariant violated", std::move(path), what) {}
};

#define S2T_DEFINE_ERROR(Name, Base)   \
  class Name : public Base {           \
   public:                             \
    using Base::Base;                  \
  };

S2T_DEFINE_ERROR(TooFewMatches, DataError)
S2T_DEFINE_ERROR(EmptyCorpus, DataError)
S2T_DEFINE_ERROR(DegenerateCorpus, DataError)
S2T_DEFINE_ERROR(CorpusTooSmall, DataError)
S2T_DEFINE_ERROR(UnknownShotType, DataError)
S2T_DEFINE_ERROR(ParityError, Error)
S2T_DEFINE_ERROR(InvalidUnit, Error)
S2T_DEFINE_ERROR(ShapeError, Error)
S2T_DEFINE_ERROR(DomainError, Error)
S2T_DEFINE_ERROR(IndexError, Error)
S2T_DEFINE_ERROR(EmptySequence, Error)
S2T_DEFINE_ERROR(EmptyInput, Error)
S2T_DEFINE_ERROR(EmptyStates, Error)
S2T_DEFINE_ERROR(PromptLengthMismatch, Error)
S2T_DEFINE_ERROR(NonFiniteGradient, Error)
S2T_DEFINE_ERROR(UnknownCommand, ConfigError)

#undef S2T_DEFINE_ERROR

}  // namespace s2t
