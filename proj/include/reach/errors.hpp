#pragma once

#include <stdexcept>
#include <string>

namespace reach {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

class ShapeMismatch : public Error {
 public:
  using Error::Error;
};

// kinematics
class NotConverged : public Error {
 public:
  using Error::Error;
};

class Unreachable : public Error {
 public:
  using Error::Error;
};

// dataset
class UnknownMask : public Error {
 public:
  using Error::Error;
};

class SchemaError : public Error {
 public:
  using Error::Error;
};

class EmptyEpisode : public Error {
 public:
  using Error::Error;
};

class EpisodeTooShort : public Error {
 public:
  using Error::Error;
};

class InsufficientEpisodes : public Error {
 public:
  using Error::Error;
};

/// CSV / JSON parse failure with a 1-based location.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line, std::size_t column)
      : Error(what + " (line " + std::to_string(line) + ", column " + std::to_string(column) + ")"),
        line_(line),
        column_(column) {}

  std::size_t line() const { return line_; }
  std::size_t column() const { return column_; }

 private:
  std::size_t line_;
  std::size_t column_;
};

// persistence of weights
class CorruptFile : public Error {
 public:
  using Error::Error;
};

class ArchitectureMismatch : public Error {
 public:
  using Error::Error;
};

// training
class TrainingDiverged : public Error {
 public:
  using Error::Error;
};

/// A curriculum stage exhausted its epoch budget without reaching the loss threshold.
class Disqualified : public Error {
 public:
  Disqualified(int stage, double loss_mm)
      : Error("curriculum stage " + std::to_string(stage) + " disqualified at loss " +
              std::to_string(loss_mm) + " mm"),
        stage_(stage),
        loss_mm_(loss_mm) {}

  int stage() const { return stage_; }
  double loss_mm() const { return loss_mm_; }

 private:
  int stage_;
  double loss_mm_;
};

}  // namespace reach
