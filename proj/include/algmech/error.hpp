#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <stdexcept>
#include <string>

namespace algmech {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Expression source could not be parsed. Line and column are 1-based.
class ParseError : public Error {
 public:
  ParseError(std::size_t line, std::size_t column, const std::string& message)
      : Error("line " + std::to_string(line) + ", column " + std::to_string(column) + ": " + message),
        line_(line),
        column_(column),
        message_(message) {}

  std::size_t line() const { return line_; }
  std::size_t column() const { return column_; }
  const std::string& message() const { return message_; }

 private:
  std::size_t line_;
  std::size_t column_;
  std::string message_;
};

class EvaluationError : public Error {
 public:
  using Error::Error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A matrix that must be nonsingular was found singular. The matrix travels with the error.
class RegularityError : public Error {
 public:
  RegularityError(const std::string& message, Eigen::MatrixXd matrix)
      : Error(message), matrix_(std::move(matrix)) {}
  const Eigen::MatrixXd& matrix() const { return matrix_; }

 private:
  Eigen::MatrixXd matrix_;
};

class ConvergenceError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Problem-file violation located by a JSON pointer.
class SchemaError : public Error {
 public:
  SchemaError(std::string pointer, const std::string& message)
      : Error((pointer.empty() ? std::string("/") : pointer) + ": " + message), pointer_(std::move(pointer)) {}
  const std::string& pointer() const { return pointer_; }

 private:
  std::string pointer_;
};

}  // namespace algmech
