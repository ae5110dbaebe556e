#pragma once

#include <stdexcept>
#include <string>

namespace gpusim {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ParseError : public Error {
 public:
  ParseError(std::string source, int line, int column, const std::string& what)
      : Error(source + ":" + std::to_string(line) + ":" + std::to_string(column) + ": " + what),
        source_(std::move(source)),
        line_(line),
        column_(column) {}
  const std::string& source() const { return source_; }
  int line() const { return line_; }
  int column() const { return column_; }

 private:
  std::string source_;
  int line_;
  int column_;
};

class UnsupportedOpcodeError : public ParseError {
 public:
  UnsupportedOpcodeError(std::string source, int line, int column, std::string opcode)
      : ParseError(std::move(source), line, column, "unsupported opcode '" + opcode + "'"),
        opcode_(std::move(opcode)) {}
  const std::string& opcode() const { return opcode_; }

 private:
  std::string opcode_;
};

class BraceInitializerError : public ParseError {
 public:
  using ParseError::ParseError;
};

// CFG problems: exitless paths, irreducible loops, fall-through off the end.
class StructuralError : public Error {
 public:
  using Error::Error;
};

class MemoryError : public Error {
 public:
  using Error::Error;
};

class BindingError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class ManifestError : public Error {
 public:
  using Error::Error;
};

class LaunchError : public Error {
 public:
  using Error::Error;
};

class RangeError : public Error {
 public:
  using Error::Error;
};

class BundleError : public Error {
 public:
  using Error::Error;
};

// A kernel harness cannot capture this launch (double-pointer arguments).
class CaptureError : public Error {
 public:
  using Error::Error;
};

}  // namespace gpusim
