#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace ricebot {

// Base of every error raised by the library. Callers that only care about
// "something went wrong in ricebot" can catch this one type.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

class InvalidBox : public InvalidArgument {
 public:
  using InvalidArgument::InvalidArgument;
};

// Clamping a box to the image frame left it with zero area.
class DegenerateBox : public InvalidBox {
 public:
  using InvalidBox::InvalidBox;
};

class UnknownClass : public Error {
 public:
  explicit UnknownClass(const std::string& name)
      : Error("unknown disease class: '" + name + "'"), name_(name) {}
  const std::string& name() const { return name_; }

 private:
  std::string name_;
};

class EmptyGroundTruth : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

class DuplicateImage : public Error {
 public:
  DuplicateImage(const std::string& first_id, const std::string& second_id)
      : Error("duplicate image: '" + second_id + "' repeats '" + first_id +
              "'"),
        first_id_(first_id),
        second_id_(second_id) {}
  const std::string& first_id() const { return first_id_; }
  const std::string& second_id() const { return second_id_; }

 private:
  std::string first_id_;
  std::string second_id_;
};

class InsufficientData : public Error {
 public:
  using Error::Error;
};

class DecodeError : public Error {
 public:
  using Error::Error;
};

class BackendUnavailable : public Error {
 public:
  using Error::Error;
};

class Timeout : public Error {
 public:
  using Error::Error;
};

class UnknownJob : public Error {
 public:
  explicit UnknownJob(const std::string& job_id)
      : Error("unknown job: " + job_id) {}
};

class IllegalTransition : public Error {
 public:
  using Error::Error;
};

class DuplicateFeedback : public Error {
 public:
  using Error::Error;
};

class StorageError : public Error {
 public:
  using Error::Error;
};

}  // namespace ricebot
