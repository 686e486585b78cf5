#pragma once

#include <stdexcept>
#include <string>

namespace ctxtts {

// Base for every error this library raises. Validation-class errors map to
// CLI exit code 1, the rest to exit code 2.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual bool is_validation() const { return false; }
};

class InvalidInput : public Error {
 public:
  using Error::Error;
  bool is_validation() const override { return true; }
};

class InvalidConfig : public Error {
 public:
  using Error::Error;
  bool is_validation() const override { return true; }
};

class InvalidRequest : public Error {
 public:
  using Error::Error;
  bool is_validation() const override { return true; }
};

class IngestError : public Error {
 public:
  explicit IngestError(const std::string& path)
      : Error("ingest failed: " + path), path_(path) {}
  IngestError(const std::string& path, const std::string& why)
      : Error("ingest failed: " + path + ": " + why), path_(path) {}
  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

class AlignmentError : public Error {
 public:
  AlignmentError(const std::string& utterance_id, const std::string& why)
      : Error("alignment error in " + utterance_id + ": " + why),
        utterance_id_(utterance_id) {}
  const std::string& utterance_id() const { return utterance_id_; }

 private:
  std::string utterance_id_;
};

class EmbedderError : public Error {
 public:
  using Error::Error;
};

class NumericalError : public Error {
 public:
  using Error::Error;
};

class FrontendError : public Error {
 public:
  using Error::Error;
  bool is_validation() const override { return true; }
};

class EditError : public Error {
 public:
  using Error::Error;
  bool is_validation() const override { return true; }
};

class CheckpointError : public Error {
 public:
  using Error::Error;
};

}  // namespace ctxtts
