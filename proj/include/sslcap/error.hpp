// Copyright (c) 2026, The sslcap Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace sslcap {

/// Root of every error raised by the library. The CLI maps subclasses onto
/// exit codes via `exit_code()`.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  /// 2 = input error, 3 = state/compatibility error, 4 = numerical failure.
  virtual int exit_code() const noexcept { return 2; }
};

#define SSLCAP_DEFINE_ERROR(Name, Base) \
  class Name : public Base {            \
   public:                              \
    using Base::Base;                   \
  };

SSLCAP_DEFINE_ERROR(ShapeError, Error)
SSLCAP_DEFINE_ERROR(VocabularyError, Error)
SSLCAP_DEFINE_ERROR(EmptyCaptionError, Error)
SSLCAP_DEFINE_ERROR(DegenerateVectorError, Error)
SSLCAP_DEFINE_ERROR(ParameterError, Error)
SSLCAP_DEFINE_ERROR(NormalizationError, Error)
SSLCAP_DEFINE_ERROR(FormatError, Error)
SSLCAP_DEFINE_ERROR(ManifestError, Error)
SSLCAP_DEFINE_ERROR(EmptyEvaluationError, Error)
SSLCAP_DEFINE_ERROR(IoError, Error)

#undef SSLCAP_DEFINE_ERROR

class MissingEmbeddingError : public Error {
 public:
  explicit MissingEmbeddingError(std::string id)
      : Error("no embedding for image '" + id + "'"), id_(std::move(id)) {}
  const std::string& id() const noexcept { return id_; }

 private:
  std::string id_;
};

/// Raised by backends that cannot encode soft token rows.
class CapabilityError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 3; }
};

class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t byte_offset)
      : Error(what + " (at byte " + std::to_string(byte_offset) + ")"), offset_(byte_offset) {}
  std::size_t byte_offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

class DanglingReferenceError : public Error {
 public:
  explicit DanglingReferenceError(std::vector<std::string> ids);
  const std::vector<std::string>& ids() const noexcept { return ids_; }

 private:
  std::vector<std::string> ids_;
};

/// Stage ordering violated, e.g. unsupervised training on a fresh model.
class SequencingError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 3; }
};

/// Checkpoint does not belong to the active configuration.
class CompatibilityError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 3; }
};

/// Non-finite loss or gradient.
class NumericalError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 4; }
};

inline DanglingReferenceError::DanglingReferenceError(std::vector<std::string> ids)
    : Error([&] {
        std::string msg = "annotations reference unknown image ids:";
        for (const auto& id : ids) msg += " " + id;
        return msg;
      }()),
      ids_(std::move(ids)) {}

}  // namespace sslcap
