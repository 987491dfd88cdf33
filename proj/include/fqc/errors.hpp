// Copyright 2026 The fundus-qc Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace fqc {

/// Base class for every error raised by the library. Callers that only need
/// a message can catch this; the CLI and service map subclasses to exit codes
/// and HTTP statuses.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Non-finite value or a value outside an operation's numeric domain.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Training produced a non-finite loss.
class DivergenceError : public NumericError {
 public:
  DivergenceError(std::size_t epoch, std::size_t batch)
      : NumericError("training diverged: non-finite loss at epoch " + std::to_string(epoch) +
                     ", batch " + std::to_string(batch)),
        epoch_(epoch),
        batch_(batch) {}

  std::size_t epoch() const noexcept { return epoch_; }
  std::size_t batch() const noexcept { return batch_; }

 private:
  std::size_t epoch_;
  std::size_t batch_;
};

class LabelError : public Error {
 public:
  using Error::Error;
};

/// Misuse of the autodiff tape (tensor not recorded, double backward, ...).
class GraphError : public Error {
 public:
  using Error::Error;
};

class StateError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class InputError : public Error {
 public:
  using Error::Error;
};

class GenerationError : public Error {
 public:
  using Error::Error;
};

class ConsistencyError : public Error {
 public:
  using Error::Error;
};

class NotFoundError : public Error {
 public:
  using Error::Error;
};

/// A required resource (e.g. an active model) is not available yet.
class UnavailableError : public Error {
 public:
  using Error::Error;
};

/// Malformed file. `offset` is the byte position where decoding failed.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::size_t offset)
      : Error(what + " (at byte " + std::to_string(offset) + ")"),
        offset_(offset) {}

  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

/// Image could not be decoded at all.
class DecodeError : public Error {
 public:
  using Error::Error;
};

/// No pixel brighter than the foreground threshold: there is no fundus
/// field to crop, which is itself a recapture signal.
class NoFundusError : public Error {
 public:
  NoFundusError() : Error("no fundus field detected") {}
};

class InvalidBoxError : public Error {
 public:
  using Error::Error;
};

}  // namespace fqc
