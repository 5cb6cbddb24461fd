/* Copyright 2026 The RFCN Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#pragma once

#include <stdexcept>
#include <string>

namespace rfcn {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible tensor shapes, kernel geometry, or cache/shape disagreement.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A NaN or Inf appeared in the output of an operation.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Malformed file contents: bad magic, unsupported version, truncation.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Filesystem failures (missing file, unwritable directory).
class IoError : public Error {
 public:
  using Error::Error;
};

/// Invalid user configuration (unknown preset, bad flag values, patterns
/// that resolve to nothing).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Training produced a non-finite loss.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

}  // namespace rfcn
