/* Copyright (c) 2026 The WaveFlow Engine Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License. */

#pragma once

#include <stdexcept>
#include <string>

namespace waveflow {

/// Bad input: shapes, configuration, malformed files. Maps to CLI exit code 1.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Non-finite values or other numerical breakdown. Maps to CLI exit code 2.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Checkpoint and tensor-archive problems. Each failure mode has its own kind
/// so callers (and tests) can tell them apart.
class CheckpointError : public ValidationError {
 public:
  enum class Kind { VersionMismatch, MissingTensor, MissingTensorBytes, ShapeMismatch, Malformed };

  CheckpointError(Kind kind, const std::string& what) : ValidationError(what), kind_(kind) {}

  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

}  // namespace waveflow
