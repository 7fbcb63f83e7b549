// Copyright 2026 The ITIS Engine Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef ITIS_ERRORS_HPP
#define ITIS_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace itis {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionMismatch : public Error {
 public:
  using Error::Error;
};

/// Raised by the distance transform when there is nothing to measure to.
class EmptyTargetError : public Error {
 public:
  using Error::Error;
};

class ImageIoError : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

// Predictor bridge failures. Each failure mode has its own type so callers
// can tell a hung model from a broken one.
class BridgeError : public Error {
 public:
  using Error::Error;
};

class BridgeTimeout : public BridgeError {
 public:
  using BridgeError::BridgeError;
};

class BridgeMalformedResponse : public BridgeError {
 public:
  using BridgeError::BridgeError;
};

class BridgeDimensionMismatch : public BridgeError {
 public:
  using BridgeError::BridgeError;
};

class BridgeTransportError : public BridgeError {
 public:
  using BridgeError::BridgeError;
};

}  // namespace itis

#endif  // ITIS_ERRORS_HPP
