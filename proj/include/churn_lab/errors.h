// Copyright 2026 The Churn Lab Authors. All rights reserved.
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

#ifndef CHURN_LAB_ERRORS_H_
#define CHURN_LAB_ERRORS_H_

#include <stdexcept>
#include <string>

namespace churn_lab {

// Base for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed MDP, codec or network construction.
class ConstructionError : public Error {
 public:
  using Error::Error;
};

// Bad arguments or configuration (shape mismatch, unknown key, ...).
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Iterative solver exceeded its cap.
class ConvergenceError : public Error {
 public:
  using Error::Error;
};

// Policy evaluation hit a singular linear system.
class SingularSystemError : public Error {
 public:
  using Error::Error;
};

// Brute-force enumeration refused because the instance is too large.
class TooLargeError : public Error {
 public:
  using Error::Error;
};

}  // namespace churn_lab

#endif  // CHURN_LAB_ERRORS_H_
