// Copyright 2026 The Semindex Authors.
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

#ifndef SEMINDEX_ERRORS_HPP_
#define SEMINDEX_ERRORS_HPP_

#include <stdexcept>
#include <string>

namespace semindex {

// Base of every error thrown by the library. The CLI maps ParseError and
// ValidationError to exit code 2 and everything else to exit code 1.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed input record (JSONL line, TSV row, manifest).
class ParseError : public Error {
 public:
  using Error::Error;
};

// Well-formed input that violates a documented precondition.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Caller broke an API contract (shapes, lengths, empty inputs).
class ContractError : public Error {
 public:
  using Error::Error;
};

// Non-finite values where finite ones are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Operation requested on an object that is not in the required state.
class StateError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace semindex

#endif  // SEMINDEX_ERRORS_HPP_
