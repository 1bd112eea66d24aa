/*
 * Copyright 2026 The safeq Authors.
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#ifndef SAFEQ_ERRORS_HPP_
#define SAFEQ_ERRORS_HPP_

#include <stdexcept>
#include <string>

namespace safeq {

// Invalid configuration or argument supplied by the operator.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Filesystem or parse failure on an external file. The message carries the
// path and the cause.
class IoError : public std::runtime_error {
 public:
  IoError(const std::string& path, const std::string& cause)
      : std::runtime_error(path + ": " + cause), path_(path) {}
  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

}  // namespace safeq

#endif  // SAFEQ_ERRORS_HPP_
