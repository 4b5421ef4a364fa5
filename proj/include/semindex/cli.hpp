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

// Command-line front end: synth, train, assign, finetune, search, eval.

#ifndef SEMINDEX_CLI_HPP_
#define SEMINDEX_CLI_HPP_

#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

#include "json.hpp"

namespace semindex {

// args excludes the program name. Returns the process exit code: 0 on
// success, 2 on usage or validation errors, 1 on any other failure.
int RunCli(const std::vector<std::string>& args, std::ostream& out,
           std::ostream& err);

// Hex SHA-256 of a file, or of a directory as the sorted sequence of
// (relative path, contents) of its regular files.
std::string Sha256Hex(const std::filesystem::path& path);

// Resolves a run directory (holding checkpoint/) or a checkpoint directory.
std::filesystem::path CheckpointDir(const std::filesystem::path& path);

}  // namespace semindex

#endif  // SEMINDEX_CLI_HPP_
