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

// Checkpoint directories: manifest.json, one raw little-endian f32 file per
// tensor (row-major), and ids.tsv with the assignments made so far.

#ifndef SEMINDEX_CHECKPOINT_HPP_
#define SEMINDEX_CHECKPOINT_HPP_

#include <filesystem>
#include <memory>
#include <optional>

#include "json.hpp"
#include "semindex/corpus.hpp"
#include "semindex/idspace.hpp"
#include "semindex/model.hpp"
#include "semindex/trainer.hpp"

namespace semindex {

inline constexpr int kCheckpointFormatVersion = 1;

struct CheckpointInput {
  const SemanticIndexer* model = nullptr;
  const Reconstructor* recon = nullptr;
  const Vocabulary* vocabulary = nullptr;
  const TrainConfig* train_config = nullptr;
  const TrainState* state = nullptr;
  // Disambiguated IDs once training is finished; otherwise the learned
  // codes in state are written with these doc_ids.
  const IdTable* full_ids = nullptr;
  std::vector<std::string> doc_ids;  // corpus order, for partial states
  nlohmann::json run_config = nlohmann::json::object();
};

// Writes into a sibling temporary directory and renames it into place.
void SaveCheckpoint(const std::filesystem::path& dir, const CheckpointInput& in);

struct LoadedCheckpoint {
  std::unique_ptr<SemanticIndexer> model;
  std::unique_ptr<Reconstructor> recon;
  Vocabulary vocabulary;
  TrainConfig train_config;
  TrainState state;
  std::optional<IdTable> full_ids;
  std::optional<IdTable> learned_ids;
  nlohmann::json run_config;
};

// Throws ParseError on a malformed or version-incompatible manifest and
// IoError on missing or truncated tensor files; nothing is returned then.
LoadedCheckpoint LoadCheckpoint(const std::filesystem::path& dir);

// Raw tensor I/O (little-endian f32, row-major).
void WriteTensorF32(const std::filesystem::path& path, const ag::Matrix& m);
ag::Matrix ReadTensorF32(const std::filesystem::path& path, Eigen::Index rows,
                         Eigen::Index cols);

}  // namespace semindex

#endif  // SEMINDEX_CHECKPOINT_HPP_
