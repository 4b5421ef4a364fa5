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

// ID bookkeeping: document -> code sequence tables, duplicate
// disambiguation, a prefix tree over full IDs, and a TF-IDF hierarchical
// clustering indexer used as a baseline.

#ifndef SEMINDEX_IDSPACE_HPP_
#define SEMINDEX_IDSPACE_HPP_

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "semindex/autograd.hpp"
#include "semindex/corpus.hpp"

namespace semindex {

using SemanticId = std::vector<int>;

// Rows stay in insertion (corpus) order.
class IdTable {
 public:
  IdTable() = default;
  IdTable(std::vector<std::string> doc_ids, std::vector<SemanticId> ids);

  size_t size() const { return doc_ids_.size(); }
  bool empty() const { return doc_ids_.empty(); }
  const std::vector<std::string>& doc_ids() const { return doc_ids_; }
  const std::vector<SemanticId>& ids() const { return ids_; }
  const SemanticId& id(size_t row) const { return ids_[row]; }
  // Common ID length; 0 for an empty table.
  int id_length() const;

  std::optional<size_t> RowOf(const std::string& doc_id) const;
  // Documents carrying exactly this ID, in table order.
  const std::vector<std::string>& DocsWith(const SemanticId& id) const;
  const std::map<SemanticId, std::vector<std::string>>& reverse() const {
    return reverse_;
  }

 private:
  std::vector<std::string> doc_ids_;
  std::vector<SemanticId> ids_;
  std::map<std::string, size_t> row_of_;
  std::map<SemanticId, std::vector<std::string>> reverse_;
};

// Appends a suffix code: the k-th document (table order) sharing a learned
// ID gets suffix k, so unique IDs get 0.
IdTable Disambiguate(const IdTable& learned);

// Largest number of documents sharing one ID (the suffix alphabet size).
int MaxGroupSize(const IdTable& table);

// docs-per-ID -> number of IDs with that many docs.
std::map<int, int> DuplicationStats(const IdTable& table);

// IDs with the last `drop` positions removed.
IdTable TruncateIds(const IdTable& table, int drop);

class PrefixTree {
 public:
  static constexpr int kRoot = 0;

  // Throws ContractError on duplicate or ragged IDs, or an empty table.
  explicit PrefixTree(const IdTable& table);

  int depth() const { return depth_; }
  // (code, child node) pairs ordered by code.
  const std::map<int, int>& Children(int node) const {
    return nodes_[static_cast<size_t>(node)].children;
  }
  std::optional<int> Child(int node, int code) const;
  // Leaf payload; nullopt for interior nodes.
  const std::optional<std::string>& DocAt(int node) const {
    return nodes_[static_cast<size_t>(node)].doc_id;
  }
  size_t num_nodes() const { return nodes_.size(); }
  size_t num_leaves() const { return num_leaves_; }
  // Every root-to-leaf path, in lexicographic order.
  std::vector<SemanticId> Paths() const;

 private:
  struct TrieNode {
    std::map<int, int> children;
    std::optional<std::string> doc_id;
  };
  std::vector<TrieNode> nodes_;
  int depth_ = 0;
  size_t num_leaves_ = 0;
};

struct HcOptions {
  std::vector<int> branching;  // K_1..K_T
  uint64_t seed = 0;
  int kmeans_iters = 50;
  int kmeans_restarts = 3;
};

// Length-normalized TF-IDF rows (docs x vocab), idf = ln((1+N)/(1+df)) + 1.
ag::Matrix TfIdfVectors(const Corpus& corpus);

// Recursive K-means over TF-IDF, then disambiguation. The result has
// branching.size() + 1 positions.
IdTable HcBaselineIds(const Corpus& corpus, const HcOptions& opts);

// doc_id TAB comma-separated codes, one line per row.
void WriteIdsTsv(const IdTable& table, const std::filesystem::path& path);
IdTable ReadIdsTsv(const std::filesystem::path& path);

}  // namespace semindex

#endif  // SEMINDEX_IDSPACE_HPP_
