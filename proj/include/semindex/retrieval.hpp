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

// Text -> document ID fine-tuning and prefix-tree constrained beam search.

#ifndef SEMINDEX_RETRIEVAL_HPP_
#define SEMINDEX_RETRIEVAL_HPP_

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "semindex/corpus.hpp"
#include "semindex/idspace.hpp"
#include "semindex/metrics.hpp"
#include "semindex/model.hpp"

namespace semindex {

inline constexpr int kDefaultBeam = 20;

struct QueryRecord {
  std::string query_id;
  std::string text;
  std::vector<std::string> relevant_doc_ids;
};

// {"query_id", "text", "relevant_doc_ids"} per line; errors carry file:line.
std::vector<QueryRecord> ReadQueriesJsonl(const std::filesystem::path& path);
void WriteQueriesJsonl(const std::vector<QueryRecord>& records,
                       const std::filesystem::path& path);

struct SynthQueryOptions {
  size_t count = 0;
  int words = 3;
  uint64_t seed = 0;
  // Target documents are drawn from these corpus rows (all when empty).
  std::vector<size_t> candidates;
};

// Keyword queries for a corpus: each picks a target document and samples
// `words` distinct tokens from the rarest third (by document frequency) of
// that document's distinct tokens. The target is the single relevant doc.
std::vector<QueryRecord> SynthQueries(const Corpus& corpus,
                                      const SynthQueryOptions& opts);

struct QueryDocPair {
  std::string query_id;
  std::vector<int> tokens;
  std::string doc_id;
};

// One pair per (query, relevant doc). Unknown doc_ids and queries that
// tokenize to nothing raise ValidationError naming the query.
std::vector<QueryDocPair> MakePairs(const std::vector<QueryRecord>& records,
                                    const Vocabulary& vocab,
                                    const IdTable& table, int max_len);

struct FinetuneOptions {
  int epochs = 3;
  double step_size = 1e-3;
  double weight_decay = 0.01;
  int batch_size = 32;
  uint64_t seed = 0;
  bool freeze_codebooks = false;
};

// -sum_j log P(c^j | q, c^{<j}) over every position of the full ID, teacher
// forced.
double SequenceNll(const SemanticIndexer& model, std::span<const int> query,
                   const SemanticId& id);

// Returns the mean per-pair loss of every epoch.
std::vector<double> Finetune(SemanticIndexer& model,
                             const std::vector<QueryDocPair>& pairs,
                             const IdTable& table, const FinetuneOptions& opts);

struct ScoredDoc {
  std::string doc_id;
  SemanticId id;
  double score = 0.0;  // sum of per-position log-probabilities
};

// Beam search where each expansion is limited to the trie children of the
// hypothesis; ties are broken toward the lexicographically smaller ID.
std::vector<ScoredDoc> ConstrainedBeamSearch(const SemanticIndexer& model,
                                             std::span<const int> query,
                                             const PrefixTree& trie, int beam,
                                             int k);

std::vector<ScoredDoc> Search(const SemanticIndexer& model,
                              const PrefixTree& trie, const Vocabulary& vocab,
                              const std::string& query_text, int beam, int k,
                              int max_len);

struct SearchRow {
  std::string query_id;
  int rank = 0;  // 1-based
  std::string doc_id;
  double score = 0.0;
};

void WriteSearchTsv(const std::vector<SearchRow>& rows,
                    const std::filesystem::path& path);
std::vector<SearchRow> ReadSearchTsv(const std::filesystem::path& path);

// Ranked lists per query (ordered by rank) joined with judgments; queries
// without a judgment record are skipped. Query order follows `judgments`.
std::vector<RankedList> JoinRuns(const std::vector<SearchRow>& rows,
                                 const std::vector<QueryRecord>& judgments);

}  // namespace semindex

#endif  // SEMINDEX_RETRIEVAL_HPP_
