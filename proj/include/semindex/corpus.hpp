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

// Corpus ingestion: JSONL documents, word-level tokenization, vocabulary
// construction, hint/target masking and a synthetic corpus generator with a
// planted two-level category hierarchy.

#ifndef SEMINDEX_CORPUS_HPP_
#define SEMINDEX_CORPUS_HPP_

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace semindex {

inline constexpr int kPadIndex = 0;
inline constexpr int kUnkIndex = 1;
inline constexpr int kDefaultMinCount = 2;

class Vocabulary {
 public:
  // Holds only the reserved PAD and UNK entries.
  Vocabulary();

  // Tokens with count >= min_count, ordered by descending count then
  // lexicographically.
  static Vocabulary Build(
      const std::vector<std::vector<std::string>>& tokenized_docs,
      int min_count);
  // Rebuilds from a stored index-ordered token list (entries 0 and 1 must be
  // the reserved names).
  static Vocabulary FromTokens(std::vector<std::string> tokens);

  int size() const { return static_cast<int>(tokens_.size()); }
  // UNK for unknown tokens.
  int IndexOf(std::string_view token) const;
  const std::string& TokenAt(int index) const;
  bool Contains(std::string_view token) const;
  const std::vector<std::string>& tokens() const { return tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

// Lowercases ASCII and splits on whitespace and ASCII punctuation.
std::vector<std::string> SplitWords(std::string_view text);

// Word-level tokenization; out-of-vocabulary words map to UNK. An empty or
// punctuation-only string yields an empty sequence.
std::vector<int> Tokenize(std::string_view text, const Vocabulary& vocab);

struct Document {
  std::string doc_id;
  std::vector<int> tokens;
  // Hierarchical label, levels separated by '/', e.g. "t1/t1s0".
  std::optional<std::string> category;
  std::string raw_text;
};

// Label at `level` of a '/'-separated category path; the deepest available
// level when the path is shorter.
std::string CategoryLevel(const std::string& category, int level);

struct RawDocument {
  std::string doc_id;
  std::string text;
  std::optional<std::string> category;
};

class Corpus {
 public:
  Corpus() = default;
  Corpus(std::vector<Document> documents, Vocabulary vocabulary);

  const std::vector<Document>& documents() const { return documents_; }
  const Document& document(size_t i) const { return documents_[i]; }
  size_t size() const { return documents_.size(); }
  const Vocabulary& vocabulary() const { return vocabulary_; }
  // Sorted distinct category labels (full paths).
  const std::vector<std::string>& categories() const { return categories_; }
  std::optional<size_t> Find(const std::string& doc_id) const;

 private:
  std::vector<Document> documents_;
  Vocabulary vocabulary_;
  std::vector<std::string> categories_;
  std::unordered_map<std::string, size_t> by_id_;
};

// Tokenizes raw documents, builds the vocabulary from them, truncates to
// max_len. Rejects duplicate ids and documents with no tokens.
Corpus BuildCorpus(const std::vector<RawDocument>& raw, int max_len,
                   int min_count = kDefaultMinCount);
// Same, but against a fixed vocabulary (unseen documents).
Corpus BuildCorpusWithVocabulary(const std::vector<RawDocument>& raw,
                                 const Vocabulary& vocab, int max_len);

// One JSON object per line: {"doc_id", "text", "category"?}. Blank lines are
// skipped. Errors carry the 1-based line number.
std::vector<RawDocument> ReadCorpusJsonl(const std::filesystem::path& path);
Corpus LoadCorpus(const std::filesystem::path& path, int max_len,
                  int min_count = kDefaultMinCount);
void WriteCorpusJsonl(const Corpus& corpus, const std::filesystem::path& path);

struct HintMask {
  std::vector<int> hint_indices;    // ascending
  std::vector<int> target_indices;  // ascending
  double ratio = 0.0;
};

// floor(ratio * n) hint positions drawn uniformly without replacement; the
// rest are targets. Requires 0 <= ratio < 1 and at least two tokens.
HintMask SampleHints(const Document& doc, double ratio, uint64_t seed);

struct SynthOptions {
  int top = 4;
  int sub_per_top = 4;
  int docs_per_leaf = 50;
  int doc_len = 40;
  uint64_t seed = 0;
  int coarse_words = 20;  // exclusive to each top category
  int fine_words = 10;    // exclusive to each leaf category
  int common_words = 50;  // shared by all documents
  double coarse_share = 0.4;
  double fine_share = 0.3;
};

// Documents are emitted leaf by leaf; each token is drawn from the coarse,
// fine or common pool with the configured shares.
std::vector<RawDocument> SynthRawDocuments(const SynthOptions& opts);
Corpus SynthCorpus(const SynthOptions& opts,
                   int min_count = kDefaultMinCount);

}  // namespace semindex

#endif  // SEMINDEX_CORPUS_HPP_
