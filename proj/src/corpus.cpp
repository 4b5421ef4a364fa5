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

#include "semindex/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <set>

#include "json.hpp"

#include "semindex/errors.hpp"

namespace semindex {

namespace {
constexpr const char* kPadToken = "<pad>";
constexpr const char* kUnkToken = "<unk>";
}  // namespace

Vocabulary::Vocabulary() : tokens_{kPadToken, kUnkToken} {
  index_[kPadToken] = kPadIndex;
  index_[kUnkToken] = kUnkIndex;
}

Vocabulary Vocabulary::Build(
    const std::vector<std::vector<std::string>>& tokenized_docs,
    int min_count) {
  std::map<std::string, int> counts;
  for (const auto& doc : tokenized_docs)
    for (const auto& w : doc) ++counts[w];
  std::vector<std::pair<std::string, int>> kept;
  for (auto& [w, c] : counts)
    if (c >= min_count && w != kPadToken && w != kUnkToken) kept.emplace_back(w, c);
  std::stable_sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
    return a.second > b.second;
  });
  Vocabulary v;
  for (auto& [w, c] : kept) {
    v.index_[w] = static_cast<int>(v.tokens_.size());
    v.tokens_.push_back(w);
  }
  return v;
}

Vocabulary Vocabulary::FromTokens(std::vector<std::string> tokens) {
  if (tokens.size() < 2 || tokens[0] != kPadToken || tokens[1] != kUnkToken) {
    throw ParseError("vocabulary: reserved entries missing");
  }
  Vocabulary v;
  v.tokens_ = std::move(tokens);
  v.index_.clear();
  for (size_t i = 0; i < v.tokens_.size(); ++i) {
    if (!v.index_.emplace(v.tokens_[i], static_cast<int>(i)).second) {
      throw ParseError("vocabulary: duplicate token '" + v.tokens_[i] + "'");
    }
  }
  return v;
}

int Vocabulary::IndexOf(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnkIndex : it->second;
}

const std::string& Vocabulary::TokenAt(int index) const {
  if (index < 0 || index >= size()) {
    throw ContractError("vocabulary index out of range");
  }
  return tokens_[static_cast<size_t>(index)];
}

bool Vocabulary::Contains(std::string_view token) const {
  return index_.count(std::string(token)) > 0;
}

std::vector<std::string> SplitWords(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    const auto u = static_cast<unsigned char>(ch);
    if (u < 128 && (std::isspace(u) || std::ispunct(u))) {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(u < 128 ? static_cast<char>(std::tolower(u)) : ch);
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

std::vector<int> Tokenize(std::string_view text, const Vocabulary& vocab) {
  std::vector<int> out;
  for (const auto& w : SplitWords(text)) out.push_back(vocab.IndexOf(w));
  return out;
}

std::string CategoryLevel(const std::string& category, int level) {
  size_t pos = 0;
  for (int i = 0; i <= level; ++i) {
    pos = category.find('/', pos);
    if (pos == std::string::npos) return category;
    if (i == level) return category.substr(0, pos);
    ++pos;
  }
  return category;
}

Corpus::Corpus(std::vector<Document> documents, Vocabulary vocabulary)
    : documents_(std::move(documents)), vocabulary_(std::move(vocabulary)) {
  std::set<std::string> cats;
  for (size_t i = 0; i < documents_.size(); ++i) {
    const auto& d = documents_[i];
    if (!by_id_.emplace(d.doc_id, i).second) {
      throw ValidationError("duplicate doc_id '" + d.doc_id + "'");
    }
    if (d.tokens.empty()) {
      throw ValidationError("document '" + d.doc_id + "' has no tokens");
    }
    for (int t : d.tokens) {
      if (t < 0 || t >= vocabulary_.size()) {
        throw ContractError("document '" + d.doc_id +
                            "' has out-of-vocabulary index");
      }
    }
    if (d.category) cats.insert(*d.category);
  }
  categories_.assign(cats.begin(), cats.end());
}

std::optional<size_t> Corpus::Find(const std::string& doc_id) const {
  auto it = by_id_.find(doc_id);
  if (it == by_id_.end()) return std::nullopt;
  return it->second;
}

namespace {

Corpus Assemble(const std::vector<RawDocument>& raw,
                const std::vector<std::vector<std::string>>& words,
                const Vocabulary& vocab, int max_len) {
  if (max_len < 1) throw ValidationError("max_len must be positive");
  std::vector<Document> docs;
  docs.reserve(raw.size());
  for (size_t i = 0; i < raw.size(); ++i) {
    Document d;
    d.doc_id = raw[i].doc_id;
    d.category = raw[i].category;
    d.raw_text = raw[i].text;
    for (const auto& w : words[i]) {
      if (static_cast<int>(d.tokens.size()) >= max_len) break;
      d.tokens.push_back(vocab.IndexOf(w));
    }
    docs.push_back(std::move(d));
  }
  return Corpus(std::move(docs), vocab);
}

}  // namespace

Corpus BuildCorpus(const std::vector<RawDocument>& raw, int max_len,
                   int min_count) {
  std::vector<std::vector<std::string>> words;
  words.reserve(raw.size());
  for (const auto& r : raw) words.push_back(SplitWords(r.text));
  // Counts come from the truncated documents so the vocabulary only holds
  // tokens the model will actually see.
  std::vector<std::vector<std::string>> visible = words;
  for (auto& w : visible)
    if (static_cast<int>(w.size()) > max_len) w.resize(static_cast<size_t>(max_len));
  return Assemble(raw, words, Vocabulary::Build(visible, min_count), max_len);
}

Corpus BuildCorpusWithVocabulary(const std::vector<RawDocument>& raw,
                                 const Vocabulary& vocab, int max_len) {
  std::vector<std::vector<std::string>> words;
  words.reserve(raw.size());
  for (const auto& r : raw) words.push_back(SplitWords(r.text));
  return Assemble(raw, words, vocab, max_len);
}

std::vector<RawDocument> ReadCorpusJsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open corpus file " + path.string());
  std::vector<RawDocument> out;
  std::set<std::string> seen;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where =
        path.filename().string() + ":" + std::to_string(lineno);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(where + ": invalid JSON (" + e.what() + ")");
    }
    if (!j.is_object()) throw ParseError(where + ": expected a JSON object");
    if (!j.contains("doc_id") || !j["doc_id"].is_string()) {
      throw ParseError(where + ": missing string field \"doc_id\"");
    }
    if (!j.contains("text") || !j["text"].is_string()) {
      throw ParseError(where + ": missing string field \"text\"");
    }
    RawDocument r;
    r.doc_id = j["doc_id"].get<std::string>();
    r.text = j["text"].get<std::string>();
    if (j.contains("category") && !j["category"].is_null()) {
      if (!j["category"].is_string()) {
        throw ParseError(where + ": \"category\" must be a string");
      }
      r.category = j["category"].get<std::string>();
    }
    if (!seen.insert(r.doc_id).second) {
      throw ValidationError(where + ": duplicate doc_id '" + r.doc_id + "'");
    }
    out.push_back(std::move(r));
  }
  return out;
}

Corpus LoadCorpus(const std::filesystem::path& path, int max_len,
                  int min_count) {
  return BuildCorpus(ReadCorpusJsonl(path), max_len, min_count);
}

void WriteCorpusJsonl(const Corpus& corpus, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& d : corpus.documents()) {
    nlohmann::json j;
    j["doc_id"] = d.doc_id;
    j["text"] = d.raw_text;
    if (d.category) j["category"] = *d.category;
    out << j.dump() << '\n';
  }
  if (!out) throw IoError("write failed for " + path.string());
}

HintMask SampleHints(const Document& doc, double ratio, uint64_t seed) {
  if (!(ratio >= 0.0 && ratio < 1.0)) {
    throw ValidationError("hint ratio must lie in [0, 1)");
  }
  const int n = static_cast<int>(doc.tokens.size());
  if (n < 2) throw ValidationError("document too short for hint sampling");
  // The epsilon keeps e.g. 0.29 * 100 from flooring to 28.
  const int num_hints =
      static_cast<int>(std::floor(ratio * static_cast<double>(n) + 1e-9));
  std::vector<int> perm(static_cast<size_t>(n));
  std::iota(perm.begin(), perm.end(), 0);
  std::mt19937_64 rng(seed);
  for (int i = 0; i < num_hints; ++i) {
    std::uniform_int_distribution<int> pick(i, n - 1);
    std::swap(perm[static_cast<size_t>(i)],
              perm[static_cast<size_t>(pick(rng))]);
  }
  HintMask m;
  m.ratio = ratio;
  m.hint_indices.assign(perm.begin(), perm.begin() + num_hints);
  m.target_indices.assign(perm.begin() + num_hints, perm.end());
  std::sort(m.hint_indices.begin(), m.hint_indices.end());
  std::sort(m.target_indices.begin(), m.target_indices.end());
  return m;
}

std::vector<RawDocument> SynthRawDocuments(const SynthOptions& o) {
  if (o.top < 1 || o.sub_per_top < 1 || o.docs_per_leaf < 1 || o.doc_len < 1 ||
      o.coarse_words < 1 || o.fine_words < 1 || o.common_words < 1) {
    throw ValidationError("synthetic corpus counts must be >= 1");
  }
  if (o.coarse_share < 0 || o.fine_share < 0 ||
      o.coarse_share + o.fine_share > 1.0) {
    throw ValidationError("synthetic corpus token shares are invalid");
  }
  std::mt19937_64 rng(o.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<RawDocument> out;
  out.reserve(static_cast<size_t>(o.top * o.sub_per_top * o.docs_per_leaf));
  int serial = 0;
  for (int t = 0; t < o.top; ++t) {
    for (int s = 0; s < o.sub_per_top; ++s) {
      const std::string top = "t" + std::to_string(t);
      const std::string leaf = top + "s" + std::to_string(s);
      for (int n = 0; n < o.docs_per_leaf; ++n) {
        std::string text;
        for (int i = 0; i < o.doc_len; ++i) {
          const double u = unit(rng);
          std::string w;
          if (u < o.coarse_share) {
            std::uniform_int_distribution<int> pick(0, o.coarse_words - 1);
            w = top + "w" + std::to_string(pick(rng));
          } else if (u < o.coarse_share + o.fine_share) {
            std::uniform_int_distribution<int> pick(0, o.fine_words - 1);
            w = leaf + "w" + std::to_string(pick(rng));
          } else {
            std::uniform_int_distribution<int> pick(0, o.common_words - 1);
            w = "cw" + std::to_string(pick(rng));
          }
          if (!text.empty()) text.push_back(' ');
          text += w;
        }
        char id[32];
        std::snprintf(id, sizeof(id), "d%05d", serial++);
        out.push_back({id, std::move(text), top + "/" + leaf});
      }
    }
  }
  return out;
}

Corpus SynthCorpus(const SynthOptions& opts, int min_count) {
  return BuildCorpus(SynthRawDocuments(opts), std::max(1, opts.doc_len),
                     min_count);
}

}  // namespace semindex
