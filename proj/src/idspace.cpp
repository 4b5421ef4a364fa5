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

#include "semindex/idspace.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "semindex/errors.hpp"
#include "semindex/kmeans.hpp"
#include "semindex/seed.hpp"

namespace semindex {

IdTable::IdTable(std::vector<std::string> doc_ids, std::vector<SemanticId> ids)
    : doc_ids_(std::move(doc_ids)), ids_(std::move(ids)) {
  if (doc_ids_.size() != ids_.size()) {
    throw ContractError("id table: doc/id count mismatch");
  }
  for (size_t i = 0; i < doc_ids_.size(); ++i) {
    if (!row_of_.emplace(doc_ids_[i], i).second) {
      throw ValidationError("id table: duplicate doc_id '" + doc_ids_[i] + "'");
    }
    if (ids_[i].size() != ids_[0].size()) {
      throw ValidationError("id table: IDs of differing length at '" +
                            doc_ids_[i] + "'");
    }
    reverse_[ids_[i]].push_back(doc_ids_[i]);
  }
}

int IdTable::id_length() const {
  return ids_.empty() ? 0 : static_cast<int>(ids_[0].size());
}

std::optional<size_t> IdTable::RowOf(const std::string& doc_id) const {
  auto it = row_of_.find(doc_id);
  if (it == row_of_.end()) return std::nullopt;
  return it->second;
}

const std::vector<std::string>& IdTable::DocsWith(const SemanticId& id) const {
  static const std::vector<std::string> kNone;
  auto it = reverse_.find(id);
  return it == reverse_.end() ? kNone : it->second;
}

IdTable Disambiguate(const IdTable& learned) {
  std::map<SemanticId, int> seen;
  std::vector<SemanticId> full;
  full.reserve(learned.size());
  for (const auto& id : learned.ids()) {
    SemanticId f = id;
    f.push_back(seen[id]++);
    full.push_back(std::move(f));
  }
  return IdTable(learned.doc_ids(), std::move(full));
}

int MaxGroupSize(const IdTable& table) {
  size_t m = 0;
  for (const auto& [id, docs] : table.reverse()) m = std::max(m, docs.size());
  return static_cast<int>(m);
}

std::map<int, int> DuplicationStats(const IdTable& table) {
  if (table.empty()) throw ValidationError("duplication stats: empty table");
  std::map<int, int> hist;
  for (const auto& [id, docs] : table.reverse()) ++hist[static_cast<int>(docs.size())];
  return hist;
}

IdTable TruncateIds(const IdTable& table, int drop) {
  if (drop < 0 || drop > table.id_length()) {
    throw ContractError("truncate ids: bad drop count");
  }
  std::vector<SemanticId> ids;
  ids.reserve(table.size());
  for (const auto& id : table.ids())
    ids.emplace_back(id.begin(), id.end() - drop);
  return IdTable(table.doc_ids(), std::move(ids));
}

PrefixTree::PrefixTree(const IdTable& table) {
  if (table.empty()) throw ContractError("prefix tree: empty ID table");
  depth_ = table.id_length();
  if (depth_ < 1) throw ContractError("prefix tree: zero-length IDs");
  nodes_.emplace_back();
  for (size_t row = 0; row < table.size(); ++row) {
    const SemanticId& id = table.id(row);
    int node = kRoot;
    for (int code : id) {
      auto& children = nodes_[static_cast<size_t>(node)].children;
      auto it = children.find(code);
      if (it == children.end()) {
        const int fresh = static_cast<int>(nodes_.size());
        nodes_[static_cast<size_t>(node)].children.emplace(code, fresh);
        nodes_.emplace_back();
        node = fresh;
      } else {
        node = it->second;
      }
    }
    auto& leaf = nodes_[static_cast<size_t>(node)];
    if (leaf.doc_id) {
      throw ContractError("prefix tree: duplicate full ID for '" +
                          table.doc_ids()[row] + "' and '" + *leaf.doc_id + "'");
    }
    leaf.doc_id = table.doc_ids()[row];
    ++num_leaves_;
  }
}

std::optional<int> PrefixTree::Child(int node, int code) const {
  const auto& c = nodes_[static_cast<size_t>(node)].children;
  auto it = c.find(code);
  if (it == c.end()) return std::nullopt;
  return it->second;
}

std::vector<SemanticId> PrefixTree::Paths() const {
  std::vector<SemanticId> out;
  SemanticId path;
  // Explicit stack of (node, next child iterator).
  std::vector<std::pair<int, std::map<int, int>::const_iterator>> stack;
  stack.emplace_back(kRoot, nodes_[0].children.begin());
  while (!stack.empty()) {
    auto& [node, it] = stack.back();
    const auto& children = nodes_[static_cast<size_t>(node)].children;
    if (it == children.end()) {
      if (nodes_[static_cast<size_t>(node)].doc_id) out.push_back(path);
      stack.pop_back();
      if (!path.empty()) path.pop_back();
      continue;
    }
    const int code = it->first;
    const int child = it->second;
    ++it;
    path.push_back(code);
    stack.emplace_back(child, nodes_[static_cast<size_t>(child)].children.begin());
  }
  return out;
}

ag::Matrix TfIdfVectors(const Corpus& corpus) {
  const Eigen::Index n = static_cast<Eigen::Index>(corpus.size());
  const Eigen::Index v = corpus.vocabulary().size();
  ag::Matrix tf = ag::Matrix::Zero(n, v);
  std::vector<double> df(static_cast<size_t>(v), 0.0);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& toks = corpus.document(static_cast<size_t>(i)).tokens;
    for (int t : toks) tf(i, t) += 1.0;
    for (Eigen::Index w = 0; w < v; ++w)
      if (tf(i, w) > 0.0) df[static_cast<size_t>(w)] += 1.0;
  }
  for (Eigen::Index w = 0; w < v; ++w) {
    const double idf =
        std::log((1.0 + static_cast<double>(n)) / (1.0 + df[static_cast<size_t>(w)])) + 1.0;
    tf.col(w) *= idf;
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    const double norm = tf.row(i).norm();
    if (norm > 0.0) tf.row(i) /= norm;
  }
  return tf;
}

namespace {

void ClusterRecursive(const ag::Matrix& vecs, const std::vector<int>& members,
                      const HcOptions& opts, size_t level, uint64_t path_key,
                      std::vector<SemanticId>& codes) {
  if (level >= opts.branching.size() || members.empty()) return;
  const int k = opts.branching[level];
  ag::Matrix pts(static_cast<Eigen::Index>(members.size()), vecs.cols());
  for (size_t i = 0; i < members.size(); ++i)
    pts.row(static_cast<Eigen::Index>(i)) = vecs.row(members[i]);
  const KMeansResult km =
      KMeans(pts, k, opts.kmeans_iters, opts.kmeans_restarts,
             MixSeed(opts.seed, {static_cast<uint64_t>(level), path_key}));
  std::vector<std::vector<int>> groups(static_cast<size_t>(k));
  for (size_t i = 0; i < members.size(); ++i) {
    const int c = km.assignment[i];
    codes[static_cast<size_t>(members[i])].push_back(c);
    groups[static_cast<size_t>(c)].push_back(members[i]);
  }
  for (int c = 0; c < k; ++c) {
    ClusterRecursive(vecs, groups[static_cast<size_t>(c)], opts, level + 1,
                     MixSeed(path_key, {static_cast<uint64_t>(c)}), codes);
  }
}

}  // namespace

IdTable HcBaselineIds(const Corpus& corpus, const HcOptions& opts) {
  if (corpus.size() == 0) throw ValidationError("hc baseline: empty corpus");
  if (opts.branching.empty()) throw ValidationError("hc baseline: no branching factors");
  for (int k : opts.branching)
    if (k < 1) throw ValidationError("hc baseline: branching factors must be >= 1");
  const ag::Matrix vecs = TfIdfVectors(corpus);
  std::vector<int> all(corpus.size());
  for (size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int>(i);
  std::vector<SemanticId> codes(corpus.size());
  ClusterRecursive(vecs, all, opts, 0, 0, codes);
  std::vector<std::string> ids;
  for (const auto& d : corpus.documents()) ids.push_back(d.doc_id);
  return Disambiguate(IdTable(std::move(ids), std::move(codes)));
}

void WriteIdsTsv(const IdTable& table, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  for (size_t i = 0; i < table.size(); ++i) {
    out << table.doc_ids()[i] << '\t';
    const auto& id = table.id(i);
    for (size_t j = 0; j < id.size(); ++j) out << (j ? "," : "") << id[j];
    out << '\n';
  }
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

IdTable ReadIdsTsv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::vector<std::string> docs;
  std::vector<SemanticId> ids;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto where = path.string() + ":" + std::to_string(line_no);
    const auto tab = line.find('\t');
    if (tab == std::string::npos || tab == 0) {
      throw ParseError(where + ": expected doc_id<TAB>codes");
    }
    SemanticId id;
    std::stringstream codes(line.substr(tab + 1));
    std::string field;
    while (std::getline(codes, field, ',')) {
      try {
        size_t used = 0;
        const int c = std::stoi(field, &used);
        if (used != field.size() || c < 0) throw std::invalid_argument(field);
        id.push_back(c);
      } catch (const std::exception&) {
        throw ParseError(where + ": bad code '" + field + "'");
      }
    }
    if (id.empty()) throw ParseError(where + ": no codes");
    docs.push_back(line.substr(0, tab));
    ids.push_back(std::move(id));
  }
  return IdTable(std::move(docs), std::move(ids));
}

}  // namespace semindex
