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

#include "semindex/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

#include "json.hpp"
#include "semindex/errors.hpp"
#include "semindex/seed.hpp"
#include "semindex/trainer.hpp"

namespace semindex {

using ag::Matrix;
using ag::Var;

std::vector<QueryRecord> ReadQueriesJsonl(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::vector<QueryRecord> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path.string() + ":" + std::to_string(line_no);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(where + ": invalid JSON: " + e.what());
    }
    if (!j.is_object()) throw ParseError(where + ": expected a JSON object");
    QueryRecord r;
    try {
      r.query_id = j.at("query_id").get<std::string>();
      r.text = j.at("text").get<std::string>();
      r.relevant_doc_ids = j.at("relevant_doc_ids").get<std::vector<std::string>>();
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(where + ": " + e.what());
    }
    if (r.query_id.empty()) throw ValidationError(where + ": empty query_id");
    out.push_back(std::move(r));
  }
  return out;
}

void WriteQueriesJsonl(const std::vector<QueryRecord>& records,
                       const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  for (const auto& r : records) {
    nlohmann::json j = {{"query_id", r.query_id},
                        {"text", r.text},
                        {"relevant_doc_ids", r.relevant_doc_ids}};
    out << j.dump() << '\n';
  }
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

std::vector<QueryRecord> SynthQueries(const Corpus& corpus,
                                      const SynthQueryOptions& opts) {
  if (corpus.size() == 0) throw ValidationError("synthetic queries: empty corpus");
  if (opts.words < 1) throw ValidationError("synthetic queries: words must be >= 1");
  std::vector<size_t> pool = opts.candidates;
  if (pool.empty()) {
    pool.resize(corpus.size());
    std::iota(pool.begin(), pool.end(), 0);
  }
  std::map<int, int> df;
  for (const auto& d : corpus.documents()) {
    std::vector<int> uniq = d.tokens;
    std::sort(uniq.begin(), uniq.end());
    uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
    for (int t : uniq) ++df[t];
  }
  std::mt19937_64 rng(MixSeed(opts.seed, {0x9eULL}));
  std::vector<QueryRecord> out;
  for (size_t q = 0; q < opts.count; ++q) {
    std::uniform_int_distribution<size_t> pick(0, pool.size() - 1);
    const Document& doc = corpus.document(pool[pick(rng)]);
    std::vector<int> uniq = doc.tokens;
    std::sort(uniq.begin(), uniq.end());
    uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
    uniq.erase(std::remove(uniq.begin(), uniq.end(), kUnkIndex), uniq.end());
    if (uniq.empty()) throw ValidationError("synthetic queries: document '" + doc.doc_id + "' has no known tokens");
    std::stable_sort(uniq.begin(), uniq.end(), [&](int a, int b) { return df[a] < df[b]; });
    const size_t n = std::min(uniq.size(),
                              std::max(static_cast<size_t>(opts.words), (uniq.size() + 2) / 3));
    std::vector<int> cand(uniq.begin(), uniq.begin() + static_cast<long>(n));
    std::shuffle(cand.begin(), cand.end(), rng);
    cand.resize(std::min(cand.size(), static_cast<size_t>(opts.words)));
    std::string text;
    for (int t : cand) text += (text.empty() ? "" : " ") + corpus.vocabulary().TokenAt(t);
    char id[32];
    std::snprintf(id, sizeof id, "q%05zu", q);
    out.push_back({id, text, {doc.doc_id}});
  }
  return out;
}

std::vector<QueryDocPair> MakePairs(const std::vector<QueryRecord>& records,
                                    const Vocabulary& vocab,
                                    const IdTable& table, int max_len) {
  std::vector<QueryDocPair> out;
  for (const auto& r : records) {
    std::vector<int> toks = Tokenize(r.text, vocab);
    if (toks.empty()) {
      throw ValidationError("query '" + r.query_id + "' has no tokens");
    }
    if (static_cast<int>(toks.size()) > max_len) toks.resize(static_cast<size_t>(max_len));
    for (const auto& d : r.relevant_doc_ids) {
      if (!table.RowOf(d)) {
        throw ValidationError("query '" + r.query_id + "' references unknown doc_id '" + d + "'");
      }
      out.push_back({r.query_id, toks, d});
    }
  }
  return out;
}

namespace {

// Teacher-forced loss over full IDs for a batch of (query, ID) pairs.
Var BatchSequenceNll(const SemanticIndexer& model,
                     const std::vector<std::vector<int>>& queries,
                     const std::vector<SemanticId>& ids) {
  const int len = model.full_id_length();
  const size_t n = queries.size();
  EncodedBatch enc = model.Encode(queries);
  std::vector<int> md(n);
  std::iota(md.begin(), md.end(), 0);
  std::vector<std::vector<int>> prefixes;
  for (const auto& id : ids) {
    if (static_cast<int>(id.size()) != len) {
      throw ContractError("fine-tune: ID length does not match the model");
    }
    prefixes.emplace_back(id.begin(), id.end() - 1);
  }
  Var dec = model.Decode(enc, md, prefixes);
  Var total = ag::Scalar(0.0);
  for (int j = 0; j < len; ++j) {
    std::vector<int> rows(n);
    std::vector<ag::Pick> picks(n);
    for (size_t s = 0; s < n; ++s) {
      rows[s] = static_cast<int>(s) * len + j;
      picks[s] = {static_cast<int>(s), ids[s][static_cast<size_t>(j)]};
    }
    Var logits = model.CodeLogits(ag::GatherRows(dec, rows), j + 1);
    total = ag::Add(total, ag::SoftmaxNll(logits, picks));
  }
  return total;
}

}  // namespace

double SequenceNll(const SemanticIndexer& model, std::span<const int> query,
                   const SemanticId& id) {
  std::vector<std::vector<int>> q{{query.begin(), query.end()}};
  return BatchSequenceNll(model, q, {id}).scalar();
}

std::vector<double> Finetune(SemanticIndexer& model,
                             const std::vector<QueryDocPair>& pairs,
                             const IdTable& table, const FinetuneOptions& opts) {
  if (opts.epochs < 0) throw ValidationError("fine-tune epochs must be >= 0");
  if (opts.batch_size < 1) throw ValidationError("fine-tune batch size must be >= 1");
  if (table.id_length() != model.full_id_length()) {
    throw ValidationError("ID table length does not match the model's full ID length");
  }
  for (int p = 1; p <= model.full_id_length(); ++p)
    if (!model.codebook(p).initialized) {
      throw StateError("fine-tune: codebook " + std::to_string(p) + " is not initialized");
    }
  std::vector<SemanticId> targets;
  for (const auto& pr : pairs) {
    auto row = table.RowOf(pr.doc_id);
    if (!row) throw ValidationError("pair '" + pr.query_id + "' references unknown doc_id '" + pr.doc_id + "'");
    targets.push_back(table.id(*row));
  }
  std::vector<double> curve;
  if (opts.epochs == 0 || pairs.empty()) return curve;

  std::vector<ParameterSet*> sets = {&model.encoder_params(), &model.decoder_params()};
  for (int p = 1; p <= model.full_id_length(); ++p) {
    model.codebook_params(p).SetTrainable(!opts.freeze_codebooks);
    if (!opts.freeze_codebooks) sets.push_back(&model.codebook_params(p));
  }
  std::vector<Var> params;
  for (auto* s : sets) {
    s->SetTrainable(true);
    for (const auto& np : s->items()) params.push_back(np.var);
  }
  AdamWOptions ao;
  ao.lr = opts.step_size;
  ao.weight_decay = opts.weight_decay;
  AdamW opt(params, ao);

  for (int epoch = 0; epoch < opts.epochs; ++epoch) {
    std::vector<size_t> order(pairs.size());
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(MixSeed(opts.seed, {0xf1ULL, static_cast<uint64_t>(epoch)}));
    std::shuffle(order.begin(), order.end(), rng);
    double sum = 0.0;
    for (size_t begin = 0; begin < order.size(); begin += static_cast<size_t>(opts.batch_size)) {
      const size_t end = std::min(order.size(), begin + static_cast<size_t>(opts.batch_size));
      std::vector<std::vector<int>> q;
      std::vector<SemanticId> ids;
      for (size_t k = begin; k < end; ++k) {
        q.push_back(pairs[order[k]].tokens);
        ids.push_back(targets[order[k]]);
      }
      Var loss = ag::Scale(BatchSequenceNll(model, q, ids), 1.0 / static_cast<double>(q.size()));
      if (!std::isfinite(loss.scalar())) throw NumericError("fine-tune: non-finite loss");
      ag::Backward(loss);
      opt.Step();
      sum += loss.scalar() * static_cast<double>(q.size());
    }
    curve.push_back(sum / static_cast<double>(pairs.size()));
  }
  for (auto* s : sets) s->SetTrainable(false);
  return curve;
}

namespace {

struct Hypothesis {
  SemanticId codes;
  int node = PrefixTree::kRoot;
  double score = 0.0;
};

bool Better(const Hypothesis& a, const Hypothesis& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.codes < b.codes;
}

}  // namespace

std::vector<ScoredDoc> ConstrainedBeamSearch(const SemanticIndexer& model,
                                             std::span<const int> query,
                                             const PrefixTree& trie, int beam,
                                             int k) {
  if (trie.num_leaves() == 0) throw ContractError("beam search: empty prefix tree");
  if (beam < 1) throw ValidationError("beam must be >= 1");
  if (k < 1 || k > beam) throw ValidationError("k must lie in [1, beam]");
  if (query.empty()) throw ValidationError("beam search: empty query");
  if (trie.depth() != model.full_id_length()) {
    throw ContractError("beam search: trie depth does not match the model's ID length");
  }
  std::vector<std::vector<int>> docs{{query.begin(), query.end()}};
  EncodedBatch enc = model.Encode(docs);

  std::vector<Hypothesis> hyps(1);
  for (int depth = 0; depth < trie.depth(); ++depth) {
    std::vector<std::vector<int>> prefixes;
    for (const auto& h : hyps) prefixes.push_back(h.codes);
    std::vector<int> md(hyps.size(), 0);
    Var dec = model.Decode(enc, md, prefixes);
    std::vector<int> rows(hyps.size());
    for (size_t s = 0; s < hyps.size(); ++s) rows[s] = static_cast<int>(s) * (depth + 1) + depth;
    Matrix h(static_cast<Eigen::Index>(hyps.size()), model.dim());
    for (size_t s = 0; s < hyps.size(); ++s) h.row(static_cast<Eigen::Index>(s)) = dec.value().row(rows[s]);
    const Matrix logp =
        ag::LogSoftmaxRows(h * model.codebook(depth + 1).embeddings.value().transpose());

    std::vector<Hypothesis> next;
    for (size_t s = 0; s < hyps.size(); ++s) {
      for (const auto& [code, child] : trie.Children(hyps[s].node)) {
        if (code >= logp.cols()) {
          throw ContractError("beam search: trie code outside the codebook");
        }
        Hypothesis e;
        e.codes = hyps[s].codes;
        e.codes.push_back(code);
        e.node = child;
        e.score = hyps[s].score + logp(static_cast<Eigen::Index>(s), code);
        next.push_back(std::move(e));
      }
    }
    const size_t keep = std::min(next.size(), static_cast<size_t>(beam));
    std::partial_sort(next.begin(), next.begin() + static_cast<long>(keep), next.end(), Better);
    next.resize(keep);
    hyps = std::move(next);
  }

  std::vector<ScoredDoc> out;
  for (const auto& h : hyps) {
    if (static_cast<int>(out.size()) == k) break;
    const auto& doc = trie.DocAt(h.node);
    if (!doc) throw ContractError("beam search: completed hypothesis is not a leaf");
    out.push_back({*doc, h.codes, h.score});
  }
  return out;
}

std::vector<ScoredDoc> Search(const SemanticIndexer& model,
                              const PrefixTree& trie, const Vocabulary& vocab,
                              const std::string& query_text, int beam, int k,
                              int max_len) {
  std::vector<int> toks = Tokenize(query_text, vocab);
  if (toks.empty()) throw ValidationError("query tokenizes to an empty sequence");
  if (static_cast<int>(toks.size()) > max_len) toks.resize(static_cast<size_t>(max_len));
  return ConstrainedBeamSearch(model, toks, trie, beam, k);
}

void WriteSearchTsv(const std::vector<SearchRow>& rows,
                    const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  char buf[64];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%.17g", r.score);
    out << r.query_id << '\t' << r.rank << '\t' << r.doc_id << '\t' << buf << '\n';
  }
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

std::vector<SearchRow> ReadSearchTsv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::vector<SearchRow> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::string where = path.string() + ":" + std::to_string(line_no);
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, '\t')) f.push_back(field);
    if (f.size() != 4) throw ParseError(where + ": expected 4 tab-separated fields");
    SearchRow r;
    r.query_id = f[0];
    r.doc_id = f[2];
    try {
      size_t used = 0;
      r.rank = std::stoi(f[1], &used);
      if (used != f[1].size() || r.rank < 1) throw std::invalid_argument(f[1]);
      r.score = std::stod(f[3], &used);
      if (used != f[3].size()) throw std::invalid_argument(f[3]);
    } catch (const std::exception&) {
      throw ParseError(where + ": bad rank or score");
    }
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<RankedList> JoinRuns(const std::vector<SearchRow>& rows,
                                 const std::vector<QueryRecord>& judgments) {
  std::map<std::string, std::vector<const SearchRow*>> by_query;
  for (const auto& r : rows) by_query[r.query_id].push_back(&r);
  std::vector<RankedList> out;
  for (const auto& j : judgments) {
    RankedList rl;
    rl.query_id = j.query_id;
    rl.relevant.insert(j.relevant_doc_ids.begin(), j.relevant_doc_ids.end());
    auto it = by_query.find(j.query_id);
    if (it != by_query.end()) {
      auto list = it->second;
      std::stable_sort(list.begin(), list.end(),
                       [](const SearchRow* a, const SearchRow* b) { return a->rank < b->rank; });
      for (const auto* r : list) rl.doc_ids.push_back(r->doc_id);
    }
    out.push_back(std::move(rl));
  }
  return out;
}

}  // namespace semindex
