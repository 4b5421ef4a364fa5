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

#include "semindex/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "semindex/errors.hpp"

namespace semindex {

using ag::Matrix;
using ag::Var;

void ModelConfig::Validate() const {
  auto fail = [](const std::string& m) { throw ValidationError("model config: " + m); };
  if (dim < 1) fail("dim must be positive");
  if (heads < 1 || dim % heads != 0) fail("dim must be divisible by heads");
  if (enc_layers < 1) fail("enc_layers must be >= 1");
  if (dec_layers < 1) fail("dec_layers must be >= 1");
  if (codebook_sizes.empty()) fail("ID length must be >= 1");
  for (int k : codebook_sizes)
    if (k < 2) fail("every codebook size must be >= 2");
  if (vocab_size < 2) fail("vocab_size must be >= 2");
  if (max_doc_len < 1) fail("max_doc_len must be positive");
  if (recon_layers < 1) fail("recon_layers must be >= 1");
  if (ffn_mult < 1) fail("ffn_mult must be >= 1");
  if (!(dropout >= 0.0 && dropout < 1.0)) fail("dropout must lie in [0, 1)");
}

nlohmann::json ToJson(const ModelConfig& c) {
  return {{"dim", c.dim},
          {"enc_layers", c.enc_layers},
          {"dec_layers", c.dec_layers},
          {"heads", c.heads},
          {"codebook_sizes", c.codebook_sizes},
          {"vocab_size", c.vocab_size},
          {"max_doc_len", c.max_doc_len},
          {"recon_layers", c.recon_layers},
          {"ffn_mult", c.ffn_mult},
          {"dropout", c.dropout},
          {"init_seed", c.init_seed}};
}

ModelConfig ModelConfigFromJson(const nlohmann::json& j) {
  ModelConfig c;
  try {
    c.dim = j.at("dim").get<int>();
    c.enc_layers = j.at("enc_layers").get<int>();
    c.dec_layers = j.at("dec_layers").get<int>();
    c.heads = j.at("heads").get<int>();
    c.codebook_sizes = j.at("codebook_sizes").get<std::vector<int>>();
    c.vocab_size = j.at("vocab_size").get<int>();
    c.max_doc_len = j.at("max_doc_len").get<int>();
    c.recon_layers = j.at("recon_layers").get<int>();
    c.ffn_mult = j.at("ffn_mult").get<int>();
    c.dropout = j.at("dropout").get<double>();
    c.init_seed = j.at("init_seed").get<uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("model config: ") + e.what());
  }
  c.Validate();
  return c;
}

void RoundToFloat(Matrix& m) {
  for (Eigen::Index i = 0; i < m.size(); ++i)
    m.data()[i] = static_cast<double>(static_cast<float>(m.data()[i]));
}

Var ParameterSet::Add(std::string name, Matrix init) {
  RoundToFloat(init);
  Var v = ag::Parameter(std::move(init));
  items_.push_back({std::move(name), v});
  return v;
}

const NamedParameter* ParameterSet::Find(const std::string& name) const {
  for (const auto& p : items_)
    if (p.name == name) return &p;
  return nullptr;
}

void ParameterSet::SetTrainable(bool on) {
  for (auto& p : items_) {
    auto v = p.var;
    v.set_requires_grad(on);
  }
}

void ParameterSet::Append(const ParameterSet& other) {
  items_.insert(items_.end(), other.items_.begin(), other.items_.end());
}

size_t ParameterSet::NumScalars() const {
  size_t n = 0;
  for (const auto& p : items_) n += static_cast<size_t>(p.var.value().size());
  return n;
}

namespace {

Matrix Normal(int rows, int cols, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

Matrix Xavier(int in, int out, std::mt19937_64& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(in + out));
  std::uniform_real_distribution<double> dist(-a, a);
  Matrix m(in, out);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

LayerNormParams MakeLayerNorm(ParameterSet& ps, const std::string& name,
                              int dim) {
  return {ps.Add(name + ".gain", Matrix::Constant(1, dim, 1.0)),
          ps.Add(name + ".bias", Matrix::Zero(1, dim))};
}

LinearParams MakeLinear(ParameterSet& ps, const std::string& name, int in,
                        int out, std::mt19937_64& rng) {
  return {ps.Add(name + ".weight", Xavier(in, out, rng)),
          ps.Add(name + ".bias", Matrix::Zero(1, out))};
}

AttentionParams MakeAttention(ParameterSet& ps, const std::string& name,
                              int dim, int heads, std::mt19937_64& rng) {
  AttentionParams a;
  a.q = MakeLinear(ps, name + ".q", dim, dim, rng);
  a.k = MakeLinear(ps, name + ".k", dim, dim, rng);
  a.v = MakeLinear(ps, name + ".v", dim, dim, rng);
  a.o = MakeLinear(ps, name + ".o", dim, dim, rng);
  a.heads = heads;
  return a;
}

FeedForwardParams MakeFeedForward(ParameterSet& ps, const std::string& name,
                                  int dim, int hidden, std::mt19937_64& rng) {
  return {MakeLinear(ps, name + ".up", dim, hidden, rng),
          MakeLinear(ps, name + ".down", hidden, dim, rng)};
}

Var MaybeDropout(const Var& x, double rate, const ForwardOptions& opts) {
  if (!opts.training || rate <= 0.0) return x;
  if (opts.rng == nullptr) throw ContractError("dropout requires an rng");
  return ag::Dropout(x, rate, *opts.rng);
}

int ArgmaxLowest(const double* v, Eigen::Index n) {
  int best = 0;
  for (Eigen::Index j = 1; j < n; ++j)
    if (v[j] > v[best]) best = static_cast<int>(j);
  return best;
}

}  // namespace

Var LayerNormParams::Apply(const Var& x) const {
  return ag::LayerNorm(x, gain, bias);
}

Var LinearParams::Apply(const Var& x) const {
  return ag::AddRow(ag::MatMul(x, weight), bias);
}

Var AttentionParams::Apply(const Var& queries, const Var& keys,
                           std::span<const ag::KeyRange> ranges) const {
  Var attended = ag::Attention(q.Apply(queries), k.Apply(keys), v.Apply(keys),
                               heads, ranges);
  return o.Apply(attended);
}

Var FeedForwardParams::Apply(const Var& x) const {
  return down.Apply(ag::Gelu(up.Apply(x)));
}

CodeDistribution CodeLookup(std::span<const double> h,
                            const Matrix& codebook) {
  if (static_cast<Eigen::Index>(h.size()) != codebook.cols()) {
    throw ContractError("code lookup: hidden width does not match codebook");
  }
  if (codebook.rows() < 1) throw ContractError("code lookup: empty codebook");
  for (double x : h)
    if (!std::isfinite(x)) throw NumericError("code lookup: non-finite h");
  Eigen::Map<const ag::RowVector> hv(h.data(), static_cast<Eigen::Index>(h.size()));
  std::vector<double> logits(static_cast<size_t>(codebook.rows()));
  for (Eigen::Index j = 0; j < codebook.rows(); ++j)
    logits[static_cast<size_t>(j)] = hv.dot(codebook.row(j));
  CodeDistribution out;
  out.chosen = ArgmaxLowest(logits.data(), codebook.rows());
  const double mx = logits[static_cast<size_t>(out.chosen)];
  double z = 0.0;
  out.probs.resize(logits.size());
  for (size_t j = 0; j < logits.size(); ++j) {
    out.probs[j] = std::exp(logits[j] - mx);
    z += out.probs[j];
  }
  for (double& p : out.probs) p /= z;
  return out;
}

Quantized Quantize(const Var& h, const Var& codebook, QuantizeMode mode) {
  if (h.cols() != codebook.cols()) {
    throw ContractError("quantize: hidden width does not match codebook");
  }
  if (!h.value().allFinite()) throw NumericError("quantize: non-finite h");
  Var logits = ag::MatMulNT(h, codebook);
  Quantized q;
  q.codes.resize(static_cast<size_t>(h.rows()));
  Matrix hard(h.rows(), h.cols());
  const Matrix& lv = logits.value();
  for (Eigen::Index r = 0; r < lv.rows(); ++r) {
    const int c = ArgmaxLowest(lv.row(r).data(), lv.cols());
    q.codes[static_cast<size_t>(r)] = c;
    hard.row(r) = codebook.value().row(c);
  }
  Var mixture = ag::MatMul(ag::SoftmaxRows(logits), codebook);
  q.embedding = mode == QuantizeMode::kSoft
                    ? mixture
                    : ag::SubstituteValue(mixture, std::move(hard));
  return q;
}

SemanticIndexer::SemanticIndexer(ModelConfig config)
    : config_(std::move(config)) {
  config_.Validate();
  const int d = config_.dim;
  const int f = d * config_.ffn_mult;
  const double emb_std = 1.0 / std::sqrt(static_cast<double>(d));
  std::mt19937_64 rng(config_.init_seed);

  tok_emb_ = encoder_.Add("enc.tok_emb", Normal(config_.vocab_size, d, emb_std, rng));
  enc_pos_ = encoder_.Add("enc.pos_emb", Normal(config_.max_doc_len, d, 0.02, rng));
  for (int l = 0; l < config_.enc_layers; ++l) {
    const std::string p = "enc.layer" + std::to_string(l);
    EncLayer layer;
    layer.ln1 = MakeLayerNorm(encoder_, p + ".ln1", d);
    layer.attn = MakeAttention(encoder_, p + ".attn", d, config_.heads, rng);
    layer.ln2 = MakeLayerNorm(encoder_, p + ".ln2", d);
    layer.ffn = MakeFeedForward(encoder_, p + ".ffn", d, f, rng);
    enc_layers_.push_back(layer);
  }
  enc_final_ = MakeLayerNorm(encoder_, "enc.final_ln", d);

  const int t = config_.id_length();
  bos_ = decoder_.Add("dec.bos", Normal(1, d, emb_std, rng));
  dec_pos_ = decoder_.Add("dec.pos_emb", Normal(t + 1, d, 0.02, rng));
  for (int l = 0; l < config_.dec_layers; ++l) {
    const std::string p = "dec.layer" + std::to_string(l);
    DecLayer layer;
    layer.ln1 = MakeLayerNorm(decoder_, p + ".ln1", d);
    layer.self_attn = MakeAttention(decoder_, p + ".self_attn", d, config_.heads, rng);
    layer.ln2 = MakeLayerNorm(decoder_, p + ".ln2", d);
    layer.cross_attn = MakeAttention(decoder_, p + ".cross_attn", d, config_.heads, rng);
    layer.ln3 = MakeLayerNorm(decoder_, p + ".ln3", d);
    layer.ffn = MakeFeedForward(decoder_, p + ".ffn", d, f, rng);
    dec_layers_.push_back(layer);
  }
  dec_final_ = MakeLayerNorm(decoder_, "dec.final_ln", d);

  for (int pos = 1; pos <= t; ++pos) {
    ParameterSet ps;
    Var e = ps.Add("codebook." + std::to_string(pos),
                   Normal(config_.codebook_sizes[static_cast<size_t>(pos - 1)],
                          d, emb_std, rng));
    codebook_sets_.push_back(ps);
    codebooks_.push_back({pos, e, false});
  }
}

Codebook& SemanticIndexer::codebook(int position) {
  if (position < 1 || position > full_id_length()) {
    throw ContractError("codebook position out of range");
  }
  return codebooks_[static_cast<size_t>(position - 1)];
}

const Codebook& SemanticIndexer::codebook(int position) const {
  if (position < 1 || position > full_id_length()) {
    throw ContractError("codebook position out of range");
  }
  return codebooks_[static_cast<size_t>(position - 1)];
}

int SemanticIndexer::codebook_size(int position) const {
  return static_cast<int>(codebook(position).embeddings.rows());
}

ParameterSet& SemanticIndexer::codebook_params(int position) {
  if (position < 1 || position > full_id_length()) {
    throw ContractError("codebook position out of range");
  }
  return codebook_sets_[static_cast<size_t>(position - 1)];
}

void SemanticIndexer::EnsureSuffixCodebook(int size, uint64_t seed) {
  if (size < 1) throw ContractError("suffix codebook needs at least one code");
  const int pos = id_length() + 1;
  std::mt19937_64 rng(seed);
  ParameterSet ps;
  Var e = ps.Add("codebook." + std::to_string(pos),
                 Normal(size, dim(), 1.0 / std::sqrt(static_cast<double>(dim())), rng));
  if (full_id_length() == pos) {
    codebook_sets_.back() = ps;
    codebooks_.back() = {pos, e, true};
  } else {
    codebook_sets_.push_back(ps);
    codebooks_.push_back({pos, e, true});
  }
  suffix_size_ = size;
}

ParameterSet SemanticIndexer::AllParameters() const {
  ParameterSet all;
  all.Append(encoder_);
  all.Append(decoder_);
  for (const auto& ps : codebook_sets_) all.Append(ps);
  return all;
}

Var SemanticIndexer::EncoderLayer(int layer, const Var& x,
                                  std::span<const ag::KeyRange> ranges,
                                  const ForwardOptions& opts) const {
  const auto& L = enc_layers_[static_cast<size_t>(layer)];
  Var n1 = L.ln1.Apply(x);
  Var h = ag::Add(x, MaybeDropout(L.attn.Apply(n1, n1, ranges), config_.dropout, opts));
  Var f = L.ffn.Apply(L.ln2.Apply(h));
  return ag::Add(h, MaybeDropout(f, config_.dropout, opts));
}

EncodedBatch SemanticIndexer::Encode(std::span<const std::vector<int>> docs,
                                     const ForwardOptions& opts) const {
  if (docs.empty()) throw ContractError("encode: empty batch");
  std::vector<int> tokens, positions;
  EncodedBatch out;
  for (const auto& doc : docs) {
    if (doc.empty()) throw ContractError("encode: empty document");
    const int n = std::min<int>(static_cast<int>(doc.size()), config_.max_doc_len);
    const int begin = static_cast<int>(tokens.size());
    for (int i = 0; i < n; ++i) {
      const int tok = doc[static_cast<size_t>(i)];
      if (tok < 0 || tok >= config_.vocab_size) {
        throw ContractError("encode: token index outside vocabulary");
      }
      tokens.push_back(tok);
      positions.push_back(i);
    }
    out.doc_rows.push_back({begin, begin + n});
  }
  std::vector<ag::KeyRange> ranges;
  ranges.reserve(tokens.size());
  for (const auto& r : out.doc_rows)
    for (int i = r.begin; i < r.end; ++i) ranges.push_back(r);
  Var x = ag::Add(ag::GatherRows(tok_emb_, tokens), ag::GatherRows(enc_pos_, positions));
  x = MaybeDropout(x, config_.dropout, opts);
  for (int l = 0; l < config_.enc_layers; ++l) x = EncoderLayer(l, x, ranges, opts);
  out.memory = enc_final_.Apply(x);
  return out;
}

Var SemanticIndexer::Decode(const EncodedBatch& enc,
                            std::span<const int> memory_doc,
                            const std::vector<std::vector<int>>& prefixes,
                            const ForwardOptions& opts) const {
  const size_t s_count = prefixes.size();
  if (s_count == 0 || memory_doc.size() != s_count) {
    throw ContractError("decode: one memory document per prefix required");
  }
  const int len = static_cast<int>(prefixes[0].size());
  if (len >= full_id_length()) {
    throw ContractError("decode: prefix length must be < ID length");
  }
  for (const auto& p : prefixes)
    if (static_cast<int>(p.size()) != len) {
      throw ContractError("decode: prefixes must share one length");
    }
  const int rows_per = len + 1;

  // Position-major blocks: [BOS x S, E^1 rows x S, ...].
  std::vector<Var> blocks;
  blocks.push_back(ag::GatherRows(bos_, std::vector<int>(s_count, 0)));
  for (int j = 0; j < len; ++j) {
    const Codebook& cb = codebooks_[static_cast<size_t>(j)];
    std::vector<int> codes(s_count);
    for (size_t s = 0; s < s_count; ++s) {
      const int c = prefixes[s][static_cast<size_t>(j)];
      if (c < 0 || c >= cb.embeddings.rows()) {
        throw ContractError("decode: prefix code " + std::to_string(c) +
                            " invalid at position " + std::to_string(j + 1));
      }
      codes[s] = c;
    }
    blocks.push_back(ag::GatherRows(cb.embeddings, codes));
  }
  Var stacked = ag::ConcatRows(blocks);
  std::vector<int> order, pos_idx;
  std::vector<ag::KeyRange> self_ranges, cross_ranges;
  const size_t total = s_count * static_cast<size_t>(rows_per);
  order.reserve(total);
  for (size_t s = 0; s < s_count; ++s) {
    const int md = memory_doc[s];
    if (md < 0 || md >= static_cast<int>(enc.doc_rows.size())) {
      throw ContractError("decode: memory document out of range");
    }
    const int base = static_cast<int>(s) * rows_per;
    for (int j = 0; j < rows_per; ++j) {
      order.push_back(j * static_cast<int>(s_count) + static_cast<int>(s));
      pos_idx.push_back(j);
      self_ranges.push_back({base, base + j + 1});
      cross_ranges.push_back(enc.doc_rows[static_cast<size_t>(md)]);
    }
  }
  Var x = ag::Add(ag::GatherRows(stacked, order), ag::GatherRows(dec_pos_, pos_idx));
  x = MaybeDropout(x, config_.dropout, opts);
  for (const auto& L : dec_layers_) {
    Var n1 = L.ln1.Apply(x);
    x = ag::Add(x, MaybeDropout(L.self_attn.Apply(n1, n1, self_ranges), config_.dropout, opts));
    x = ag::Add(x, MaybeDropout(L.cross_attn.Apply(L.ln2.Apply(x), enc.memory, cross_ranges),
                                config_.dropout, opts));
    x = ag::Add(x, MaybeDropout(L.ffn.Apply(L.ln3.Apply(x)), config_.dropout, opts));
  }
  return dec_final_.Apply(x);
}

ag::RowVector SemanticIndexer::HiddenState(std::span<const int> tokens,
                                           std::span<const int> prefix) const {
  if (static_cast<int>(prefix.size()) >= full_id_length()) {
    throw ContractError("hidden state: prefix length must be < ID length");
  }
  std::vector<std::vector<int>> docs{{tokens.begin(), tokens.end()}};
  EncodedBatch enc = Encode(docs);
  std::vector<int> md{0};
  Var h = Decode(enc, md, {{prefix.begin(), prefix.end()}});
  return h.value().row(static_cast<Eigen::Index>(prefix.size()));
}

Var SemanticIndexer::CodeLogits(const Var& h, int position) const {
  return ag::MatMulNT(h, codebook(position).embeddings);
}

std::vector<int> AssignSemanticId(const SemanticIndexer& model,
                                  std::span<const int> tokens, int upto) {
  if (upto < 0 || upto > model.full_id_length()) {
    throw ContractError("assign: position out of range");
  }
  std::vector<int> prefix;
  for (int t = 1; t <= upto; ++t) {
    const Codebook& cb = model.codebook(t);
    if (!cb.initialized) {
      throw StateError("assign: codebook " + std::to_string(t) + " is not initialized");
    }
    ag::RowVector h = model.HiddenState(tokens, prefix);
    prefix.push_back(CodeLookup({h.data(), static_cast<size_t>(h.size())},
                                cb.embeddings.value())
                         .chosen);
  }
  return prefix;
}

std::vector<std::vector<int>> AssignSemanticIds(
    const SemanticIndexer& model, std::span<const std::vector<int>> docs,
    int upto, int batch_size) {
  if (upto < 0 || upto > model.full_id_length()) {
    throw ContractError("assign: position out of range");
  }
  for (int t = 1; t <= upto; ++t)
    if (!model.codebook(t).initialized) {
      throw StateError("assign: codebook " + std::to_string(t) + " is not initialized");
    }
  std::vector<std::vector<int>> out(docs.size());
  if (upto == 0) return out;
  batch_size = std::max(1, batch_size);
  for (size_t begin = 0; begin < docs.size(); begin += static_cast<size_t>(batch_size)) {
    const size_t end = std::min(docs.size(), begin + static_cast<size_t>(batch_size));
    auto batch = docs.subspan(begin, end - begin);
    EncodedBatch enc = model.Encode(batch);
    std::vector<int> md(batch.size());
    for (size_t i = 0; i < md.size(); ++i) md[i] = static_cast<int>(i);
    std::vector<std::vector<int>> prefixes(batch.size());
    for (int t = 1; t <= upto; ++t) {
      Var h = model.Decode(enc, md, prefixes);
      const Matrix& e = model.codebook(t).embeddings.value();
      for (size_t s = 0; s < batch.size(); ++s) {
        const Eigen::Index row = static_cast<Eigen::Index>(s) * t + (t - 1);
        ag::RowVector logits = h.value().row(row) * e.transpose();
        prefixes[s].push_back(ArgmaxLowest(logits.data(), logits.size()));
      }
    }
    for (size_t s = 0; s < batch.size(); ++s) out[begin + s] = std::move(prefixes[s]);
  }
  return out;
}

std::vector<HintToken> HintTokens(std::span<const int> tokens,
                                  std::span<const int> hint_indices) {
  std::vector<HintToken> out;
  out.reserve(hint_indices.size());
  for (int i : hint_indices) {
    if (i < 0 || i >= static_cast<int>(tokens.size())) {
      throw ContractError("hint index outside document");
    }
    out.push_back({tokens[static_cast<size_t>(i)], i});
  }
  return out;
}

Reconstructor::Reconstructor(const ModelConfig& config)
    : vocab_size_(config.vocab_size),
      max_len_(config.max_doc_len),
      dropout_(config.dropout) {
  config.Validate();
  const int d = config.dim;
  std::mt19937_64 rng(config.init_seed ^ 0x9e3779b97f4a7c15ULL);
  const double emb_std = 1.0 / std::sqrt(static_cast<double>(d));
  tok_emb_ = params_.Add("recon.tok_emb", Normal(vocab_size_, d, emb_std, rng));
  pos_emb_ = params_.Add("recon.pos_emb", Normal(max_len_, d, 0.02, rng));
  fallback_ = params_.Add("recon.fallback_query", Normal(1, d, emb_std, rng));
  for (int l = 0; l < config.recon_layers; ++l) {
    const std::string p = "recon.layer" + std::to_string(l);
    Layer layer;
    layer.ln_q = MakeLayerNorm(params_, p + ".ln_q", d);
    layer.ln_kv = MakeLayerNorm(params_, p + ".ln_kv", d);
    layer.attn = MakeAttention(params_, p + ".attn", d, config.heads, rng);
    layer.ln2 = MakeLayerNorm(params_, p + ".ln2", d);
    layer.ffn = MakeFeedForward(params_, p + ".ffn", d, d * config.ffn_mult, rng);
    layers_.push_back(layer);
  }
  final_ = MakeLayerNorm(params_, "recon.final_ln", d);
}

Var Reconstructor::FallbackQueries(int count) const {
  return ag::GatherRows(fallback_, std::vector<int>(static_cast<size_t>(count), 0));
}

Var Reconstructor::Pooled(const Var& queries, std::span<const int> query_doc,
                          const std::vector<std::vector<HintToken>>& hints,
                          const ForwardOptions& opts) const {
  const int num_docs = static_cast<int>(hints.size());
  if (static_cast<Eigen::Index>(query_doc.size()) != queries.rows()) {
    throw ContractError("reconstruct: one document per query row required");
  }
  std::vector<int> toks, pos;
  std::vector<ag::KeyRange> doc_range;
  for (const auto& h : hints) {
    if (h.empty()) throw ContractError("reconstruct: document without hint tokens");
    const int begin = static_cast<int>(toks.size());
    for (const auto& ht : h) {
      if (ht.position < 0 || ht.position >= max_len_) {
        throw ContractError("reconstruct: hint position beyond max_doc_len");
      }
      toks.push_back(ht.token);
      pos.push_back(ht.position);
    }
    doc_range.push_back({begin, static_cast<int>(toks.size())});
  }
  std::vector<ag::KeyRange> ranges;
  ranges.reserve(query_doc.size());
  for (int d : query_doc) {
    if (d < 0 || d >= num_docs) throw ContractError("reconstruct: query document");
    ranges.push_back(doc_range[static_cast<size_t>(d)]);
  }
  Var keys = ag::Add(ag::GatherRows(tok_emb_, toks), ag::GatherRows(pos_emb_, pos));
  Var x = queries;
  for (const auto& L : layers_) {
    Var a = L.attn.Apply(L.ln_q.Apply(x), L.ln_kv.Apply(keys), ranges);
    x = ag::Add(x, MaybeDropout(a, dropout_, opts));
    x = ag::Add(x, MaybeDropout(L.ffn.Apply(L.ln2.Apply(x)), dropout_, opts));
  }
  return ag::GroupSumRows(final_.Apply(x), query_doc, num_docs);
}

Var Reconstructor::PooledLogits(const Var& queries,
                                std::span<const int> query_doc,
                                const std::vector<std::vector<HintToken>>& hints,
                                const ForwardOptions& opts) const {
  return ag::MatMulNT(Pooled(queries, query_doc, hints, opts), tok_emb_);
}

ag::RowVector Reconstructor::ReconstructLogits(
    const Matrix& queries, std::span<const HintToken> hints) const {
  Var q = queries.rows() == 0 ? FallbackQueries(1) : ag::Constant(queries);
  std::vector<int> qd(static_cast<size_t>(q.rows()), 0);
  std::vector<std::vector<HintToken>> h{{hints.begin(), hints.end()}};
  return PooledLogits(q, qd, h).value().row(0);
}

}  // namespace semindex
