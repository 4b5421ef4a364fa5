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

// The semantic indexer: a bidirectional Transformer encoder over document
// tokens, an autoregressive decoder over ID codes with cross-attention, one
// codebook per ID position, and the shallow reconstructor used as the
// self-supervision signal.

#ifndef SEMINDEX_MODEL_HPP_
#define SEMINDEX_MODEL_HPP_

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "semindex/autograd.hpp"

namespace semindex {

struct ModelConfig {
  int dim = 64;
  int enc_layers = 2;
  int dec_layers = 1;
  int heads = 4;
  std::vector<int> codebook_sizes = {512, 512, 512};  // K_1..K_T
  int vocab_size = 0;
  int max_doc_len = 128;
  int recon_layers = 1;
  int ffn_mult = 4;
  double dropout = 0.0;
  uint64_t init_seed = 0;

  int id_length() const { return static_cast<int>(codebook_sizes.size()); }
  // Throws ValidationError on violated invariants.
  void Validate() const;
};

nlohmann::json ToJson(const ModelConfig& c);
ModelConfig ModelConfigFromJson(const nlohmann::json& j);

// Every parameter values is kept representable as a 32-bit float so that
// checkpoints (stored as f32) round-trip bitwise.
void RoundToFloat(ag::Matrix& m);

struct NamedParameter {
  std::string name;
  ag::Var var;
};

class ParameterSet {
 public:
  ag::Var Add(std::string name, ag::Matrix init);
  const std::vector<NamedParameter>& items() const { return items_; }
  const NamedParameter* Find(const std::string& name) const;
  void SetTrainable(bool on);
  void Append(const ParameterSet& other);
  size_t NumScalars() const;

 private:
  std::vector<NamedParameter> items_;
};

struct ForwardOptions {
  bool training = false;          // enables dropout
  std::mt19937_64* rng = nullptr;  // required when training with dropout
};

struct LayerNormParams {
  ag::Var gain;
  ag::Var bias;
  ag::Var Apply(const ag::Var& x) const;
};

struct LinearParams {
  ag::Var weight;  // in x out
  ag::Var bias;    // 1 x out
  ag::Var Apply(const ag::Var& x) const;
};

struct AttentionParams {
  LinearParams q, k, v, o;
  int heads = 1;
  ag::Var Apply(const ag::Var& queries, const ag::Var& keys,
                std::span<const ag::KeyRange> ranges) const;
};

struct FeedForwardParams {
  LinearParams up, down;
  ag::Var Apply(const ag::Var& x) const;
};

struct CodeDistribution {
  std::vector<double> probs;
  int chosen = 0;
};

// Softmax over h . e_j; chosen is the argmax with lowest-index tie-break.
CodeDistribution CodeLookup(std::span<const double> h,
                            const ag::Matrix& codebook);

enum class QuantizeMode {
  kStraightThrough,  // hard forward, softmax-mixture backward
  kSoft,             // mixture in both directions (gradient checks)
};

struct Quantized {
  ag::Var embedding;       // rows x D
  std::vector<int> codes;  // argmax per row
};

// Per-row quantization of h against codebook E (K x D).
Quantized Quantize(const ag::Var& h, const ag::Var& codebook,
                   QuantizeMode mode = QuantizeMode::kStraightThrough);

struct EncodedBatch {
  ag::Var memory;                      // sum of doc lengths x D
  std::vector<ag::KeyRange> doc_rows;  // rows of each document in memory
};

struct Codebook {
  int position = 0;  // 1-based ID position
  ag::Var embeddings;
  bool initialized = false;
};

class SemanticIndexer {
 public:
  explicit SemanticIndexer(ModelConfig config);

  const ModelConfig& config() const { return config_; }
  int dim() const { return config_.dim; }
  // Learned ID positions.
  int id_length() const { return config_.id_length(); }
  // Learned positions plus the disambiguation suffix when present.
  int full_id_length() const { return static_cast<int>(codebooks_.size()); }
  int suffix_size() const { return suffix_size_; }

  Codebook& codebook(int position);  // 1-based
  const Codebook& codebook(int position) const;
  int codebook_size(int position) const;

  // Adds (or resizes) the codebook of the suffix position.
  void EnsureSuffixCodebook(int size, uint64_t seed);

  EncodedBatch Encode(std::span<const std::vector<int>> docs,
                      const ForwardOptions& opts = {}) const;

  // Runs the decoder for sequences s = 0..S-1 that all carry a prefix of the
  // same length L; sequence s cross-attends to memory document
  // memory_doc[s]. Returns S*(L+1) rows; row s*(L+1)+j is the hidden state
  // h^{j+1} used to score ID position j+1.
  ag::Var Decode(const EncodedBatch& enc, std::span<const int> memory_doc,
                 const std::vector<std::vector<int>>& prefixes,
                 const ForwardOptions& opts = {}) const;

  // h^t for a single document given prefix c^{<t} (evaluation mode).
  ag::RowVector HiddenState(std::span<const int> tokens,
                            std::span<const int> prefix) const;

  // Logits h . E^t for every row of h.
  ag::Var CodeLogits(const ag::Var& h, int position) const;

  ParameterSet& encoder_params() { return encoder_; }
  ParameterSet& decoder_params() { return decoder_; }
  ParameterSet& codebook_params(int position);
  // Every parameter in checkpoint order.
  ParameterSet AllParameters() const;

 private:
  ag::Var EncoderLayer(int layer, const ag::Var& x,
                       std::span<const ag::KeyRange> ranges,
                       const ForwardOptions& opts) const;

  ModelConfig config_;
  ParameterSet encoder_;
  ParameterSet decoder_;
  std::vector<ParameterSet> codebook_sets_;
  std::vector<Codebook> codebooks_;
  int suffix_size_ = 0;

  ag::Var tok_emb_, enc_pos_;
  struct EncLayer {
    LayerNormParams ln1, ln2;
    AttentionParams attn;
    FeedForwardParams ffn;
  };
  std::vector<EncLayer> enc_layers_;
  LayerNormParams enc_final_;

  ag::Var bos_, dec_pos_;
  struct DecLayer {
    LayerNormParams ln1, ln2, ln3;
    AttentionParams self_attn, cross_attn;
    FeedForwardParams ffn;
  };
  std::vector<DecLayer> dec_layers_;
  LayerNormParams dec_final_;
};

// Greedy sequential argmax for positions 1..upto. Throws StateError when a
// requested position has no initialized codebook.
std::vector<int> AssignSemanticId(const SemanticIndexer& model,
                                  std::span<const int> tokens, int upto);
// Batched equivalent over many documents.
std::vector<std::vector<int>> AssignSemanticIds(
    const SemanticIndexer& model, std::span<const std::vector<int>> docs,
    int upto, int batch_size = 64);

struct HintToken {
  int token = 0;
  int position = 0;  // position in the original document
};

class Reconstructor {
 public:
  explicit Reconstructor(const ModelConfig& config);

  // Cross-attends every query row to the hints of its document, sums the
  // per-query outputs of each document into z and returns W z for each
  // document (num_docs x vocab). query_doc[i] names the document of row i.
  ag::Var PooledLogits(const ag::Var& queries, std::span<const int> query_doc,
                       const std::vector<std::vector<HintToken>>& hints,
                       const ForwardOptions& opts = {}) const;

  // The pooled vector z (before the vocabulary projection).
  ag::Var Pooled(const ag::Var& queries, std::span<const int> query_doc,
                 const std::vector<std::vector<HintToken>>& hints,
                 const ForwardOptions& opts = {}) const;

  // `count` copies of the learned code-free query.
  ag::Var FallbackQueries(int count) const;

  // Single-document convenience: queries as rows (may be empty, in which
  // case the fallback query is used).
  ag::RowVector ReconstructLogits(const ag::Matrix& queries,
                                  std::span<const HintToken> hints) const;

  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }
  int vocab_size() const { return vocab_size_; }

 private:
  int vocab_size_;
  int max_len_;
  double dropout_;
  ParameterSet params_;
  ag::Var tok_emb_, pos_emb_, fallback_;
  struct Layer {
    LayerNormParams ln_q, ln_kv, ln2;
    AttentionParams attn;
    FeedForwardParams ffn;
  };
  std::vector<Layer> layers_;
  LayerNormParams final_;
};

std::vector<HintToken> HintTokens(std::span<const int> tokens,
                                  std::span<const int> hint_indices);

}  // namespace semindex

#endif  // SEMINDEX_MODEL_HPP_
