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

// Self-supervised ID learning: the reconstruction, contrastive and
// commitment objectives, both warm-ups, K-means codebook initialization and
// the position-by-position training loop.

#ifndef SEMINDEX_TRAINER_HPP_
#define SEMINDEX_TRAINER_HPP_

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "semindex/autograd.hpp"
#include "semindex/corpus.hpp"
#include "semindex/idspace.hpp"
#include "semindex/model.hpp"

namespace semindex {

struct TrainConfig {
  std::vector<double> hint_ratios = {0.5, 0.3, 0.3};  // one per learned position
  int warmup_recon_epochs = 3;
  int warmup_enc_epochs = 3;
  int main_epochs = 10;
  int batch_size = 32;
  double step_size = 1e-3;
  double weight_decay = 0.01;
  double adam_eps = 1e-6;
  double beta1 = 0.9;
  double beta2 = 0.999;
  uint64_t seed = 0;
  int kmeans_iters = 50;
  int kmeans_restarts = 3;
  // Ablation switches.
  bool use_contrastive = true;
  bool use_commitment = true;
  bool use_enc_warmup = true;    // off: no codebook-free phase, no K-means
  bool use_recon_warmup = true;

  void Validate(int id_length) const;
};

nlohmann::json ToJson(const TrainConfig& c);
TrainConfig TrainConfigFromJson(const nlohmann::json& j);

// Per-document means over a batch.
struct LossReport {
  double recon = 0.0;
  double contrastive = 0.0;
  double commitment = 0.0;
  double total = 0.0;
};

// Sum over rows r and target tokens w of -log softmax(logits[r])[w].
ag::Var ReconstructionLoss(const ag::Var& pooled_logits,
                           const std::vector<std::vector<int>>& targets);

// Sum over documents d of -log(exp(h_d.h_d) / sum over in-batch d' sharing
// d's prefix of exp(h_d.h_d')). Documents alone in their prefix group add 0.
ag::Var ContrastiveLoss(const ag::Var& hidden,
                        const std::vector<std::vector<int>>& prefixes);

// Sum over documents and earlier positions j < t of
// -log P(c^j | d, c^{<j}). `decoded` is Decode's output for the frozen
// prefixes of length t-1 (t rows per document).
ag::Var CommitmentLoss(const SemanticIndexer& model, const ag::Var& decoded,
                       const std::vector<std::vector<int>>& prefixes,
                       int position);

struct AdamWOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-6;
  double weight_decay = 0.01;
};

// Decoupled weight decay. Parameters are rounded to float precision after
// every step.
class AdamW {
 public:
  AdamW(std::vector<ag::Var> params, AdamWOptions opts);
  // Applies accumulated gradients, then clears them.
  void Step();
  void ZeroGrad();

 private:
  std::vector<ag::Var> params_;
  std::vector<ag::Matrix> m_, v_;
  AdamWOptions opts_;
  long step_ = 0;
};

enum class Phase { kReconWarmup = 0, kEncoderWarmup = 1, kMain = 2 };
const char* PhaseName(Phase p);

struct BatchExample {
  const Document* doc = nullptr;
  HintMask mask;
  std::vector<int> prefix;  // frozen codes c^{<t}
};

struct ObjectiveOptions {
  Phase phase = Phase::kMain;
  int position = 1;
  bool use_contrastive = true;
  bool use_commitment = true;
  QuantizeMode quantize = QuantizeMode::kStraightThrough;
  ForwardOptions forward;
};

struct ObjectiveResult {
  ag::Var total;  // batch mean, differentiable
  LossReport report;
  std::vector<int> codes;  // argmax at the current position (main phase)
};

// Reconstruction from the learned code-free query alone.
ObjectiveResult ComputeWarmupObjective(const Reconstructor& recon,
                                       std::span<const BatchExample> batch,
                                       const ForwardOptions& forward = {});

// Batch objective for one phase; the reconstructor warm-up phase delegates
// to ComputeWarmupObjective.
ObjectiveResult ComputeObjective(const SemanticIndexer& model,
                                 const Reconstructor& recon,
                                 std::span<const BatchExample> batch,
                                 const ObjectiveOptions& opts);

// Progress through the position loop. codes[i] holds the frozen codes of
// corpus document i (length completed_positions).
struct TrainState {
  bool recon_warmed = false;
  int completed_positions = 0;
  std::vector<SemanticId> codes;
};

struct EpochLog {
  Phase phase = Phase::kMain;
  int position = 0;
  int epoch = 0;
  LossReport mean;
};

struct PositionLog {
  int position = 0;
  double perplexity = 0.0;
  std::optional<double> diff_ratio;
};

struct TrainLog {
  std::vector<EpochLog> epochs;
  std::vector<PositionLog> positions;
};

nlohmann::json ToJson(const TrainLog& log);

struct ProgressOptions {
  // Stop once this many positions are complete (-1: all).
  int stop_after_positions = -1;
  // Invoked after the reconstructor warm-up and after every position.
  std::function<void(const TrainState&)> on_stage;
};

void WarmupReconstructor(Reconstructor& recon, const Corpus& corpus,
                         const TrainConfig& cfg, TrainLog* log = nullptr);

// Trains the encoder, decoder and reconstructor with the raw h^t as the
// t-th reconstruction query.
void WarmupEncoder(SemanticIndexer& model, Reconstructor& recon,
                   const Corpus& corpus, const TrainConfig& cfg,
                   const TrainState& state, int position,
                   TrainLog* log = nullptr);

// h^t for every document under its frozen prefix (evaluation mode).
ag::Matrix HiddenStates(const SemanticIndexer& model, const Corpus& corpus,
                        const std::vector<SemanticId>& prefixes, int position,
                        int batch_size = 64);

// E^t <- K-means centroids of h^t over the corpus.
void InitCodebookKMeans(SemanticIndexer& model, const Corpus& corpus,
                        const TrainConfig& cfg, const TrainState& state,
                        int position);

void TrainPosition(SemanticIndexer& model, Reconstructor& recon,
                   const Corpus& corpus, const TrainConfig& cfg,
                   const TrainState& state, int position,
                   TrainLog* log = nullptr);

// argmax code at `position` under each document's frozen prefix.
std::vector<int> AssignPosition(const SemanticIndexer& model,
                                const Corpus& corpus,
                                const std::vector<SemanticId>& prefixes,
                                int position, int batch_size = 64);

// Runs (or resumes) the whole schedule. Phase randomness is derived from the
// seed and the phase coordinates alone, so resuming from a saved state
// gives the same result as an uninterrupted run.
TrainState TrainProgressive(SemanticIndexer& model, Reconstructor& recon,
                            const Corpus& corpus, const TrainConfig& cfg,
                            TrainState state = {}, TrainLog* log = nullptr,
                            const ProgressOptions& progress = {});

// Learned codes as an ID table in corpus order.
IdTable LearnedIdTable(const Corpus& corpus, const TrainState& state);

// Appends the disambiguation suffix and adds a suffix codebook sized to the
// largest duplicate group.
IdTable FinalizeIds(SemanticIndexer& model, const Corpus& corpus,
                    const TrainState& state, uint64_t seed);

// Reconstruction quality with the frozen codes as queries: each document
// predicts its top-m tokens (m = distinct masked tokens) and per-token F1 is
// macro-averaged.
double ReconstructionMacroF1(const SemanticIndexer& model,
                             const Reconstructor& recon, const Corpus& corpus,
                             const TrainState& state, double hint_ratio,
                             uint64_t seed);

}  // namespace semindex

#endif  // SEMINDEX_TRAINER_HPP_
