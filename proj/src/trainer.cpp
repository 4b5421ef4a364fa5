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

#include "semindex/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include "semindex/errors.hpp"
#include "semindex/kmeans.hpp"
#include "semindex/metrics.hpp"
#include "semindex/seed.hpp"

namespace semindex {

using ag::Matrix;
using ag::Var;

namespace {

// Stream tags for MixSeed.
constexpr uint64_t kShuffleTag = 1;
constexpr uint64_t kHintTag = 2;
constexpr uint64_t kDropoutTag = 3;
constexpr uint64_t kKMeansTag = 4;
constexpr uint64_t kSuffixTag = 5;
constexpr uint64_t kEvalTag = 6;

Var Zero() { return ag::Scalar(0.0); }

std::vector<int> Iota(size_t n) {
  std::vector<int> v(n);
  std::iota(v.begin(), v.end(), 0);
  return v;
}

HintMask MaskFor(const Document& doc, double ratio, uint64_t seed) {
  if (doc.tokens.size() < 2) return HintMask{};
  return SampleHints(doc, ratio, seed);
}

}  // namespace

void TrainConfig::Validate(int id_length) const {
  if (static_cast<int>(hint_ratios.size()) != id_length) {
    throw ValidationError("hint ratios: expected " + std::to_string(id_length) +
                          " values, got " + std::to_string(hint_ratios.size()));
  }
  for (double r : hint_ratios)
    if (!(r >= 0.0 && r < 1.0)) throw ValidationError("hint ratios must lie in [0, 1)");
  if (warmup_recon_epochs < 0 || warmup_enc_epochs < 0 || main_epochs < 0) {
    throw ValidationError("epoch counts must be >= 0");
  }
  if (batch_size < 2) throw ValidationError("batch size must be >= 2");
  if (!(step_size > 0.0)) throw ValidationError("step size must be positive");
  if (weight_decay < 0.0) throw ValidationError("weight decay must be >= 0");
  if (!(adam_eps > 0.0)) throw ValidationError("adam eps must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) {
    throw ValidationError("adam betas must lie in [0, 1)");
  }
  if (kmeans_iters < 1 || kmeans_restarts < 1) {
    throw ValidationError("kmeans iterations and restarts must be >= 1");
  }
}

nlohmann::json ToJson(const TrainConfig& c) {
  return {{"hint_ratios", c.hint_ratios},
          {"warmup_recon_epochs", c.warmup_recon_epochs},
          {"warmup_enc_epochs", c.warmup_enc_epochs},
          {"main_epochs", c.main_epochs},
          {"batch_size", c.batch_size},
          {"step_size", c.step_size},
          {"weight_decay", c.weight_decay},
          {"adam_eps", c.adam_eps},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"seed", c.seed},
          {"kmeans_iters", c.kmeans_iters},
          {"kmeans_restarts", c.kmeans_restarts},
          {"use_contrastive", c.use_contrastive},
          {"use_commitment", c.use_commitment},
          {"use_enc_warmup", c.use_enc_warmup},
          {"use_recon_warmup", c.use_recon_warmup}};
}

TrainConfig TrainConfigFromJson(const nlohmann::json& j) {
  TrainConfig c;
  try {
    c.hint_ratios = j.at("hint_ratios").get<std::vector<double>>();
    c.warmup_recon_epochs = j.at("warmup_recon_epochs").get<int>();
    c.warmup_enc_epochs = j.at("warmup_enc_epochs").get<int>();
    c.main_epochs = j.at("main_epochs").get<int>();
    c.batch_size = j.at("batch_size").get<int>();
    c.step_size = j.at("step_size").get<double>();
    c.weight_decay = j.at("weight_decay").get<double>();
    c.adam_eps = j.at("adam_eps").get<double>();
    c.beta1 = j.at("beta1").get<double>();
    c.beta2 = j.at("beta2").get<double>();
    c.seed = j.at("seed").get<uint64_t>();
    c.kmeans_iters = j.at("kmeans_iters").get<int>();
    c.kmeans_restarts = j.at("kmeans_restarts").get<int>();
    c.use_contrastive = j.at("use_contrastive").get<bool>();
    c.use_commitment = j.at("use_commitment").get<bool>();
    c.use_enc_warmup = j.at("use_enc_warmup").get<bool>();
    c.use_recon_warmup = j.at("use_recon_warmup").get<bool>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("train config: ") + e.what());
  }
  return c;
}

Var ReconstructionLoss(const Var& pooled_logits,
                       const std::vector<std::vector<int>>& targets) {
  if (static_cast<Eigen::Index>(targets.size()) != pooled_logits.rows()) {
    throw ContractError("reconstruction loss: one target list per row");
  }
  std::vector<ag::Pick> picks;
  for (size_t r = 0; r < targets.size(); ++r) {
    if (targets[r].empty()) throw ContractError("reconstruction loss: empty target set");
    for (int w : targets[r]) picks.push_back({static_cast<int>(r), w});
  }
  return ag::SoftmaxNll(pooled_logits, picks);
}

Var ContrastiveLoss(const Var& hidden,
                    const std::vector<std::vector<int>>& prefixes) {
  const Eigen::Index n = hidden.rows();
  if (static_cast<Eigen::Index>(prefixes.size()) != n) {
    throw ContractError("contrastive loss: one prefix per row");
  }
  if (n == 0) return Zero();
  Var sim = ag::MatMulNT(hidden, hidden);
  std::vector<uint8_t> allowed(static_cast<size_t>(n * n), 0);
  std::vector<ag::Pick> picks;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j)
      allowed[static_cast<size_t>(i * n + j)] =
          prefixes[static_cast<size_t>(i)] == prefixes[static_cast<size_t>(j)];
    picks.push_back({static_cast<int>(i), static_cast<int>(i)});
  }
  return ag::SoftmaxNll(sim, picks, allowed);
}

Var CommitmentLoss(const SemanticIndexer& model, const Var& decoded,
                   const std::vector<std::vector<int>>& prefixes,
                   int position) {
  if (position < 2) return Zero();
  const int rows_per = position;
  const size_t n = prefixes.size();
  if (decoded.rows() != static_cast<Eigen::Index>(n) * rows_per) {
    throw ContractError("commitment loss: decoder output does not match prefixes");
  }
  Var total = Zero();
  for (int j = 1; j < position; ++j) {
    std::vector<int> rows(n);
    std::vector<ag::Pick> picks(n);
    for (size_t s = 0; s < n; ++s) {
      if (static_cast<int>(prefixes[s].size()) != position - 1) {
        throw ContractError("commitment loss: prefix length must be position-1");
      }
      rows[s] = static_cast<int>(s) * rows_per + (j - 1);
      picks[s] = {static_cast<int>(s), prefixes[s][static_cast<size_t>(j - 1)]};
    }
    Var logits = model.CodeLogits(ag::GatherRows(decoded, rows), j);
    total = ag::Add(total, ag::SoftmaxNll(logits, picks));
  }
  return total;
}

AdamW::AdamW(std::vector<Var> params, AdamWOptions opts)
    : params_(std::move(params)), opts_(opts) {
  for (const auto& p : params_) {
    m_.push_back(Matrix::Zero(p.rows(), p.cols()));
    v_.push_back(Matrix::Zero(p.rows(), p.cols()));
  }
}

void AdamW::Step() {
  ++step_;
  const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(step_));
  for (size_t i = 0; i < params_.size(); ++i) {
    Var& p = params_[i];
    if (!p.node()->HasGrad()) continue;
    const Matrix& g = p.grad();
    if (!g.allFinite()) throw NumericError("optimizer: non-finite gradient");
    m_[i] = opts_.beta1 * m_[i] + (1.0 - opts_.beta1) * g;
    v_[i] = opts_.beta2 * v_[i] + (1.0 - opts_.beta2) * g.cwiseProduct(g);
    Matrix& w = p.mutable_value();
    w *= 1.0 - opts_.lr * opts_.weight_decay;
    w.array() -= opts_.lr * (m_[i].array() / bc1) /
                 ((v_[i].array() / bc2).sqrt() + opts_.eps);
    RoundToFloat(w);
    p.ZeroGrad();
  }
}

void AdamW::ZeroGrad() {
  for (auto& p : params_) p.ZeroGrad();
}

const char* PhaseName(Phase p) {
  switch (p) {
    case Phase::kReconWarmup: return "recon_warmup";
    case Phase::kEncoderWarmup: return "encoder_warmup";
    case Phase::kMain: return "main";
  }
  return "unknown";
}

namespace {

// Documents that received at least one hint and one target take part in
// the reconstruction term.
struct ReconInputs {
  std::vector<int> rows;  // batch indices
  std::vector<std::vector<HintToken>> hints;
  std::vector<std::vector<int>> targets;
};

ReconInputs CollectReconInputs(std::span<const BatchExample> batch) {
  ReconInputs in;
  for (size_t i = 0; i < batch.size(); ++i) {
    const auto& ex = batch[i];
    if (ex.mask.hint_indices.empty() || ex.mask.target_indices.empty()) continue;
    in.rows.push_back(static_cast<int>(i));
    in.hints.push_back(HintTokens(ex.doc->tokens, ex.mask.hint_indices));
    std::vector<int> tg;
    tg.reserve(ex.mask.target_indices.size());
    for (int k : ex.mask.target_indices) tg.push_back(ex.doc->tokens[static_cast<size_t>(k)]);
    in.targets.push_back(std::move(tg));
  }
  return in;
}

ObjectiveResult Finish(Var recon_sum, Var contr_sum, Var commit_sum, size_t b) {
  ObjectiveResult res;
  const double inv = 1.0 / static_cast<double>(b);
  res.total = ag::Scale(ag::Add(ag::Add(recon_sum, contr_sum), commit_sum), inv);
  res.report.recon = recon_sum.scalar() * inv;
  res.report.contrastive = contr_sum.scalar() * inv;
  res.report.commitment = commit_sum.scalar() * inv;
  res.report.total = res.total.scalar();
  if (!std::isfinite(res.report.total)) throw NumericError("objective: non-finite loss");
  return res;
}

}  // namespace

ObjectiveResult ComputeWarmupObjective(const Reconstructor& recon,
                                       std::span<const BatchExample> batch,
                                       const ForwardOptions& forward) {
  if (batch.empty()) throw ContractError("objective: empty batch");
  const ReconInputs in = CollectReconInputs(batch);
  Var recon_sum = Zero();
  if (!in.rows.empty()) {
    const int n = static_cast<int>(in.rows.size());
    Var logits = recon.PooledLogits(recon.FallbackQueries(n), Iota(in.rows.size()),
                                    in.hints, forward);
    recon_sum = ReconstructionLoss(logits, in.targets);
  }
  return Finish(recon_sum, Zero(), Zero(), batch.size());
}

ObjectiveResult ComputeObjective(const SemanticIndexer& model,
                                 const Reconstructor& recon,
                                 std::span<const BatchExample> batch,
                                 const ObjectiveOptions& opts) {
  if (opts.phase == Phase::kReconWarmup) {
    return ComputeWarmupObjective(recon, batch, opts.forward);
  }
  const size_t b = batch.size();
  if (b == 0) throw ContractError("objective: empty batch");
  const int t = opts.position;
  if (t < 1 || t > model.id_length()) throw ContractError("objective: position out of range");

  const ReconInputs in = CollectReconInputs(batch);
  const auto& recon_rows = in.rows;
  const int n_recon = static_cast<int>(recon_rows.size());
  Var recon_sum = Zero(), contr_sum = Zero(), commit_sum = Zero();
  Var queries;
  std::vector<int> query_doc;
  std::vector<int> codes_out;
  {
    std::vector<std::vector<int>> docs;
    std::vector<std::vector<int>> prefixes;
    docs.reserve(b);
    for (const auto& ex : batch) {
      if (static_cast<int>(ex.prefix.size()) != t - 1) {
        throw ContractError("objective: prefix length must be position-1");
      }
      docs.push_back(ex.doc->tokens);
      prefixes.push_back(ex.prefix);
    }
    EncodedBatch enc = model.Encode(docs, opts.forward);
    const std::vector<int> md = Iota(b);
    Var dec = model.Decode(enc, md, prefixes, opts.forward);
    std::vector<int> last(b);
    for (size_t s = 0; s < b; ++s) last[s] = static_cast<int>(s) * t + (t - 1);
    Var h = ag::GatherRows(dec, last);

    Var current = h;
    if (opts.phase == Phase::kMain) {
      const Codebook& cb = model.codebook(t);
      if (!cb.initialized) throw StateError("objective: codebook not initialized");
      Quantized q = Quantize(h, cb.embeddings, opts.quantize);
      current = q.embedding;
      codes_out = q.codes;
    }

    if (n_recon > 0) {
      // Query blocks: frozen code embeddings for j < t, then the current
      // position's query; block j row s holds document s.
      std::vector<Var> blocks;
      for (int j = 1; j < t; ++j) {
        std::vector<int> codes(b);
        for (size_t s = 0; s < b; ++s) codes[s] = prefixes[s][static_cast<size_t>(j - 1)];
        blocks.push_back(ag::GatherRows(model.codebook(j).embeddings, codes));
      }
      blocks.push_back(current);
      Var all = ag::ConcatRows(blocks);
      std::vector<int> pick;
      for (int r = 0; r < n_recon; ++r) {
        for (int j = 0; j < t; ++j) {
          pick.push_back(j * static_cast<int>(b) + recon_rows[static_cast<size_t>(r)]);
          query_doc.push_back(r);
        }
      }
      queries = ag::GatherRows(all, pick);
    }
    if (opts.use_contrastive) contr_sum = ContrastiveLoss(h, prefixes);
    if (opts.use_commitment) commit_sum = CommitmentLoss(model, dec, prefixes, t);
  }

  if (n_recon > 0) {
    Var logits = recon.PooledLogits(queries, query_doc, in.hints, opts.forward);
    recon_sum = ReconstructionLoss(logits, in.targets);
  }
  ObjectiveResult res = Finish(recon_sum, contr_sum, commit_sum, b);
  res.codes = std::move(codes_out);
  return res;
}

namespace {

AdamWOptions OptimizerOptions(const TrainConfig& cfg) {
  return {cfg.step_size, cfg.beta1, cfg.beta2, cfg.adam_eps, cfg.weight_decay};
}

void Accumulate(LossReport& acc, const LossReport& r, double w) {
  acc.recon += r.recon * w;
  acc.contrastive += r.contrastive * w;
  acc.commitment += r.commitment * w;
  acc.total += r.total * w;
}

void FreezeAll(SemanticIndexer& model, Reconstructor& recon) {
  model.encoder_params().SetTrainable(false);
  model.decoder_params().SetTrainable(false);
  for (int p = 1; p <= model.full_id_length(); ++p) model.codebook_params(p).SetTrainable(false);
  recon.params().SetTrainable(false);
}

std::vector<Var> Vars(const std::vector<ParameterSet*>& sets) {
  std::vector<Var> out;
  for (auto* s : sets) {
    s->SetTrainable(true);
    for (const auto& np : s->items()) out.push_back(np.var);
  }
  return out;
}

// One phase: `epochs` passes over the corpus with a fresh optimizer.
void RunPhase(const SemanticIndexer* model, Reconstructor& recon,
              const Corpus& corpus, const TrainConfig& cfg,
              const TrainState& state, Phase phase, int position, int epochs,
              std::vector<Var> trainable, TrainLog* log) {
  if (epochs == 0) return;
  AdamW opt(std::move(trainable), OptimizerOptions(cfg));
  const double ratio = cfg.hint_ratios[static_cast<size_t>(position - 1)];
  const auto ph = static_cast<uint64_t>(phase);
  const auto pos = static_cast<uint64_t>(position);
  for (int epoch = 0; epoch < epochs; ++epoch) {
    const auto ep = static_cast<uint64_t>(epoch);
    std::vector<int> order = Iota(corpus.size());
    std::mt19937_64 shuffle_rng(MixSeed(cfg.seed, {kShuffleTag, ph, pos, ep}));
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    std::mt19937_64 drop_rng(MixSeed(cfg.seed, {kDropoutTag, ph, pos, ep}));
    LossReport acc;
    for (size_t begin = 0; begin < order.size(); begin += static_cast<size_t>(cfg.batch_size)) {
      const size_t end = std::min(order.size(), begin + static_cast<size_t>(cfg.batch_size));
      std::vector<BatchExample> batch;
      for (size_t k = begin; k < end; ++k) {
        const size_t di = static_cast<size_t>(order[k]);
        BatchExample ex;
        ex.doc = &corpus.document(di);
        ex.mask = MaskFor(*ex.doc, ratio,
                          MixSeed(cfg.seed, {kHintTag, ph, pos, ep, static_cast<uint64_t>(di)}));
        if (phase != Phase::kReconWarmup) {
          const auto& c = state.codes[di];
          ex.prefix.assign(c.begin(), c.begin() + (position - 1));
        }
        batch.push_back(std::move(ex));
      }
      ObjectiveOptions oo;
      oo.phase = phase;
      oo.position = position;
      oo.use_contrastive = cfg.use_contrastive;
      oo.use_commitment = cfg.use_commitment;
      oo.forward = {true, &drop_rng};
      ObjectiveResult r = model ? ComputeObjective(*model, recon, batch, oo)
                                : ComputeWarmupObjective(recon, batch, oo.forward);
      if (r.total.requires_grad()) {
        ag::Backward(r.total);
        opt.Step();
      }
      Accumulate(acc, r.report, static_cast<double>(batch.size()));
    }
    const double inv = 1.0 / static_cast<double>(corpus.size());
    acc.recon *= inv;
    acc.contrastive *= inv;
    acc.commitment *= inv;
    acc.total *= inv;
    if (log) log->epochs.push_back({phase, position, epoch, acc});
  }
  opt.ZeroGrad();
}

void CheckState(const SemanticIndexer& model, const Corpus& corpus,
                const TrainState& state, int position) {
  if (position < 1 || position > model.id_length()) {
    throw ContractError("training position out of range");
  }
  if (state.completed_positions != position - 1) {
    throw StateError("position " + std::to_string(position) +
                     " requires all earlier positions to be complete");
  }
  if (position > 1 && state.codes.size() != corpus.size()) {
    throw StateError("frozen codes do not cover the corpus");
  }
}

}  // namespace

void WarmupReconstructor(Reconstructor& recon, const Corpus& corpus,
                         const TrainConfig& cfg, TrainLog* log) {
  recon.params().SetTrainable(true);
  std::vector<Var> params;
  for (const auto& np : recon.params().items()) params.push_back(np.var);
  TrainState none;
  // Uses the hint ratio of the first position.
  RunPhase(nullptr, recon, corpus, cfg, none, Phase::kReconWarmup, 1,
           cfg.warmup_recon_epochs, std::move(params), log);
}

void WarmupEncoder(SemanticIndexer& model, Reconstructor& recon,
                   const Corpus& corpus, const TrainConfig& cfg,
                   const TrainState& state, int position, TrainLog* log) {
  CheckState(model, corpus, state, position);
  FreezeAll(model, recon);
  auto params = Vars({&model.encoder_params(), &model.decoder_params(), &recon.params()});
  RunPhase(&model, recon, corpus, cfg, state, Phase::kEncoderWarmup, position,
           cfg.warmup_enc_epochs, std::move(params), log);
  FreezeAll(model, recon);
}

Matrix HiddenStates(const SemanticIndexer& model, const Corpus& corpus,
                    const std::vector<SemanticId>& prefixes, int position,
                    int batch_size) {
  if (position > 1 && prefixes.size() != corpus.size()) {
    throw ContractError("hidden states: one prefix per document required");
  }
  Matrix out(static_cast<Eigen::Index>(corpus.size()), model.dim());
  batch_size = std::max(1, batch_size);
  for (size_t begin = 0; begin < corpus.size(); begin += static_cast<size_t>(batch_size)) {
    const size_t end = std::min(corpus.size(), begin + static_cast<size_t>(batch_size));
    std::vector<std::vector<int>> docs, pre;
    for (size_t i = begin; i < end; ++i) {
      docs.push_back(corpus.document(i).tokens);
      if (position > 1) {
        pre.emplace_back(prefixes[i].begin(), prefixes[i].begin() + (position - 1));
      } else {
        pre.emplace_back();
      }
    }
    EncodedBatch enc = model.Encode(docs);
    const std::vector<int> md = Iota(docs.size());
    Var dec = model.Decode(enc, md, pre);
    for (size_t s = 0; s < docs.size(); ++s)
      out.row(static_cast<Eigen::Index>(begin + s)) =
          dec.value().row(static_cast<Eigen::Index>(s) * position + (position - 1));
  }
  return out;
}

void InitCodebookKMeans(SemanticIndexer& model, const Corpus& corpus,
                        const TrainConfig& cfg, const TrainState& state,
                        int position) {
  CheckState(model, corpus, state, position);
  const Matrix h = HiddenStates(model, corpus, state.codes, position);
  const int k = model.codebook_size(position);
  KMeansResult km = KMeans(h, k, cfg.kmeans_iters, cfg.kmeans_restarts,
                           MixSeed(cfg.seed, {kKMeansTag, static_cast<uint64_t>(position)}));
  Codebook& cb = model.codebook(position);
  cb.embeddings.mutable_value() = km.centroids;
  RoundToFloat(cb.embeddings.mutable_value());
  cb.initialized = true;
}

void TrainPosition(SemanticIndexer& model, Reconstructor& recon,
                   const Corpus& corpus, const TrainConfig& cfg,
                   const TrainState& state, int position, TrainLog* log) {
  CheckState(model, corpus, state, position);
  if (!model.codebook(position).initialized) {
    throw StateError("codebook " + std::to_string(position) + " is not initialized");
  }
  FreezeAll(model, recon);
  auto params = Vars({&model.encoder_params(), &model.decoder_params(),
                      &model.codebook_params(position), &recon.params()});
  RunPhase(&model, recon, corpus, cfg, state, Phase::kMain, position,
           cfg.main_epochs, std::move(params), log);
  FreezeAll(model, recon);
}

std::vector<int> AssignPosition(const SemanticIndexer& model,
                                const Corpus& corpus,
                                const std::vector<SemanticId>& prefixes,
                                int position, int batch_size) {
  if (!model.codebook(position).initialized) {
    throw StateError("codebook " + std::to_string(position) + " is not initialized");
  }
  const Matrix h = HiddenStates(model, corpus, prefixes, position, batch_size);
  const Matrix logits = h * model.codebook(position).embeddings.value().transpose();
  std::vector<int> out(corpus.size());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    Eigen::Index arg = 0;
    for (Eigen::Index c = 1; c < logits.cols(); ++c)
      if (logits(r, c) > logits(r, arg)) arg = c;
    out[static_cast<size_t>(r)] = static_cast<int>(arg);
  }
  return out;
}

nlohmann::json ToJson(const TrainLog& log) {
  nlohmann::json epochs = nlohmann::json::array();
  for (const auto& e : log.epochs) {
    epochs.push_back({{"phase", PhaseName(e.phase)},
                      {"position", e.position},
                      {"epoch", e.epoch},
                      {"recon", e.mean.recon},
                      {"contrastive", e.mean.contrastive},
                      {"commitment", e.mean.commitment},
                      {"total", e.mean.total}});
  }
  nlohmann::json positions = nlohmann::json::array();
  for (const auto& p : log.positions) {
    nlohmann::json j = {{"position", p.position}, {"perplexity", p.perplexity}};
    j["diff_ratio"] = p.diff_ratio ? nlohmann::json(*p.diff_ratio) : nlohmann::json(nullptr);
    positions.push_back(j);
  }
  return {{"epochs", epochs}, {"positions", positions}};
}

TrainState TrainProgressive(SemanticIndexer& model, Reconstructor& recon,
                            const Corpus& corpus, const TrainConfig& cfg,
                            TrainState state, TrainLog* log,
                            const ProgressOptions& progress) {
  cfg.Validate(model.id_length());
  if (corpus.size() == 0) throw ValidationError("training corpus is empty");
  if (recon.vocab_size() != model.config().vocab_size) {
    throw ContractError("reconstructor and indexer vocabularies differ");
  }
  if (state.codes.empty()) state.codes.assign(corpus.size(), {});
  if (state.codes.size() != corpus.size()) {
    throw StateError("resumed state does not match the corpus size");
  }
  const int last = progress.stop_after_positions < 0
                       ? model.id_length()
                       : std::min(progress.stop_after_positions, model.id_length());

  if (!state.recon_warmed) {
    if (cfg.use_recon_warmup) WarmupReconstructor(recon, corpus, cfg, log);
    state.recon_warmed = true;
    if (progress.on_stage) progress.on_stage(state);
  }
  for (int t = state.completed_positions + 1; t <= last; ++t) {
    if (cfg.use_enc_warmup) {
      WarmupEncoder(model, recon, corpus, cfg, state, t, log);
      InitCodebookKMeans(model, corpus, cfg, state, t);
    } else {
      model.codebook(t).initialized = true;  // keeps its random initialization
    }
    TrainPosition(model, recon, corpus, cfg, state, t, log);
    const std::vector<int> codes = AssignPosition(model, corpus, state.codes, t);
    for (size_t i = 0; i < corpus.size(); ++i) state.codes[i].push_back(codes[i]);
    state.completed_positions = t;
    if (log) {
      PositionLog pl;
      pl.position = t;
      pl.perplexity = IdPerplexity(codes);
      if (t >= 2) pl.diff_ratio = DiffRatio(state.codes, t);
      log->positions.push_back(pl);
    }
    if (progress.on_stage) progress.on_stage(state);
  }
  return state;
}

IdTable LearnedIdTable(const Corpus& corpus, const TrainState& state) {
  if (state.codes.size() != corpus.size()) {
    throw StateError("learned codes do not cover the corpus");
  }
  std::vector<std::string> ids;
  for (const auto& d : corpus.documents()) ids.push_back(d.doc_id);
  return IdTable(std::move(ids), state.codes);
}

IdTable FinalizeIds(SemanticIndexer& model, const Corpus& corpus,
                    const TrainState& state, uint64_t seed) {
  if (state.completed_positions != model.id_length()) {
    throw StateError("cannot finalize IDs before every position is trained");
  }
  IdTable full = Disambiguate(LearnedIdTable(corpus, state));
  model.EnsureSuffixCodebook(MaxGroupSize(LearnedIdTable(corpus, state)),
                             MixSeed(seed, {kSuffixTag}));
  return full;
}

double ReconstructionMacroF1(const SemanticIndexer& model,
                             const Reconstructor& recon, const Corpus& corpus,
                             const TrainState& state, double hint_ratio,
                             uint64_t seed) {
  const int t = state.completed_positions;
  std::vector<std::set<int>> predicted, truth;
  for (size_t i = 0; i < corpus.size(); ++i) {
    const Document& doc = corpus.document(i);
    const HintMask mask = MaskFor(doc, hint_ratio, MixSeed(seed, {kEvalTag, i}));
    if (mask.hint_indices.empty() || mask.target_indices.empty()) continue;
    Matrix queries(t, model.dim());
    for (int j = 1; j <= t; ++j)
      queries.row(j - 1) =
          model.codebook(j).embeddings.value().row(state.codes[i][static_cast<size_t>(j - 1)]);
    const auto hints = HintTokens(doc.tokens, mask.hint_indices);
    ag::RowVector logits = recon.ReconstructLogits(queries, hints);
    std::set<int> tr;
    for (int k : mask.target_indices) tr.insert(doc.tokens[static_cast<size_t>(k)]);
    std::vector<int> order = Iota(static_cast<size_t>(logits.size()));
    order.erase(std::remove(order.begin(), order.end(), kPadIndex), order.end());
    const size_t m = std::min(tr.size(), order.size());
    std::partial_sort(order.begin(), order.begin() + static_cast<long>(m), order.end(),
                      [&](int a, int b) {
                        return logits(a) > logits(b) || (logits(a) == logits(b) && a < b);
                      });
    predicted.emplace_back(order.begin(), order.begin() + static_cast<long>(m));
    truth.push_back(std::move(tr));
  }
  if (truth.empty()) throw ValidationError("macro F1: no document has both hints and targets");
  return MacroF1(predicted, truth);
}

}  // namespace semindex
