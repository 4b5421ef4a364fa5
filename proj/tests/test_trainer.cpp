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

#include <cmath>
#include <random>
#include <set>

#include "doctest.h"
#include "semindex/errors.hpp"
#include "semindex/metrics.hpp"
#include "semindex/trainer.hpp"
#include "test_util.hpp"

using namespace semindex;
using ag::Matrix;
using semindex::testing::RandomMatrix;

namespace {

ModelConfig SmallConfig(const Corpus& c, std::vector<int> sizes) {
  ModelConfig m;
  m.dim = 16;
  m.heads = 2;
  m.enc_layers = 1;
  m.codebook_sizes = std::move(sizes);
  m.vocab_size = c.vocabulary().size();
  m.max_doc_len = 64;
  m.init_seed = 4;
  return m;
}

Corpus SmallCorpus(uint64_t seed = 3) {
  SynthOptions o;
  o.top = 2;
  o.sub_per_top = 2;
  o.docs_per_leaf = 6;
  o.doc_len = 12;
  o.seed = seed;
  return SynthCorpus(o);
}

TrainConfig QuickConfig() {
  TrainConfig t;
  t.hint_ratios = {0.3, 0.2};
  t.warmup_recon_epochs = 1;
  t.warmup_enc_epochs = 1;
  t.main_epochs = 2;
  t.batch_size = 8;
  t.kmeans_iters = 10;
  t.kmeans_restarts = 1;
  t.seed = 9;
  return t;
}

std::vector<Matrix> Snapshot(const SemanticIndexer& m, const Reconstructor& r) {
  ParameterSet all = m.AllParameters();
  all.Append(r.params());
  std::vector<Matrix> out;
  for (const auto& p : all.items()) out.push_back(p.var.value());
  return out;
}

}  // namespace

TEST_CASE("reconstruction loss of uniform logits is ln V per target") {
  const Matrix zero = Matrix::Zero(2, 11);
  const ag::Var loss = ReconstructionLoss(ag::Constant(zero), {{1, 4, 4}, {7}});
  CHECK(loss.scalar() == doctest::Approx(4 * std::log(11.0)).epsilon(1e-14));
  CHECK_THROWS_AS(ReconstructionLoss(ag::Constant(zero), {{1}, {}}), ContractError);
}

TEST_CASE("contrastive loss groups documents by prefix") {
  Matrix h(3, 2);
  h << 1, 0, 1, 0, 0, 1;
  // Rows 0 and 1 share a prefix and have equal self and cross similarity:
  // ln 2 each. Row 2 is alone and adds nothing.
  const ag::Var loss = ContrastiveLoss(ag::Constant(h), {{4}, {4}, {5}});
  CHECK(loss.scalar() == doctest::Approx(2 * std::log(2.0)).epsilon(1e-14));
  Matrix far(2, 2);
  far << 3, 0, 0, 3;
  const double want = 2 * std::log1p(std::exp(-9.0));
  CHECK(ContrastiveLoss(ag::Constant(far), {{}, {}}).scalar() == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("commitment loss with a flat earlier codebook is ln K per earlier position") {
  const Corpus c = SmallCorpus();
  ModelConfig mc = SmallConfig(c, {8, 8});
  SemanticIndexer m(mc);
  m.codebook(1).embeddings.mutable_value().setZero();
  const std::vector<std::vector<int>> docs = {c.document(0).tokens, c.document(1).tokens};
  const EncodedBatch enc = m.Encode(docs);
  const std::vector<int> md = {0, 1};
  const std::vector<std::vector<int>> prefixes = {{3}, {6}};
  const ag::Var dec = m.Decode(enc, md, prefixes);
  CHECK(CommitmentLoss(m, dec, prefixes, 2).scalar() == doctest::Approx(2 * std::log(8.0)).epsilon(1e-12));
  CHECK(CommitmentLoss(m, m.Decode(enc, md, {{}, {}}), {{}, {}}, 1).scalar() == 0.0);
}

TEST_CASE("AdamW first step and decoupled decay") {
  ag::Var w = ag::Parameter(Matrix::Constant(1, 2, 1.0));
  AdamWOptions o;
  o.lr = 0.1;
  o.weight_decay = 0.5;
  o.eps = 1e-8;
  AdamW opt({w}, o);
  Matrix g(1, 2);
  g << 2.0, -0.5;
  w.node()->AccumulateGrad(g);
  opt.Step();
  // Bias-corrected moments equal g and g^2 on the first step.
  const double w0 = 1.0 * (1 - 0.1 * 0.5) - 0.1 * 2.0 / (2.0 + 1e-8);
  const double w1 = 1.0 * (1 - 0.1 * 0.5) + 0.1 * 0.5 / (0.5 + 1e-8);
  CHECK(w.value()(0, 0) == doctest::Approx(w0).epsilon(1e-7));
  CHECK(w.value()(0, 1) == doctest::Approx(w1).epsilon(1e-7));
  CHECK(static_cast<double>(static_cast<float>(w.value()(0, 0))) == w.value()(0, 0));
  CHECK_FALSE(w.node()->HasGrad());
}

TEST_CASE("train config validation and JSON round trip") {
  TrainConfig t = QuickConfig();
  t.Validate(2);
  CHECK(ToJson(TrainConfigFromJson(ToJson(t))) == ToJson(t));
  CHECK_THROWS_AS(t.Validate(3), ValidationError);
  TrainConfig bad = t;
  bad.hint_ratios = {1.0, 0.2};
  CHECK_THROWS_AS(bad.Validate(2), ValidationError);
  bad = t;
  bad.batch_size = 1;
  CHECK_THROWS_AS(bad.Validate(2), ValidationError);
  CHECK_THROWS_AS(TrainConfigFromJson(nlohmann::json{{"hint_ratios", "x"}}), ParseError);
}

TEST_CASE("whole objective gradient matches finite differences") {
  const Corpus c = SmallCorpus();
  ModelConfig mc = SmallConfig(c, {5, 5});
  mc.dim = 8;
  SemanticIndexer m(mc);
  Reconstructor r(mc);
  for (int p = 1; p <= 2; ++p) m.codebook(p).initialized = true;
  std::vector<BatchExample> batch;
  for (size_t i = 0; i < 4; ++i) {
    BatchExample ex;
    ex.doc = &c.document(i);
    ex.mask = SampleHints(*ex.doc, 0.3, 100 + i);
    ex.prefix = {static_cast<int>(i % 2)};
    batch.push_back(ex);
  }
  ObjectiveOptions oo;
  oo.position = 2;
  oo.quantize = QuantizeMode::kSoft;
  auto loss = [&] { return ComputeObjective(m, r, batch, oo).total; };

  ParameterSet all = m.AllParameters();
  all.Append(r.params());
  ag::Backward(loss());
  std::mt19937_64 rng(61);
  int checked = 0;
  double worst = 0.0;
  for (int attempt = 0; attempt < 2000 && checked < 30; ++attempt) {
    const auto& np = all.items()[rng() % all.items().size()];
    ag::Var v = np.var;
    if (!v.node()->HasGrad()) continue;
    const Eigen::Index i = static_cast<Eigen::Index>(rng() % static_cast<uint64_t>(v.value().size()));
    const double analytic = v.grad().data()[i];
    if (std::abs(analytic) < 1e-5) continue;
    const double keep = v.value().data()[i];
    const double step = 1e-5;
    v.mutable_value().data()[i] = keep + step;
    const double up = loss().scalar();
    v.mutable_value().data()[i] = keep - step;
    const double down = loss().scalar();
    v.mutable_value().data()[i] = keep;
    const double numeric = (up - down) / (2 * step);
    worst = std::max(worst, std::abs(analytic - numeric) / std::max(std::abs(analytic), std::abs(numeric)));
    ++checked;
  }
  CHECK(checked >= 20);
  CHECK(worst < 1e-3);
}

TEST_CASE("progressive training assigns valid codes and is deterministic") {
  const Corpus c = SmallCorpus();
  const ModelConfig mc = SmallConfig(c, {4, 3});
  const TrainConfig tc = QuickConfig();

  SemanticIndexer m1(mc);
  Reconstructor r1(mc);
  TrainLog log;
  std::vector<int> stages;
  ProgressOptions po;
  po.on_stage = [&](const TrainState& s) { stages.push_back(s.completed_positions); };
  const TrainState s1 = TrainProgressive(m1, r1, c, tc, {}, &log, po);
  CHECK(stages == std::vector<int>{0, 1, 2});
  CHECK(s1.completed_positions == 2);
  REQUIRE(s1.codes.size() == c.size());
  for (const auto& id : s1.codes) {
    REQUIRE(id.size() == 2);
    CHECK((id[0] >= 0 && id[0] < 4));
    CHECK((id[1] >= 0 && id[1] < 3));
  }
  // 1 recon warm-up epoch, then per position 1 warm-up and 2 main epochs.
  CHECK(log.epochs.size() == 7);
  CHECK(log.positions.size() == 2);
  for (const auto& e : log.epochs) CHECK(std::isfinite(e.mean.total));

  SemanticIndexer m2(mc);
  Reconstructor r2(mc);
  const TrainState s2 = TrainProgressive(m2, r2, c, tc);
  CHECK(s2.codes == s1.codes);
  CHECK(Snapshot(m1, r1) == Snapshot(m2, r2));

  // The frozen first-position codes are the argmax after position 1.
  SemanticIndexer m3(mc);
  Reconstructor r3(mc);
  ProgressOptions stop;
  stop.stop_after_positions = 1;
  const TrainState s3 = TrainProgressive(m3, r3, c, tc, {}, nullptr, stop);
  CHECK(s3.completed_positions == 1);
  std::vector<std::vector<int>> docs;
  for (const auto& d : c.documents()) docs.push_back(d.tokens);
  const auto redecoded = AssignSemanticIds(m3, docs, 1);
  for (size_t i = 0; i < c.size(); ++i) CHECK(redecoded[i][0] == s1.codes[i][0]);

  // Continuing the stopped run reaches the uninterrupted result.
  const TrainState s4 = TrainProgressive(m3, r3, c, tc, s3);
  CHECK(s4.codes == s1.codes);
  CHECK(Snapshot(m3, r3) == Snapshot(m1, r1));

  const IdTable full = FinalizeIds(m1, c, s1, 1);
  std::set<SemanticId> uniq(full.ids().begin(), full.ids().end());
  CHECK(uniq.size() == c.size());
  CHECK(m1.full_id_length() == 3);
  CHECK(m1.suffix_size() == MaxGroupSize(LearnedIdTable(c, s1)));

  const double f1 = ReconstructionMacroF1(m1, r1, c, s1, 0.2, 3);
  CHECK((f1 >= 0.0 && f1 <= 1.0));
}

TEST_CASE("ablation switches remove their terms") {
  const Corpus c = SmallCorpus();
  const ModelConfig mc = SmallConfig(c, {4, 3});
  TrainConfig tc = QuickConfig();
  tc.use_contrastive = false;
  tc.use_commitment = false;
  tc.use_enc_warmup = false;
  tc.use_recon_warmup = false;
  SemanticIndexer m(mc);
  Reconstructor r(mc);
  TrainLog log;
  const TrainState s = TrainProgressive(m, r, c, tc, {}, &log);
  CHECK(s.completed_positions == 2);
  CHECK(log.epochs.size() == 4);  // main phases only
  for (const auto& e : log.epochs) {
    CHECK(e.phase == Phase::kMain);
    CHECK(e.mean.contrastive == 0.0);
    CHECK(e.mean.commitment == 0.0);
  }
}

TEST_CASE("hidden states, assignment and K-means initialization agree") {
  const Corpus c = SmallCorpus();
  const ModelConfig mc = SmallConfig(c, {4, 3});
  SemanticIndexer m(mc);
  TrainConfig tc = QuickConfig();
  TrainState st;
  st.recon_warmed = true;
  st.codes.assign(c.size(), {});
  InitCodebookKMeans(m, c, tc, st, 1);
  CHECK(m.codebook(1).initialized);
  std::vector<SemanticId> empty(c.size());
  const Matrix h = HiddenStates(m, c, empty, 1, 5);
  for (size_t i = 0; i < c.size(); ++i)
    CHECK((h.row(static_cast<Eigen::Index>(i)) - m.HiddenState(c.document(i).tokens, {})).norm() < 1e-10);
  const auto codes = AssignPosition(m, c, empty, 1, 7);
  std::vector<std::vector<int>> docs;
  for (const auto& d : c.documents()) docs.push_back(d.tokens);
  const auto greedy = AssignSemanticIds(m, docs, 1);
  for (size_t i = 0; i < c.size(); ++i) CHECK(codes[i] == greedy[i][0]);
  std::set<int> used(codes.begin(), codes.end());
  CHECK(used.size() >= 2);
  CHECK_THROWS_AS(AssignPosition(m, c, empty, 2), StateError);
}
