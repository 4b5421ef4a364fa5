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
#include <vector>

#include "doctest.h"
#include "semindex/errors.hpp"
#include "semindex/model.hpp"
#include "test_util.hpp"

using namespace semindex;
using ag::Matrix;
using semindex::testing::Project;
using semindex::testing::RandomMatrix;
using semindex::testing::RelError;

namespace {

ModelConfig TinyConfig(std::vector<int> sizes, int dim = 8, int vocab = 20) {
  ModelConfig c;
  c.dim = dim;
  c.heads = 2;
  c.enc_layers = 1;
  c.dec_layers = 1;
  c.codebook_sizes = std::move(sizes);
  c.vocab_size = vocab;
  c.max_doc_len = 16;
  c.init_seed = 3;
  return c;
}

std::vector<int> RandomDoc(std::mt19937_64& rng, int len, int vocab) {
  std::uniform_int_distribution<int> tok(2, vocab - 1);
  std::vector<int> d(static_cast<size_t>(len));
  for (auto& t : d) t = tok(rng);
  return d;
}

void MarkInitialized(SemanticIndexer& m) {
  for (int p = 1; p <= m.full_id_length(); ++p) m.codebook(p).initialized = true;
}

}  // namespace

TEST_CASE("straight-through forward is the argmax row, backward is the soft mixture") {
  std::mt19937_64 rng(21);
  double worst = 0.0;
  for (int draw = 0; draw < 100; ++draw) {
    const Matrix hv = RandomMatrix(1, 8, rng);
    const Matrix ev = RandomMatrix(5, 8, rng);
    const Matrix w = RandomMatrix(1, 8, rng);
    ag::Var h = ag::Parameter(hv);
    ag::Var e = ag::Parameter(ev);
    Quantized q = Quantize(h, e, QuantizeMode::kStraightThrough);
    const CodeDistribution cd = CodeLookup(std::span<const double>(hv.data(), 8), ev);
    REQUIRE(q.codes.size() == 1);
    CHECK(q.codes[0] == cd.chosen);
    CHECK(q.embedding.value() == ev.row(cd.chosen));  // bitwise
    ag::Backward(Project(q.embedding, w));
    const Matrix gh = h.grad();
    const Matrix ge = e.grad();

    auto soft = [&](const Matrix& hh, const Matrix& ee) {
      return Project(Quantize(ag::Constant(hh), ag::Constant(ee), QuantizeMode::kSoft).embedding, w).scalar();
    };
    const double step = 1e-6;
    for (int i = 0; i < 8; ++i) {
      Matrix up = hv, down = hv;
      up(0, i) += step;
      down(0, i) -= step;
      worst = std::max(worst, RelError(gh(0, i), (soft(up, ev) - soft(down, ev)) / (2 * step)));
    }
    for (Eigen::Index i = 0; i < ev.size(); ++i) {
      Matrix up = ev, down = ev;
      up.data()[i] += step;
      down.data()[i] -= step;
      worst = std::max(worst, RelError(ge.data()[i], (soft(hv, up) - soft(hv, down)) / (2 * step)));
    }
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("soft quantization is the probability-weighted mixture") {
  std::mt19937_64 rng(22);
  const Matrix h = RandomMatrix(3, 4, rng);
  const Matrix e = RandomMatrix(6, 4, rng);
  const Quantized q = Quantize(ag::Constant(h), ag::Constant(e), QuantizeMode::kSoft);
  for (int r = 0; r < 3; ++r) {
    const CodeDistribution cd = CodeLookup(std::span<const double>(h.row(r).data(), 4), e);
    Eigen::RowVectorXd mix = Eigen::RowVectorXd::Zero(4);
    for (int j = 0; j < 6; ++j) mix += cd.probs[static_cast<size_t>(j)] * e.row(j);
    CHECK((q.embedding.value().row(r) - mix).norm() < 1e-12);
    CHECK(q.codes[static_cast<size_t>(r)] == cd.chosen);
  }
}

TEST_CASE("code lookup breaks ties toward the lowest index") {
  Matrix e(3, 2);
  e << 1, 0, 0, 1, 1, 0;
  const std::vector<double> h = {1.0, 1.0};
  const CodeDistribution cd = CodeLookup(h, e);
  CHECK(cd.chosen == 0);
  CHECK(cd.probs[0] == doctest::Approx(1.0 / 3.0));
  const std::vector<double> nan = {std::nan(""), 0.0};
  CHECK_THROWS_AS(CodeLookup(nan, e), NumericError);
}

TEST_CASE("model config validation and JSON round trip") {
  ModelConfig c = TinyConfig({4, 4});
  c.Validate();
  CHECK(ModelConfigFromJson(ToJson(c)).codebook_sizes == c.codebook_sizes);
  CHECK(ToJson(ModelConfigFromJson(ToJson(c))) == ToJson(c));
  ModelConfig bad = c;
  bad.heads = 3;
  CHECK_THROWS_AS(bad.Validate(), ValidationError);
  bad = c;
  bad.codebook_sizes = {};
  CHECK_THROWS_AS(bad.Validate(), ValidationError);
  bad = c;
  bad.codebook_sizes = {4, 0};
  CHECK_THROWS_AS(bad.Validate(), ValidationError);
}

TEST_CASE("parameters are float representable after construction") {
  SemanticIndexer m(TinyConfig({4, 4}));
  Reconstructor r(TinyConfig({4, 4}));
  ParameterSet all = m.AllParameters();
  all.Append(r.params());
  for (const auto& p : all.items()) {
    const Matrix& v = p.var.value();
    for (Eigen::Index i = 0; i < v.size(); ++i)
      CHECK(static_cast<double>(static_cast<float>(v.data()[i])) == v.data()[i]);
  }
}

TEST_CASE("encoding is independent of batch composition") {
  std::mt19937_64 rng(23);
  SemanticIndexer m(TinyConfig({4, 4}));
  const std::vector<std::vector<int>> docs = {RandomDoc(rng, 5, 20), RandomDoc(rng, 9, 20)};
  const EncodedBatch both = m.Encode(docs);
  const std::vector<std::vector<int>> second = {docs[1]};
  const EncodedBatch alone = m.Encode(second);
  const auto r = both.doc_rows[1];
  CHECK((both.memory.value().middleRows(r.begin, r.end - r.begin) - alone.memory.value()).norm() < 1e-12);
}

TEST_CASE("decoder rows equal single-document hidden states for every prefix") {
  std::mt19937_64 rng(24);
  SemanticIndexer m(TinyConfig({3, 4, 5}));
  const std::vector<std::vector<int>> docs = {RandomDoc(rng, 6, 20), RandomDoc(rng, 4, 20)};
  const EncodedBatch enc = m.Encode(docs);
  const std::vector<int> memory_doc = {0, 1, 0};
  const std::vector<std::vector<int>> prefixes = {{2, 1}, {0, 3}, {1, 0}};
  const Matrix out = m.Decode(enc, memory_doc, prefixes).value();
  REQUIRE(out.rows() == 9);
  for (int s = 0; s < 3; ++s) {
    const auto& doc = docs[static_cast<size_t>(memory_doc[static_cast<size_t>(s)])];
    for (int j = 0; j <= 2; ++j) {
      const std::vector<int> prefix(prefixes[static_cast<size_t>(s)].begin(),
                                    prefixes[static_cast<size_t>(s)].begin() + j);
      const ag::RowVector h = m.HiddenState(doc, prefix);
      CHECK((out.row(s * 3 + j) - h).norm() < 1e-10);
    }
  }
}

TEST_CASE("greedy assignment equals step-by-step argmax") {
  std::mt19937_64 rng(25);
  SemanticIndexer m(TinyConfig({3, 3}));
  MarkInitialized(m);
  std::vector<std::vector<int>> docs;
  for (int i = 0; i < 12; ++i) docs.push_back(RandomDoc(rng, 3 + i % 5, 20));
  const auto batched = AssignSemanticIds(m, docs, 2, 5);
  for (size_t i = 0; i < docs.size(); ++i) {
    // Brute force over the 3 first-position codes: only the argmax prefix
    // is ever extended.
    const ag::RowVector h1 = m.HiddenState(docs[i], {});
    int best1 = 0;
    for (int c = 1; c < 3; ++c)
      if (h1.dot(m.codebook(1).embeddings.value().row(c)) >
          h1.dot(m.codebook(1).embeddings.value().row(best1)))
        best1 = c;
    const std::vector<int> prefix = {best1};
    const ag::RowVector h2 = m.HiddenState(docs[i], prefix);
    int best2 = 0;
    for (int c = 1; c < 3; ++c)
      if (h2.dot(m.codebook(2).embeddings.value().row(c)) >
          h2.dot(m.codebook(2).embeddings.value().row(best2)))
        best2 = c;
    CHECK(batched[i] == std::vector<int>{best1, best2});
    CHECK(AssignSemanticId(m, docs[i], 2) == batched[i]);
  }
}

TEST_CASE("assignment requires initialized codebooks") {
  SemanticIndexer m(TinyConfig({3, 3}));
  m.codebook(1).initialized = true;
  const std::vector<int> doc = {2, 3, 4};
  CHECK(AssignSemanticId(m, doc, 1).size() == 1);
  CHECK_THROWS_AS(AssignSemanticId(m, doc, 2), StateError);
  CHECK_THROWS_AS(AssignSemanticId(m, doc, 3), ContractError);
}

TEST_CASE("suffix codebook extends the full ID length") {
  SemanticIndexer m(TinyConfig({3, 3}));
  CHECK(m.full_id_length() == 2);
  m.EnsureSuffixCodebook(7, 1);
  CHECK(m.full_id_length() == 3);
  CHECK(m.id_length() == 2);
  CHECK(m.suffix_size() == 7);
  CHECK(m.codebook_size(3) == 7);
  m.EnsureSuffixCodebook(2, 1);
  CHECK(m.codebook_size(3) == 2);
  CHECK(m.full_id_length() == 3);
}

namespace {

// Plain-loop forward of a one-layer, one-head reconstructor.
struct Oracle {
  const Reconstructor& r;
  Matrix P(const std::string& name) const {
    const NamedParameter* p = r.params().Find(name);
    REQUIRE(p != nullptr);
    return p->var.value();
  }
  static Eigen::RowVectorXd Ln(const Eigen::RowVectorXd& x, const Matrix& g, const Matrix& b) {
    double mean = 0.0;
    for (Eigen::Index i = 0; i < x.size(); ++i) mean += x(i);
    mean /= static_cast<double>(x.size());
    double var = 0.0;
    for (Eigen::Index i = 0; i < x.size(); ++i) var += (x(i) - mean) * (x(i) - mean);
    var /= static_cast<double>(x.size());
    Eigen::RowVectorXd y(x.size());
    for (Eigen::Index i = 0; i < x.size(); ++i)
      y(i) = (x(i) - mean) / std::sqrt(var + 1e-5) * g(0, i) + b(0, i);
    return y;
  }
  static Eigen::RowVectorXd Lin(const Eigen::RowVectorXd& x, const Matrix& w, const Matrix& b) {
    Eigen::RowVectorXd y(w.cols());
    for (Eigen::Index j = 0; j < w.cols(); ++j) {
      double s = b(0, j);
      for (Eigen::Index i = 0; i < x.size(); ++i) s += x(i) * w(i, j);
      y(j) = s;
    }
    return y;
  }
  static double Gelu(double v) {
    return 0.5 * v * (1.0 + std::tanh(std::sqrt(2.0 / M_PI) * (v + 0.044715 * v * v * v)));
  }
  Eigen::RowVectorXd Logits(const Matrix& queries, const std::vector<HintToken>& hints) const {
    const std::string l = "recon.layer0.";
    const Matrix tok = P("recon.tok_emb"), pos = P("recon.pos_emb");
    std::vector<Eigen::RowVectorXd> keys;
    for (const auto& h : hints) keys.push_back(tok.row(h.token) + pos.row(h.position));
    Eigen::RowVectorXd pooled = Eigen::RowVectorXd::Zero(queries.cols());
    for (Eigen::Index qi = 0; qi < queries.rows(); ++qi) {
      Eigen::RowVectorXd x = queries.row(qi);
      const auto qn = Ln(x, P(l + "ln_q.gain"), P(l + "ln_q.bias"));
      const auto qp = Lin(qn, P(l + "attn.q.weight"), P(l + "attn.q.bias"));
      std::vector<double> score;
      std::vector<Eigen::RowVectorXd> vals;
      double mx = -1e300;
      for (const auto& k : keys) {
        const auto kn = Ln(k, P(l + "ln_kv.gain"), P(l + "ln_kv.bias"));
        const auto kp = Lin(kn, P(l + "attn.k.weight"), P(l + "attn.k.bias"));
        vals.push_back(Lin(kn, P(l + "attn.v.weight"), P(l + "attn.v.bias")));
        score.push_back(qp.dot(kp) / std::sqrt(static_cast<double>(x.size())));
        mx = std::max(mx, score.back());
      }
      double z = 0.0;
      for (double& s : score) z += (s = std::exp(s - mx));
      Eigen::RowVectorXd att = Eigen::RowVectorXd::Zero(x.size());
      for (size_t k = 0; k < vals.size(); ++k) att += score[k] / z * vals[k];
      x += Lin(att, P(l + "attn.o.weight"), P(l + "attn.o.bias"));
      Eigen::RowVectorXd up = Lin(Ln(x, P(l + "ln2.gain"), P(l + "ln2.bias")),
                                  P(l + "ffn.up.weight"), P(l + "ffn.up.bias"));
      for (Eigen::Index i = 0; i < up.size(); ++i) up(i) = Gelu(up(i));
      x += Lin(up, P(l + "ffn.down.weight"), P(l + "ffn.down.bias"));
      pooled += Ln(x, P("recon.final_ln.gain"), P("recon.final_ln.bias"));
    }
    Eigen::RowVectorXd logits(tok.rows());
    for (Eigen::Index w = 0; w < tok.rows(); ++w) logits(w) = pooled.dot(tok.row(w));
    return logits;
  }
};

}  // namespace

TEST_CASE("reconstructor matches a hand-unrolled forward at D=2") {
  ModelConfig c = TinyConfig({3}, 2, 9);
  c.heads = 1;
  Reconstructor r(c);
  std::mt19937_64 rng(26);
  for (const auto& p : r.params().items()) {
    ag::Var v = p.var;
    v.mutable_value() = RandomMatrix(v.rows(), v.cols(), rng, 0.7);
  }
  const Matrix queries = RandomMatrix(2, 2, rng);
  const std::vector<HintToken> hints = {{3, 0}, {5, 4}, {2, 7}};
  const ag::RowVector got = r.ReconstructLogits(queries, hints);
  const Eigen::RowVectorXd want = Oracle{r}.Logits(queries, hints);
  CHECK((got - want).cwiseAbs().maxCoeff() < 1e-12);

  // Empty query set falls back to the learned code-free query.
  const Matrix fb = r.params().Find("recon.fallback_query")->var.value();
  CHECK((r.ReconstructLogits(Matrix(0, 2), hints) - Oracle{r}.Logits(fb, hints)).cwiseAbs().maxCoeff() < 1e-12);

  const std::vector<int> qd = {0};
  CHECK_THROWS_AS(r.PooledLogits(ag::Constant(queries.topRows(1)), qd, {{}}), ContractError);
}
